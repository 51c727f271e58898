#include "sbc/models.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "sbc/error.hpp"

namespace sbc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// A training sample as seen by one tree: bootstrap multiplicity folds into
// both the weight and the sample count.
struct Sample {
  std::uint32_t index;
  std::uint32_t count;
  double weight;
};

class TreeBuilder {
 public:
  TreeBuilder(const LabeledSet& data, const TreeParams& params, std::size_t max_features,
              std::mt19937_64* rng)
      : data_(data), params_(params), max_features_(max_features), rng_(rng) {
    features_.resize(data.dim());
    std::iota(features_.begin(), features_.end(), std::size_t{0});
  }

  DecisionTree build(std::vector<Sample> samples) {
    nodes_.clear();
    grow(samples, 0);
    return DecisionTree(std::move(nodes_));
  }

 private:
  struct Split {
    std::size_t dim = 0;
    std::uint8_t threshold = 0;
    double impurity = 0.0;
  };

  static double gini(double pos, double neg) {
    const double total = pos + neg;
    return total > 0.0 ? 2.0 * pos * neg / total : 0.0;
  }

  std::uint32_t make_leaf(double pos, double neg) {
    DecisionTree::Node leaf;
    leaf.positive = pos > neg;
    leaf.score = pos + neg > 0.0 ? pos / (pos + neg) : 0.0;
    nodes_.push_back(leaf);
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }

  // Best split of `samples` on `dim`, if any valid one beats `best`.
  void scan_dimension(std::span<const Sample> samples, std::size_t dim,
                      std::optional<Split>& best) const {
    std::array<double, 256> pos{};
    std::array<double, 256> neg{};
    std::array<std::size_t, 256> cnt{};
    for (const Sample& s : samples) {
      const std::uint8_t v = data_.code(s.index)[dim];
      (data_.label(s.index) == Label::kPositive ? pos : neg)[v] += s.weight;
      cnt[v] += s.count;
    }
    double total_pos = 0.0;
    double total_neg = 0.0;
    std::size_t total_cnt = 0;
    for (std::size_t v = 0; v < 256; ++v) {
      total_pos += pos[v];
      total_neg += neg[v];
      total_cnt += cnt[v];
    }

    double left_pos = 0.0;
    double left_neg = 0.0;
    std::size_t left_cnt = 0;
    int prev = -1;  // last occupied code value on the left
    for (int v = 0; v < 256; ++v) {
      if (cnt[v] == 0) continue;
      if (prev >= 0 && left_cnt >= params_.min_samples_leaf &&
          total_cnt - left_cnt >= params_.min_samples_leaf) {
        const double impurity =
            gini(left_pos, left_neg) + gini(total_pos - left_pos, total_neg - left_neg);
        if (!best || impurity < best->impurity) {
          best = Split{dim, static_cast<std::uint8_t>((prev + v) / 2), impurity};
        }
      }
      left_pos += pos[v];
      left_neg += neg[v];
      left_cnt += cnt[v];
      prev = v;
    }
  }

  std::uint32_t grow(std::vector<Sample>& samples, std::size_t depth) {
    double pos = 0.0;
    double neg = 0.0;
    std::size_t count = 0;
    for (const Sample& s : samples) {
      (data_.label(s.index) == Label::kPositive ? pos : neg) += s.weight;
      count += s.count;
    }
    const double parent = gini(pos, neg);
    if (depth >= params_.max_depth || count < params_.min_samples_split || parent <= 0.0) {
      return make_leaf(pos, neg);
    }

    std::optional<Split> best;
    if (max_features_ >= features_.size()) {
      for (std::size_t dim = 0; dim < features_.size(); ++dim) scan_dimension(samples, dim, best);
    } else {
      // Draw a random feature order; keep looking past max_features until a
      // valid split exists. The candidates are then scanned in ascending
      // dimension order so ties resolve like the full-feature case.
      std::shuffle(features_.begin(), features_.end(), *rng_);
      std::size_t used = max_features_;
      for (;;) {
        std::vector<std::size_t> subset(features_.begin(),
                                        features_.begin() + static_cast<std::ptrdiff_t>(used));
        std::sort(subset.begin(), subset.end());
        for (std::size_t dim : subset) scan_dimension(samples, dim, best);
        if (best || used == features_.size()) break;
        used = features_.size();
        best.reset();
      }
    }
    // Require a strict impurity decrease; otherwise the node stays a leaf.
    if (!best || !(best->impurity < parent * (1.0 - 1e-12))) return make_leaf(pos, neg);

    std::vector<Sample> left;
    std::vector<Sample> right;
    for (const Sample& s : samples) {
      (data_.code(s.index)[best->dim] <= best->threshold ? left : right).push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();

    const auto index = static_cast<std::uint32_t>(nodes_.size());
    DecisionTree::Node node;
    node.dim = static_cast<std::uint16_t>(best->dim);
    node.threshold = best->threshold;
    nodes_.push_back(node);
    const std::uint32_t l = grow(left, depth + 1);
    const std::uint32_t r = grow(right, depth + 1);
    nodes_[index].left = l;
    nodes_[index].right = r;
    return index;
  }

  const LabeledSet& data_;
  const TreeParams& params_;
  std::size_t max_features_;
  std::mt19937_64* rng_;
  std::vector<std::size_t> features_;
  std::vector<DecisionTree::Node> nodes_;
};

std::vector<Sample> all_samples(const LabeledSet& data) {
  std::vector<Sample> samples(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    samples[i] = {static_cast<std::uint32_t>(i), 1, data.weight(i)};
  }
  return samples;
}

// Keeps every positive once and resamples negatives with replacement at their
// original size. Positives are the scarce class; dropping one from a member
// leaves that member with no region around it.
std::vector<Sample> negative_bootstrap(const LabeledSet& data, std::mt19937_64& rng) {
  std::vector<std::uint32_t> negatives;
  std::vector<std::uint32_t> multiplicity(data.size(), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.label(i) == Label::kPositive) {
      multiplicity[i] = 1;
    } else {
      negatives.push_back(static_cast<std::uint32_t>(i));
    }
  }
  if (!negatives.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, negatives.size() - 1);
    for (std::size_t k = 0; k < negatives.size(); ++k) ++multiplicity[negatives[pick(rng)]];
  }
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (multiplicity[i] > 0) {
      samples.push_back({static_cast<std::uint32_t>(i), multiplicity[i],
                         data.weight(i) * multiplicity[i]});
    }
  }
  return samples;
}

void sort_ranked(std::vector<ScoredRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const ScoredRow& a, const ScoredRow& b) {
    return a.score != b.score ? a.score > b.score : a.row < b.row;
  });
}

double elapsed_ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kDecisionBranch:
      return "dbranch";
    case ModelKind::kDecisionBranchEnsemble:
      return "dbranch_ensemble";
    case ModelKind::kDecisionTree:
      return "dtree";
    case ModelKind::kRandomForest:
      return "rforest";
  }
  return "unknown";
}

std::optional<ModelKind> parse_model_kind(std::string_view name) {
  if (name == "dbranch") return ModelKind::kDecisionBranch;
  if (name == "dbranch_ensemble" || name == "dbranch-ensemble") {
    return ModelKind::kDecisionBranchEnsemble;
  }
  if (name == "dtree") return ModelKind::kDecisionTree;
  if (name == "rforest") return ModelKind::kRandomForest;
  return std::nullopt;
}

bool supports_boxes(ModelKind kind) {
  return kind == ModelKind::kDecisionBranch || kind == ModelKind::kDecisionBranchEnsemble;
}

void LabeledSet::add(std::span<const std::uint8_t> code, Label label, double weight) {
  if (code.size() != dim_) {
    throw InvalidArgument("labeled code has dimension " + std::to_string(code.size()) +
                          ", expected " + std::to_string(dim_));
  }
  if (!std::isfinite(weight) || !(weight > 0.0)) {
    throw InvalidArgument("sample weight must be finite and > 0");
  }
  codes_.insert(codes_.end(), code.begin(), code.end());
  labels_.push_back(label);
  weights_.push_back(weight);
}

std::size_t LabeledSet::count(Label label) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

void LabeledSet::require_both_classes() const {
  if (count(Label::kPositive) == 0) {
    throw ValidationError("label at least one positive example before training");
  }
  if (count(Label::kNegative) == 0) {
    throw ValidationError("label at least one negative example before training");
  }
}

const DecisionTree::Node& DecisionTree::leaf_for(std::span<const std::uint8_t> code) const {
  const Node* node = &nodes_.front();
  while (!node->is_leaf()) {
    node = &nodes_[code[node->dim] <= node->threshold ? node->left : node->right];
  }
  return *node;
}

Prediction DecisionTree::predict(std::span<const std::uint8_t> code) const {
  const Node& leaf = leaf_for(code);
  return {leaf.positive ? Label::kPositive : Label::kNegative, leaf.score};
}

std::size_t DecisionTree::depth() const {
  std::size_t deepest = 0;
  std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    const auto [index, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (!nodes_[index].is_leaf()) {
      stack.emplace_back(nodes_[index].left, d + 1);
      stack.emplace_back(nodes_[index].right, d + 1);
    }
  }
  return deepest;
}

std::vector<DecisionTree::PositiveLeaf> DecisionTree::positive_leaves(std::size_t dim) const {
  std::vector<PositiveLeaf> out;
  std::vector<std::pair<std::uint32_t, Box>> stack;
  stack.emplace_back(0, Box::unbounded(dim));
  while (!stack.empty()) {
    auto [index, box] = std::move(stack.back());
    stack.pop_back();
    const Node& node = nodes_[index];
    if (node.is_leaf()) {
      if (node.positive) out.push_back({std::move(box), node.score});
      continue;
    }
    Box right = box;
    box.upper[node.dim] = std::min(box.upper[node.dim], node.threshold);
    right.lower[node.dim] =
        std::max(right.lower[node.dim], static_cast<std::uint8_t>(node.threshold + 1));
    stack.emplace_back(node.right, std::move(right));
    stack.emplace_back(node.left, std::move(box));
  }
  return out;
}

BranchModel::BranchModel(ModelKind kind, std::size_t dim, std::vector<DecisionTree> trees)
    : kind_(kind), dim_(dim), trees_(std::move(trees)) {
  if (trees_.empty()) throw InvalidArgument("a model needs at least one tree");
}

Prediction BranchModel::predict(std::span<const std::uint8_t> code) const {
  if (trees_.size() == 1) return trees_.front().predict(code);
  std::size_t votes = 0;
  double score = 0.0;
  for (const auto& tree : trees_) {
    const auto& leaf = tree.leaf_for(code);
    votes += leaf.positive ? 1 : 0;
    score += leaf.score;
  }
  return {2 * votes > trees_.size() ? Label::kPositive : Label::kNegative,
          score / static_cast<double>(trees_.size())};
}

std::string BranchModel::serialize() const {
  nlohmann::json j;
  j["kind"] = to_string(kind_);
  j["dim"] = dim_;
  j["trees"] = nlohmann::json::array();
  for (const auto& tree : trees_) {
    auto nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes()) {
      if (n.is_leaf()) {
        nodes.push_back({{"positive", n.positive}, {"score", n.score}});
      } else {
        nodes.push_back(
            {{"dim", n.dim}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
    }
    j["trees"].push_back(std::move(nodes));
  }
  return j.dump();
}

BranchModel train_model(const LabeledSet& data, ModelKind kind, std::uint64_t seed,
                        const TreeParams& params) {
  data.require_both_classes();
  if (params.max_depth == 0 || params.min_samples_leaf == 0) {
    throw InvalidArgument("max_depth and min_samples_leaf must be >= 1");
  }
  const std::size_t dim = data.dim();
  std::vector<DecisionTree> trees;

  switch (kind) {
    case ModelKind::kDecisionBranch:
    case ModelKind::kDecisionTree: {
      TreeBuilder builder(data, params, dim, nullptr);
      trees.push_back(builder.build(all_samples(data)));
      break;
    }
    case ModelKind::kDecisionBranchEnsemble:
    case ModelKind::kRandomForest: {
      const bool forest = kind == ModelKind::kRandomForest;
      const std::size_t members = forest ? params.forest_members : kEnsembleMembers;
      if (members == 0) throw InvalidArgument("forest needs at least one member");
      std::size_t max_features = dim;
      if (forest) {
        max_features = params.max_features != 0
                           ? std::min(params.max_features, dim)
                           : std::max<std::size_t>(
                                 1, static_cast<std::size_t>(std::sqrt(static_cast<double>(dim))));
      }
      for (std::size_t m = 0; m < members; ++m) {
        std::mt19937_64 rng(splitmix64(seed + m));
        auto samples = negative_bootstrap(data, rng);
        TreeBuilder builder(data, params, max_features, &rng);
        trees.push_back(builder.build(std::move(samples)));
      }
      break;
    }
  }
  return BranchModel(kind, dim, std::move(trees));
}

std::vector<Box> extract_positive_boxes(const BranchModel& model) {
  if (!supports_boxes(model.kind())) {
    throw UnsupportedOperation(std::string(to_string(model.kind())) +
                               " models are scan-only and have no positive boxes");
  }
  std::vector<Box> boxes;
  for (const auto& tree : model.trees()) {
    for (auto& leaf : tree.positive_leaves(model.dim())) boxes.push_back(std::move(leaf.box));
  }
  return boxes;
}

ClassifyOutcome search_positives(const BranchModel& model, const KdTree& tree,
                                 const QuantizedCatalog& catalog) {
  if (!supports_boxes(model.kind())) {
    throw UnsupportedOperation(std::string(to_string(model.kind())) +
                               " models are scan-only; use scan_positives");
  }
  if (tree.size() != catalog.size() || tree.dim() != catalog.dim() ||
      model.dim() != catalog.dim()) {
    throw InvalidArgument("model, index and catalog disagree on shape");
  }
  const auto start = std::chrono::steady_clock::now();
  ClassifyOutcome outcome;

  if (model.trees().size() == 1) {
    // Leaves of one tree are disjoint, so every hit is a distinct positive row.
    for (const auto& leaf : model.trees().front().positive_leaves(model.dim())) {
      const std::size_t before = outcome.positives.size();
      std::vector<RowIndex> hits;
      tree.collect_range(leaf.box, hits, &outcome.index_stats);
      outcome.positives.reserve(before + hits.size());
      for (RowIndex row : hits) outcome.positives.push_back({row, leaf.score});
    }
    outcome.candidates = outcome.positives.size();
  } else {
    // Each member's boxes are disjoint, so the number of times a row is hit
    // equals the number of members voting positive for it.
    std::vector<std::uint16_t> votes(catalog.size(), 0);
    std::vector<RowIndex> touched;
    std::vector<RowIndex> hits;
    for (const auto& member : model.trees()) {
      for (const auto& leaf : member.positive_leaves(model.dim())) {
        hits.clear();
        tree.collect_range(leaf.box, hits, &outcome.index_stats);
        for (RowIndex row : hits) {
          if (votes[row]++ == 0) touched.push_back(row);
        }
      }
    }
    const std::size_t members = model.trees().size();
    outcome.candidates = touched.size();
    for (RowIndex row : touched) {
      if (2 * std::size_t{votes[row]} > members) {
        outcome.positives.push_back({row, model.predict(catalog.code(row)).score});
      }
    }
  }
  sort_ranked(outcome.positives);
  outcome.elapsed_ms = elapsed_ms_since(start);
  return outcome;
}

ClassifyOutcome scan_positives(const BranchModel& model, const QuantizedCatalog& catalog) {
  if (model.dim() != catalog.dim()) throw InvalidArgument("model and catalog disagree on shape");
  const auto start = std::chrono::steady_clock::now();
  ClassifyOutcome outcome;
  outcome.candidates = catalog.size();
  for (std::size_t row = 0; row < catalog.size(); ++row) {
    const auto p = model.predict(catalog.code(row));
    if (p.label == Label::kPositive) {
      outcome.positives.push_back({static_cast<RowIndex>(row), p.score});
    }
  }
  sort_ranked(outcome.positives);
  outcome.elapsed_ms = elapsed_ms_since(start);
  return outcome;
}

}  // namespace sbc
