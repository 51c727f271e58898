#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sbc/catalog.hpp"
#include "sbc/kdtree.hpp"

namespace sbc {

// dbranch / dbranch_ensemble expose their positive leaves as boxes and run
// against the index; dtree / rforest are classified by a full scan.
enum class ModelKind { kDecisionBranch, kDecisionBranchEnsemble, kDecisionTree, kRandomForest };

std::string_view to_string(ModelKind kind);
// Accepts "dbranch", "dbranch_ensemble" (or "dbranch-ensemble"), "dtree", "rforest".
std::optional<ModelKind> parse_model_kind(std::string_view name);
bool supports_boxes(ModelKind kind);

enum class Label : std::uint8_t { kNegative = 0, kPositive = 1 };

class LabeledSet {
 public:
  explicit LabeledSet(std::size_t dim) : dim_(dim) {}

  void add(std::span<const std::uint8_t> code, Label label, double weight = 1.0);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return labels_.size(); }
  std::span<const std::uint8_t> code(std::size_t i) const { return {codes_.data() + i * dim_, dim_}; }
  Label label(std::size_t i) const { return labels_[i]; }
  double weight(std::size_t i) const { return weights_[i]; }
  std::size_t count(Label label) const;

  // Throws ValidationError unless there is at least one positive and one negative.
  void require_both_classes() const;

 private:
  std::size_t dim_;
  std::vector<std::uint8_t> codes_;
  std::vector<Label> labels_;
  std::vector<double> weights_;
};

struct TreeParams {
  std::size_t max_depth = 12;
  std::size_t min_samples_leaf = 1;
  std::size_t min_samples_split = 2;
  std::size_t forest_members = 25;  // random forest only
  std::size_t max_features = 0;     // random forest only; 0 = floor(sqrt(dim))
};

inline constexpr std::size_t kEnsembleMembers = 25;

struct Prediction {
  Label label = Label::kNegative;
  double score = 0.0;  // weighted positive fraction
};

// Binary tree over u8 codes: a row goes left when code[dim] <= threshold.
class DecisionTree {
 public:
  static constexpr std::uint32_t kLeaf = 0xffffffffu;

  struct Node {
    std::uint32_t left = kLeaf;
    std::uint32_t right = kLeaf;
    std::uint16_t dim = 0;
    std::uint8_t threshold = 0;
    bool positive = false;  // leaves only
    double score = 0.0;     // leaves only

    bool is_leaf() const { return left == kLeaf; }
  };

  struct PositiveLeaf {
    Box box;
    double score = 0.0;
  };

  explicit DecisionTree(std::vector<Node> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& leaf_for(std::span<const std::uint8_t> code) const;
  Prediction predict(std::span<const std::uint8_t> code) const;
  std::size_t depth() const;

  // One box per positive leaf, read off the root-to-leaf path. Boxes of one
  // tree are pairwise disjoint.
  std::vector<PositiveLeaf> positive_leaves(std::size_t dim) const;

 private:
  std::vector<Node> nodes_;
};

class BranchModel {
 public:
  BranchModel(ModelKind kind, std::size_t dim, std::vector<DecisionTree> trees);

  ModelKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

  // Single tree: its leaf. Several: strict majority vote, score = mean member score.
  Prediction predict(std::span<const std::uint8_t> code) const;

  // Canonical JSON description of every tree.
  std::string serialize() const;

 private:
  ModelKind kind_;
  std::size_t dim_;
  std::vector<DecisionTree> trees_;
};

// CART growth by weighted Gini impurity. Ties between candidate splits go to the
// lowest dimension, then the lowest threshold. Ensemble and forest members see
// every positive once plus a bootstrap resample of the negatives; forest nodes
// consider a random feature subset. Deterministic for a fixed seed. Throws ValidationError if the
// set lacks a class.
BranchModel train_model(const LabeledSet& data, ModelKind kind, std::uint64_t seed,
                        const TreeParams& params = {});

// Boxes of every positive leaf over all members. Throws UnsupportedOperation for
// scan-only kinds.
std::vector<Box> extract_positive_boxes(const BranchModel& model);

struct ScoredRow {
  RowIndex row = 0;
  double score = 0.0;

  friend bool operator==(const ScoredRow&, const ScoredRow&) = default;
};

struct ClassifyOutcome {
  std::vector<ScoredRow> positives;  // descending score, then ascending row
  std::size_t candidates = 0;        // rows evaluated (index: union of box hits)
  double elapsed_ms = 0.0;
  QueryStats index_stats;
};

// Index-accelerated classification of the whole catalog. Candidates are the union
// of all members' positive-box range queries; for ensembles each candidate is
// re-scored by predict(). Returns exactly what scan_positives returns.
ClassifyOutcome search_positives(const BranchModel& model, const KdTree& tree,
                                 const QuantizedCatalog& catalog);

// predict() on every catalog row.
ClassifyOutcome scan_positives(const BranchModel& model, const QuantizedCatalog& catalog);

}  // namespace sbc
