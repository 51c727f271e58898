#include "sbc/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "sbc/error.hpp"

namespace sbc {

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

Dataset::Dataset(std::string name, QuantizedCatalog catalog, KdTree index, HeadParams head,
                 std::filesystem::path base_dir)
    : name_(std::move(name)),
      catalog_(std::move(catalog)),
      index_(std::move(index)),
      head_(std::move(head)),
      quantizer_(catalog_.params()),
      base_dir_(std::move(base_dir)) {
  if (index_.size() != catalog_.size() || index_.dim() != catalog_.dim()) {
    throw InvalidArgument("dataset '" + name_ + "': index shape does not match the catalog");
  }
  if (head_.output_dim() != catalog_.dim()) {
    throw InvalidArgument("dataset '" + name_ + "': head outputs " +
                          std::to_string(head_.output_dim()) + " dims, catalog has " +
                          std::to_string(catalog_.dim()));
  }
}

Dataset Dataset::load(std::string name, const std::filesystem::path& catalog_path,
                      const std::filesystem::path& index_path,
                      const std::filesystem::path& head_path) {
  auto catalog = read_catalog(catalog_path);
  auto index = KdTree::read(index_path, catalog);
  auto head = read_head(head_path);
  return Dataset(std::move(name), std::move(catalog), std::move(index), std::move(head),
                 catalog_path.parent_path());
}

InitialSearchResult initial_search(const Dataset& dataset, std::span<const float> query,
                                   std::size_t k, std::size_t max_leaves) {
  if (query.size() != dataset.head().input_dim()) {
    throw InvalidArgument("query embedding has " + std::to_string(query.size()) +
                          " dimensions, expected " + std::to_string(dataset.head().input_dim()));
  }
  if (k == 0) throw InvalidArgument("k must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const auto embedded = forward(dataset.head(), query);
  const auto code = dataset.quantizer().encode(embedded);
  InitialSearchResult result;
  result.hits = dataset.index().knn(code, k, KnnMode::approximate(max_leaves), &result.stats);
  result.query_ms = ms_since(start);
  return result;
}

NegativeSample sample_negatives(std::size_t rows, std::span<const RowIndex> exclude,
                                std::size_t count, std::uint64_t seed) {
  std::vector<bool> excluded(rows, false);
  for (RowIndex r : exclude) {
    if (r < rows) excluded[r] = true;
  }
  std::vector<RowIndex> eligible;
  eligible.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!excluded[r]) eligible.push_back(static_cast<RowIndex>(r));
  }
  NegativeSample sample;
  sample.requested = count;
  sample.clamped = count > eligible.size();
  const std::size_t take = std::min(count, eligible.size());
  // Partial Fisher-Yates: the first `take` slots become the sample.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  eligible.resize(take);
  sample.rows = std::move(eligible);
  return sample;
}

void FinetuneParams::validate() const {
  if (!std::isfinite(negative_weight) || !(negative_weight > 0.0)) {
    throw InvalidArgument("negative_weight must be a finite number > 0");
  }
  if (max_results == 0) throw InvalidArgument("max_results must be >= 1");
}

void Session::add_labels(const Dataset& dataset,
                         std::span<const std::pair<std::uint64_t, Label>> labels) {
  for (const auto& [id, label] : labels) {
    if (!dataset.catalog().find_row(id)) {
      throw InvalidArgument("unknown record id " + std::to_string(id) + " in dataset '" +
                            dataset.name() + "'");
    }
  }
  for (const auto& [id, label] : labels) labels_[id] = label;
}

FinetuneResult Session::finetune(const Dataset& dataset, const FinetuneParams& params) {
  params.validate();
  const auto& catalog = dataset.catalog();

  std::vector<RowIndex> positives;
  std::vector<RowIndex> negatives;
  for (const auto& [id, label] : labels_) {
    const auto row = static_cast<RowIndex>(*catalog.find_row(id));
    (label == Label::kPositive ? positives : negatives).push_back(row);
  }
  if (positives.empty() || negatives.empty()) {
    throw ValidationError("label at least one positive and one negative result (have " +
                          std::to_string(positives.size()) + " positive, " +
                          std::to_string(negatives.size()) + " negative)");
  }

  std::vector<RowIndex> labeled = positives;
  labeled.insert(labeled.end(), negatives.begin(), negatives.end());
  std::sort(labeled.begin(), labeled.end());
  const auto sampled =
      sample_negatives(catalog.size(), labeled, params.negative_samples, params.seed);

  LabeledSet training(catalog.dim());
  for (RowIndex r : positives) training.add(catalog.code(r), Label::kPositive, 1.0);
  for (RowIndex r : negatives) training.add(catalog.code(r), Label::kNegative, params.negative_weight);
  for (RowIndex r : sampled.rows) training.add(catalog.code(r), Label::kNegative, 1.0);

  FinetuneResult result;
  auto& stats = result.stats;
  stats.model = params.model;
  stats.labeled_positives = positives.size();
  stats.labeled_negatives = negatives.size();
  stats.sampled_negatives = sampled.rows.size();
  stats.negatives_clamped = sampled.clamped;

  const auto train_start = std::chrono::steady_clock::now();
  BranchModel model = train_model(training, params.model, params.seed, params.tree);
  stats.train_ms = ms_since(train_start);

  const ClassifyOutcome outcome = supports_boxes(params.model)
                                      ? search_positives(model, dataset.index(), catalog)
                                      : scan_positives(model, catalog);
  stats.query_ms = outcome.elapsed_ms;
  stats.n_candidates = outcome.candidates;
  stats.n_positives = outcome.positives.size();

  for (const auto& hit : outcome.positives) {
    if (std::binary_search(labeled.begin(), labeled.end(), hit.row)) continue;
    result.results.push_back(hit);
    if (result.results.size() == params.max_results) break;
  }
  stats.n_results = result.results.size();

  last_model_ = std::move(model);
  stats.iteration = ++iteration_;
  return result;
}

std::shared_ptr<Session> SessionStore::create(const std::string& dataset) {
  static thread_local std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(mutex_);
  std::string id;
  do {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%016llx%04llx", static_cast<unsigned long long>(rng()),
                  static_cast<unsigned long long>(++counter_ & 0xffff));
    id = buf;
  } while (sessions_.contains(id));
  auto session = std::make_shared<Session>(id, dataset);
  sessions_.emplace(id, session);
  return session;
}

std::shared_ptr<Session> SessionStore::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionStore::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

}  // namespace sbc
