#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sbc/catalog.hpp"
#include "sbc/head.hpp"
#include "sbc/kdtree.hpp"
#include "sbc/models.hpp"
#include "sbc/quantizer.hpp"

namespace sbc {

// A searchable dataset: catalog, its index and the head used to embed queries.
// Immutable after construction and shared read-only between sessions.
class Dataset {
 public:
  // Throws InvalidArgument if the pieces disagree on n or d'.
  Dataset(std::string name, QuantizedCatalog catalog, KdTree index, HeadParams head,
          std::filesystem::path base_dir = {});

  static Dataset load(std::string name, const std::filesystem::path& catalog_path,
                      const std::filesystem::path& index_path,
                      const std::filesystem::path& head_path);

  const std::string& name() const { return name_; }
  const QuantizedCatalog& catalog() const { return catalog_; }
  const KdTree& index() const { return index_; }
  const HeadParams& head() const { return head_; }
  const Quantizer& quantizer() const { return quantizer_; }
  // Directory relative record URIs resolve against.
  const std::filesystem::path& base_dir() const { return base_dir_; }

 private:
  std::string name_;
  QuantizedCatalog catalog_;
  KdTree index_;
  HeadParams head_;
  Quantizer quantizer_;
  std::filesystem::path base_dir_;
};

inline constexpr std::size_t kDefaultInitialResults = 60;
inline constexpr std::size_t kDefaultSearchLeaves = 64;

struct InitialSearchResult {
  std::vector<Neighbor> hits;  // ascending distance in code space
  double query_ms = 0.0;
  QueryStats stats;
};

// Query embedding -> head -> quantize -> approximate k-NN on the index.
InitialSearchResult initial_search(const Dataset& dataset, std::span<const float> query,
                                   std::size_t k = kDefaultInitialResults,
                                   std::size_t max_leaves = kDefaultSearchLeaves);

struct NegativeSample {
  std::vector<RowIndex> rows;
  std::size_t requested = 0;
  bool clamped = false;  // fewer eligible rows than requested
};

// Uniform sample without replacement from [0, rows) minus `exclude`.
NegativeSample sample_negatives(std::size_t rows, std::span<const RowIndex> exclude,
                                std::size_t count, std::uint64_t seed);

struct FinetuneParams {
  ModelKind model = ModelKind::kDecisionBranch;
  std::size_t negative_samples = 1000;
  double negative_weight = 10.0;  // multiplier for user-labeled negatives
  std::uint64_t seed = 0;
  std::size_t max_results = 500;
  TreeParams tree;

  void validate() const;
};

struct SearchStats {
  double train_ms = 0.0;
  double query_ms = 0.0;
  std::size_t n_candidates = 0;
  std::size_t n_positives = 0;  // before removing labeled rows and truncating
  std::size_t n_results = 0;
  ModelKind model = ModelKind::kDecisionBranch;
  std::size_t iteration = 0;
  std::size_t labeled_positives = 0;
  std::size_t labeled_negatives = 0;
  std::size_t sampled_negatives = 0;
  bool negatives_clamped = false;
};

struct FinetuneResult {
  std::vector<ScoredRow> results;  // descending score, labeled rows removed
  SearchStats stats;
};

// Accumulated relevance feedback for one user. Not synchronised itself; hold
// mutex() around add_labels()/finetune() when shared.
class Session {
 public:
  Session(std::string id, std::string dataset) : id_(std::move(id)), dataset_(std::move(dataset)) {}

  const std::string& id() const { return id_; }
  const std::string& dataset() const { return dataset_; }
  std::size_t iteration() const { return iteration_; }
  const std::map<std::uint64_t, Label>& labels() const { return labels_; }
  const std::optional<BranchModel>& last_model() const { return last_model_; }
  std::mutex& mutex() const { return mutex_; }

  // Newest label wins. All ids are checked before any is applied; throws
  // InvalidArgument naming the first unknown id.
  void add_labels(const Dataset& dataset,
                  std::span<const std::pair<std::uint64_t, Label>> labels);

  // Trains on user positives (weight 1), user negatives (negative_weight) and
  // sampled negatives (weight 1, never a labeled row), classifies the whole
  // catalog and returns the positives that were not labeled. Throws
  // ValidationError without at least one positive and one negative label.
  FinetuneResult finetune(const Dataset& dataset, const FinetuneParams& params);

 private:
  std::string id_;
  std::string dataset_;
  std::map<std::uint64_t, Label> labels_;
  std::optional<BranchModel> last_model_;
  std::size_t iteration_ = 0;
  mutable std::mutex mutex_;
};

// Thread-safe registry of sessions with server-generated ids.
class SessionStore {
 public:
  std::shared_ptr<Session> create(const std::string& dataset);
  std::shared_ptr<Session> find(const std::string& id) const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace sbc
