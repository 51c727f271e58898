#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbc/catalog.hpp"
#include "sbc/embedding.hpp"
#include "sbc/head.hpp"
#include "sbc/kdtree.hpp"
#include "sbc/models.hpp"
#include "sbc/synthetic.hpp"

namespace sbc::eval {

using Code = std::vector<std::uint8_t>;

// Mean over `queries` of |top-k(candidate) ∩ top-k(reference)| / k. Top-k is a
// brute-force Euclidean scan excluding the query row, ties to the lower row;
// candidate distances use the decoded codes. Throws InvalidArgument if k >= n
// or the row counts differ.
double recall_at_k(const EmbeddingMatrix& reference, const QuantizedCatalog& candidate,
                   std::span<const std::size_t> queries, std::size_t k);

double f1_score(std::size_t true_positive, std::size_t false_positive, std::size_t false_negative);

// NN-search classifier: with k = number of `target_class` rows in `test`, the
// union of the exact code-space k-NN of every training positive is predicted
// positive. Returns its F1 against the labels.
double nn_baseline_f1(std::span<const Code> train_positives, const QuantizedCatalog& test,
                      std::int64_t target_class);
double nn_baseline_f1(std::span<const Code> train_positives, const QuantizedCatalog& test,
                      const KdTree& test_index, std::int64_t target_class);

// F1 of model predictions on every row of `test`.
double model_f1(const BranchModel& model, const QuantizedCatalog& test, std::int64_t target_class);

struct CrossoverConfig {
  ModelKind model = ModelKind::kDecisionBranch;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::size_t max_positives = 40;  // counts 1, 2, ..., max_positives
  std::size_t negatives = 200;     // labeled negatives per run
  double test_fraction = 0.5;
  TreeParams tree;
};

struct CrossoverRow {
  std::size_t positives = 0;
  double model_f1 = 0.0;  // mean over seeds
  double nn_f1 = 0.0;     // mean over seeds
};

struct CrossoverTable {
  std::vector<CrossoverRow> rows;
  std::optional<std::size_t> crossover;  // first count with model_f1 > nn_f1
};

// For each seed: target class = seed mod #classes, random train/test split,
// nested positive subsets drawn from the training rows of the target class and a
// fixed set of negatives drawn from the other classes. Throws InvalidArgument if
// a target class has fewer than max_positives training rows.
CrossoverTable crossover_experiment(const QuantizedCatalog& labeled, const CrossoverConfig& cfg);

// Fraction of rows whose decoded code has the highest cosine similarity with
// the decoded embedding of its own class (ties to the lowest class id).
double zero_shot_accuracy(const QuantizedCatalog& images, const std::map<std::int64_t, Code>& classes);

// Mean distance from each row to its nearest other row.
double mean_nearest_neighbor_distance(const EmbeddingMatrix& m);

struct HeadBenchmarkConfig {
  synthetic::PairedViewConfig data;
  TrainConfig train;
  std::vector<std::size_t> ks = {1, 10, 100};
  std::size_t queries = 200;
};

struct PipelineScores {
  std::string name;  // random_head | head | head_koleo
  std::vector<double> recall;  // aligned with cfg.ks
  double zero_shot = 0.0;
  double mean_nn_distance = 0.0;
};

// Embeds the benchmark items with an untrained head, a head trained without
// KoLeo and one trained with cfg.train.koleo_weight, quantizes each to 8 bits
// and reports Recall@k against the float embeddings plus zero-shot accuracy.
std::vector<PipelineScores> head_benchmark(const HeadBenchmarkConfig& cfg);

}  // namespace sbc::eval
