#pragma once

// Seeded synthetic data used by the evaluation harness, the tests and the toy
// dataset generator.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sbc/catalog.hpp"
#include "sbc/embedding.hpp"

namespace sbc::synthetic {

// Paired views of items on the unit sphere: each class has a random prototype,
// each item is normalize(prototype + item_noise * g), and each of its two views
// is normalize(item + view_noise * g').
struct PairedViewConfig {
  std::size_t classes = 10;
  std::size_t items_per_class = 200;
  std::size_t dim = 512;
  double item_noise = 0.05;
  double view_noise = 0.15;
  std::uint64_t seed = 0;
};

struct PairedViews {
  EmbeddingMatrix items;
  EmbeddingMatrix view_a;
  EmbeddingMatrix view_b;
  EmbeddingMatrix prototypes;  // one row per class
  std::vector<std::int64_t> labels;
};

PairedViews paired_views(const PairedViewConfig& cfg);

// Gaussian mixture directly in code space: cluster centres uniform in
// [margin, 255 - margin], isotropic spread, rounded and clamped. Labels are
// cluster ids. Quantization params are the identity grid (lo = 0, hi = 255).
struct ClusterConfig {
  std::size_t rows = 10000;
  std::size_t dim = 32;
  std::size_t clusters = 10;
  std::size_t modes_per_cluster = 1;  // sub-clusters sharing one label
  double spread = 12.0;
  double margin = 32.0;
  std::uint64_t seed = 0;
};

QuantizedCatalog clustered_catalog(const ClusterConfig& cfg);

// Uniform random codes with identity quantization params and no labels.
QuantizedCatalog uniform_catalog(std::size_t rows, std::size_t dim, std::uint64_t seed);

// Row i: id = i, uri = "row-<i>", label = labels[i] when given.
std::vector<CatalogRecord> numbered_records(std::size_t rows,
                                            const std::vector<std::int64_t>& labels = {});

}  // namespace sbc::synthetic
