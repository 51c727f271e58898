#include "sbc/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sbc/error.hpp"

namespace sbc::synthetic {

namespace {

void normalize(std::span<float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  const double inv = 1.0 / std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x * inv);
}

QuantizationParams identity_params(std::size_t dim) {
  return {std::vector<float>(dim, 0.0f), std::vector<float>(dim, 255.0f), kQuantizationLevels};
}

}  // namespace

PairedViews paired_views(const PairedViewConfig& cfg) {
  if (cfg.classes == 0 || cfg.items_per_class == 0 || cfg.dim == 0) {
    throw InvalidArgument("paired view generator needs classes, items and dim >= 1");
  }
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  const std::size_t n = cfg.classes * cfg.items_per_class;
  const float item_scale = static_cast<float>(cfg.item_noise / std::sqrt(double(cfg.dim)));
  const float view_scale = static_cast<float>(cfg.view_noise / std::sqrt(double(cfg.dim)));

  PairedViews out{EmbeddingMatrix(n, cfg.dim), EmbeddingMatrix(n, cfg.dim),
                  EmbeddingMatrix(n, cfg.dim), EmbeddingMatrix(cfg.classes, cfg.dim), {}};
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    auto proto = out.prototypes.row(c);
    for (float& x : proto) x = gauss(rng);
    normalize(proto);
  }
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % cfg.classes;
    out.labels[i] = static_cast<std::int64_t>(c);
    auto item = out.items.row(i);
    auto proto = out.prototypes.row(c);
    for (std::size_t j = 0; j < cfg.dim; ++j) item[j] = proto[j] + item_scale * gauss(rng);
    normalize(item);
    for (auto* view : {&out.view_a, &out.view_b}) {
      auto v = view->row(i);
      for (std::size_t j = 0; j < cfg.dim; ++j) v[j] = item[j] + view_scale * gauss(rng);
      normalize(v);
    }
  }
  return out;
}

std::vector<CatalogRecord> numbered_records(std::size_t rows,
                                            const std::vector<std::int64_t>& labels) {
  std::vector<CatalogRecord> records(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    records[i].id = i;
    records[i].uri = "row-" + std::to_string(i);
    if (!labels.empty()) records[i].label = labels[i];
  }
  return records;
}

QuantizedCatalog clustered_catalog(const ClusterConfig& cfg) {
  if (cfg.clusters == 0 || cfg.modes_per_cluster == 0 || cfg.dim == 0) {
    throw InvalidArgument("cluster generator needs clusters, modes and dim >= 1");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> centre(cfg.margin, 255.0 - cfg.margin);
  std::normal_distribution<double> gauss(0.0, cfg.spread);
  const std::size_t modes = cfg.clusters * cfg.modes_per_cluster;
  std::vector<double> centres(modes * cfg.dim);
  for (double& c : centres) c = centre(rng);

  std::vector<std::uint8_t> codes(cfg.rows * cfg.dim);
  std::vector<std::int64_t> labels(cfg.rows);
  std::uniform_int_distribution<std::size_t> pick_mode(0, modes - 1);
  for (std::size_t i = 0; i < cfg.rows; ++i) {
    const std::size_t mode = pick_mode(rng);
    labels[i] = static_cast<std::int64_t>(mode % cfg.clusters);
    for (std::size_t j = 0; j < cfg.dim; ++j) {
      const double v = std::round(centres[mode * cfg.dim + j] + gauss(rng));
      codes[i * cfg.dim + j] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return QuantizedCatalog(identity_params(cfg.dim), std::move(codes),
                          numbered_records(cfg.rows, labels));
}

QuantizedCatalog uniform_catalog(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<std::uint8_t> codes(rows * dim);
  for (auto& c : codes) c = static_cast<std::uint8_t>(byte(rng));
  return QuantizedCatalog(identity_params(dim), std::move(codes), numbered_records(rows));
}

}  // namespace sbc::synthetic
