#include "sbc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "sbc/error.hpp"
#include "sbc/quantizer.hpp"

namespace sbc::eval {

namespace {

// Indices of the k nearest rows to `query` (excluding it) under `dist`.
template <typename Dist>
std::vector<std::size_t> brute_topk(std::size_t n, std::size_t query, std::size_t k, Dist dist) {
  std::vector<std::pair<double, std::size_t>> all;
  all.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (i != query) all.emplace_back(dist(i), i);
  }
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = all[i].second;
  std::sort(out.begin(), out.end());
  return out;
}

QuantizedCatalog subset(const QuantizedCatalog& src, std::span<const std::size_t> rows) {
  std::vector<std::uint8_t> codes;
  codes.reserve(rows.size() * src.dim());
  std::vector<CatalogRecord> records;
  records.reserve(rows.size());
  for (std::size_t r : rows) {
    const auto c = src.code(r);
    codes.insert(codes.end(), c.begin(), c.end());
    records.push_back(src.record(r));
  }
  return QuantizedCatalog(src.params(), std::move(codes), std::move(records));
}

std::int64_t label_of(const QuantizedCatalog& c, std::size_t row) {
  const auto& label = c.record(row).label;
  if (!label) throw InvalidArgument("row " + std::to_string(row) + " has no class label");
  return *label;
}

}  // namespace

double recall_at_k(const EmbeddingMatrix& reference, const QuantizedCatalog& candidate,
                   std::span<const std::size_t> queries, std::size_t k) {
  const std::size_t n = reference.rows();
  if (candidate.size() != n) throw InvalidArgument("reference and candidate row counts differ");
  if (k == 0 || k >= n) throw InvalidArgument("k must satisfy 1 <= k < n");
  if (queries.empty()) throw InvalidArgument("recall needs at least one query");

  const Quantizer quantizer(candidate.params());
  EmbeddingMatrix decoded(n, candidate.dim());
  for (std::size_t i = 0; i < n; ++i) quantizer.decode_into(candidate.code(i), decoded.row(i));

  auto sq_dist = [](std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = static_cast<double>(a[j]) - b[j];
      s += d * d;
    }
    return s;
  };

  double total = 0.0;
  for (std::size_t q : queries) {
    if (q >= n) throw InvalidArgument("query row out of range");
    const auto ref = brute_topk(n, q, k, [&](std::size_t i) {
      return sq_dist(reference.row(q), reference.row(i));
    });
    const auto cand = brute_topk(n, q, k, [&](std::size_t i) {
      return sq_dist(decoded.row(q), decoded.row(i));
    });
    std::vector<std::size_t> common;
    std::set_intersection(ref.begin(), ref.end(), cand.begin(), cand.end(),
                          std::back_inserter(common));
    total += static_cast<double>(common.size()) / static_cast<double>(k);
  }
  return total / static_cast<double>(queries.size());
}

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double nn_baseline_f1(std::span<const Code> train_positives, const QuantizedCatalog& test,
                      std::int64_t target_class) {
  if (test.size() == 0) throw InvalidArgument("empty test set");
  const KdTree index = KdTree::build(test);
  return nn_baseline_f1(train_positives, test, index, target_class);
}

double nn_baseline_f1(std::span<const Code> train_positives, const QuantizedCatalog& test,
                      const KdTree& test_index, std::int64_t target_class) {
  if (train_positives.empty()) throw InvalidArgument("need at least one training positive");
  std::size_t k = 0;
  for (std::size_t i = 0; i < test.size(); ++i) k += label_of(test, i) == target_class ? 1 : 0;
  if (k == 0) throw InvalidArgument("target class absent from the test set");

  std::vector<bool> predicted(test.size(), false);
  for (const auto& code : train_positives) {
    for (const auto& hit : test_index.knn(code, k)) predicted[hit.row] = true;
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool truth = label_of(test, i) == target_class;
    tp += predicted[i] && truth;
    fp += predicted[i] && !truth;
    fn += !predicted[i] && truth;
  }
  return f1_score(tp, fp, fn);
}

double model_f1(const BranchModel& model, const QuantizedCatalog& test, std::int64_t target_class) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool predicted = model.predict(test.code(i)).label == Label::kPositive;
    const bool truth = label_of(test, i) == target_class;
    tp += predicted && truth;
    fp += predicted && !truth;
    fn += !predicted && truth;
  }
  return f1_score(tp, fp, fn);
}

CrossoverTable crossover_experiment(const QuantizedCatalog& labeled, const CrossoverConfig& cfg) {
  if (cfg.seeds.empty() || cfg.max_positives == 0) {
    throw InvalidArgument("crossover experiment needs seeds and max_positives >= 1");
  }
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) {
    throw InvalidArgument("test_fraction must lie in (0, 1)");
  }
  std::set<std::int64_t> class_set;
  for (std::size_t i = 0; i < labeled.size(); ++i) class_set.insert(label_of(labeled, i));
  const std::vector<std::int64_t> classes(class_set.begin(), class_set.end());
  if (classes.size() < 2) throw InvalidArgument("crossover experiment needs >= 2 classes");

  std::vector<double> model_sum(cfg.max_positives, 0.0);
  std::vector<double> nn_sum(cfg.max_positives, 0.0);

  for (std::uint64_t seed : cfg.seeds) {
    std::mt19937_64 rng(seed);
    const std::int64_t target = classes[seed % classes.size()];
    std::vector<std::size_t> order(labeled.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(cfg.test_fraction * labeled.size());
    std::vector<std::size_t> test_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::sort(test_rows.begin(), test_rows.end());
    const QuantizedCatalog test = subset(labeled, test_rows);
    const KdTree test_index = KdTree::build(test);

    std::vector<std::size_t> train_pos;
    std::vector<std::size_t> train_neg;
    for (std::size_t k = n_test; k < order.size(); ++k) {
      (label_of(labeled, order[k]) == target ? train_pos : train_neg).push_back(order[k]);
    }
    if (train_pos.size() < cfg.max_positives) {
      throw InvalidArgument("class " + std::to_string(target) + " has only " +
                            std::to_string(train_pos.size()) + " training rows, need " +
                            std::to_string(cfg.max_positives));
    }
    train_neg.resize(std::min(train_neg.size(), cfg.negatives));

    std::vector<Code> positives;
    for (std::size_t p = 1; p <= cfg.max_positives; ++p) {
      const auto pos_code = labeled.code(train_pos[p - 1]);
      positives.emplace_back(pos_code.begin(), pos_code.end());

      LabeledSet training(labeled.dim());
      for (const auto& c : positives) training.add(c, Label::kPositive);
      for (std::size_t r : train_neg) training.add(labeled.code(r), Label::kNegative);
      const auto model = train_model(training, cfg.model, seed * 1000003 + p, cfg.tree);

      model_sum[p - 1] += model_f1(model, test, target);
      nn_sum[p - 1] += nn_baseline_f1(positives, test, test_index, target);
    }
  }

  CrossoverTable table;
  const auto seeds = static_cast<double>(cfg.seeds.size());
  for (std::size_t p = 1; p <= cfg.max_positives; ++p) {
    CrossoverRow row{p, model_sum[p - 1] / seeds, nn_sum[p - 1] / seeds};
    if (!table.crossover && row.model_f1 > row.nn_f1) table.crossover = p;
    table.rows.push_back(row);
  }
  return table;
}

double zero_shot_accuracy(const QuantizedCatalog& images,
                          const std::map<std::int64_t, Code>& classes) {
  if (images.size() == 0) throw InvalidArgument("zero-shot accuracy needs at least one image");
  const Quantizer quantizer(images.params());
  auto unit = [&](std::span<const std::uint8_t> code) {
    auto v = quantizer.decode(code);
    double sq = 0.0;
    for (float x : v) sq += static_cast<double>(x) * x;
    const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
    std::vector<double> out(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[j] * inv;
    return out;
  };
  std::vector<std::pair<std::int64_t, std::vector<double>>> class_vectors;
  for (const auto& [label, code] : classes) {
    if (code.size() != images.dim()) throw InvalidArgument("class embedding dimension mismatch");
    class_vectors.emplace_back(label, unit(code));
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::int64_t truth = label_of(images, i);
    if (!classes.contains(truth)) {
      throw InvalidArgument("no class embedding for label " + std::to_string(truth));
    }
    const auto v = unit(images.code(i));
    double best = -std::numeric_limits<double>::infinity();
    std::int64_t best_label = class_vectors.front().first;
    for (const auto& [label, c] : class_vectors) {
      const double sim = std::inner_product(v.begin(), v.end(), c.begin(), 0.0);
      if (sim > best) {
        best = sim;
        best_label = label;
      }
    }
    correct += best_label == truth ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

double mean_nearest_neighbor_distance(const EmbeddingMatrix& m) {
  if (m.rows() < 2) throw InvalidArgument("need at least two rows");
  double total = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m.rows(); ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t d = 0; d < m.dim(); ++d) {
        const double diff = static_cast<double>(m.at(i, d)) - m.at(j, d);
        s += diff * diff;
      }
      best = std::min(best, s);
    }
    total += std::sqrt(best);
  }
  return total / static_cast<double>(m.rows());
}

std::vector<PipelineScores> head_benchmark(const HeadBenchmarkConfig& cfg) {
  const auto data = synthetic::paired_views(cfg.data);
  const std::size_t n = data.items.rows();
  if (cfg.queries == 0 || cfg.queries > n) throw InvalidArgument("bad query count");

  std::vector<std::size_t> queries(n);
  std::iota(queries.begin(), queries.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.data.seed ^ 0x5eedULL);
  std::shuffle(queries.begin(), queries.end(), rng);
  queries.resize(cfg.queries);

  struct Variant {
    std::string name;
    HeadParams params;
  };
  std::vector<Variant> variants;
  variants.push_back({"random_head", init_head(cfg.train.seed, cfg.data.dim)});
  TrainConfig plain = cfg.train;
  plain.koleo_weight = 0.0;
  variants.push_back({"head", train_head(data.view_a, data.view_b, plain).params});
  variants.push_back({"head_koleo", train_head(data.view_a, data.view_b, cfg.train).params});

  std::vector<PipelineScores> out;
  for (const auto& v : variants) {
    const EmbeddingMatrix embedded = forward_batch(v.params, data.items);
    const Quantizer quantizer = Quantizer::fit(embedded);
    QuantizedCatalog catalog(quantizer.params(), quantizer.encode_matrix(embedded),
                             synthetic::numbered_records(n, data.labels));
    PipelineScores scores{v.name, {}, 0.0, mean_nearest_neighbor_distance(embedded)};
    for (std::size_t k : cfg.ks) scores.recall.push_back(recall_at_k(embedded, catalog, queries, k));

    std::map<std::int64_t, Code> classes;
    const EmbeddingMatrix protos = forward_batch(v.params, data.prototypes);
    for (std::size_t c = 0; c < protos.rows(); ++c) {
      classes[static_cast<std::int64_t>(c)] = quantizer.encode(protos.row(c));
    }
    scores.zero_shot = zero_shot_accuracy(catalog, classes);
    out.push_back(std::move(scores));
  }
  return out;
}

}  // namespace sbc::eval
