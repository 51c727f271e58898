#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "sbc/error.hpp"
#include "sbc/eval.hpp"
#include "sbc/head.hpp"
#include "sbc/synthetic.hpp"

namespace {

using namespace sbc;
using ParamsD = BasicHeadParams<double>;

RowMatrix<double> random_rows(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  RowMatrix<double> m(n, d);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = g(rng);
  return m;
}

ParamsD random_params(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.7);
  auto p = ParamsD::zeros(in, hidden, out);
  for (auto* t : {&p.w1, &p.w2}) {
    for (Eigen::Index k = 0; k < t->size(); ++k) t->data()[k] = g(rng);
  }
  for (auto* t : {&p.b1, &p.b2}) {
    for (Eigen::Index k = 0; k < t->size(); ++k) (*t)(k) = g(rng) * 0.1;
  }
  return p;
}

// Loop-based forward pass and loss, written from the definitions.
std::vector<std::vector<double>> reference_forward(const ParamsD& p, const RowMatrix<double>& x) {
  std::vector<std::vector<double>> out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> h(p.hidden_dim());
    for (std::size_t r = 0; r < h.size(); ++r) {
      double s = p.b1(Eigen::Index(r));
      for (std::size_t c = 0; c < p.input_dim(); ++c) s += p.w1(Eigen::Index(r), Eigen::Index(c)) * x(i, Eigen::Index(c));
      h[r] = std::max(s, 0.0);
    }
    std::vector<double> z(p.output_dim());
    double norm = 0.0;
    for (std::size_t r = 0; r < z.size(); ++r) {
      double s = p.b2(Eigen::Index(r));
      for (std::size_t c = 0; c < h.size(); ++c) s += p.w2(Eigen::Index(r), Eigen::Index(c)) * h[c];
      z[r] = s;
      norm += s * s;
    }
    for (double& v : z) v /= std::sqrt(norm);
    out.push_back(z);
  }
  return out;
}

double reference_loss(const ParamsD& p, const RowMatrix<double>& a, const RowMatrix<double>& b,
                      double tau, double lambda) {
  const auto ya = reference_forward(p, a);
  const auto yb = reference_forward(p, b);
  const std::size_t n = ya.size();
  std::vector<std::vector<double>> s(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < ya[i].size(); ++k) dot += ya[i][k] * yb[j][k];
      s[i][j] = dot / tau;
    }
  }
  double rows = 0.0;
  double cols = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double zr = 0.0;
    double zc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      zr += std::exp(s[i][j]);
      zc += std::exp(s[j][i]);
    }
    rows += -std::log(std::exp(s[i][i]) / zr);
    cols += -std::log(std::exp(s[i][i]) / zc);
  }
  auto as_matrix = [](const std::vector<std::vector<double>>& y) {
    EmbeddingMatrix m(y.size(), y[0].size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      for (std::size_t k = 0; k < y[i].size(); ++k) m.at(i, k) = float(y[i][k]);
    }
    return m;
  };
  const double align = 0.5 * (rows + cols) / double(n);
  if (lambda == 0.0) return align;
  return align + lambda * 0.5 * (oracle::koleo(as_matrix(ya)) + oracle::koleo(as_matrix(yb)));
}

template <typename Tensor>
double tensor_relative_error(const Tensor& analytic, Tensor& param, const std::function<double()>& loss,
                             double h) {
  double diff = 0.0;
  double na = 0.0;
  double nf = 0.0;
  for (Eigen::Index k = 0; k < param.size(); ++k) {
    const double keep = param.data()[k];
    param.data()[k] = keep + h;
    const double up = loss();
    param.data()[k] = keep - h;
    const double down = loss();
    param.data()[k] = keep;
    const double fd = (up - down) / (2 * h);
    const double an = analytic.data()[k];
    diff += (fd - an) * (fd - an);
    na += an * an;
    nf += fd * fd;
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), 1e-300});
}

TEST(Head, OutputIsUnitNorm) {
  const auto p = init_head(1);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> x(kHeadInputDim);
  for (int t = 0; t < 1000; ++t) {
    for (float& v : x) v = g(rng);
    const auto y = forward(p, x);
    ASSERT_EQ(y.size(), kHeadOutputDim);
    double sq = 0.0;
    for (float v : y) sq += double(v) * v;
    ASSERT_NEAR(std::sqrt(sq), 1.0, 1e-6);
  }
}

TEST(Head, ZeroWeightsGiveNormalizedBias) {
  auto p = HeadParams::zeros(4, 3, 2);
  p.b2 << 3.0f, 4.0f;
  const auto y = forward(p, std::vector<float>{1, -2, 3, -4});
  EXPECT_NEAR(y[0], 0.6f, 1e-7);
  EXPECT_NEAR(y[1], 0.8f, 1e-7);
}

TEST(Head, ZeroOutputIsRejected) {
  const auto p = HeadParams::zeros(4, 3, 2);
  EXPECT_THROW(forward(p, std::vector<float>{1, 2, 3, 4}), InvalidArgument);
  EXPECT_THROW(forward(init_head(0, 4, 3, 2), std::vector<float>{1, 2}), InvalidArgument);
}

TEST(Head, SingleAndBatchForwardAgree) {
  const auto p = init_head(3);
  const auto data = synthetic::paired_views({3, 5, kHeadInputDim, 0.05, 0.15, 4});
  const auto batch = forward_batch(p, data.items);
  for (std::size_t i = 0; i < data.items.rows(); ++i) {
    const auto one = forward(p, data.items.row(i));
    for (std::size_t j = 0; j < kHeadOutputDim; ++j) ASSERT_NEAR(one[j], batch.at(i, j), 1e-6);
  }
}

TEST(Head, InitIsSeeded) {
  EXPECT_EQ(init_head(5), init_head(5));
  EXPECT_FALSE(init_head(5) == init_head(6));
  const std::vector<float> x(kHeadInputDim, 0.25f);
  EXPECT_EQ(forward(init_head(5), x), forward(init_head(5), x));
}

TEST(Head, LossMatchesReference) {
  std::mt19937_64 rng(7);
  for (double lambda : {0.0, 0.1, 1.0}) {
    const auto p = random_params(6, 5, 4, rng);
    const auto a = random_rows(7, 6, rng);
    const auto b = random_rows(7, 6, rng);
    const auto loss = head_loss(p, a, b, 0.07, lambda, false);
    EXPECT_NEAR(loss.total, reference_loss(p, a, b, 0.07, lambda), 1e-5 * std::abs(loss.total) + 1e-6)
        << "lambda " << lambda;
    if (lambda == 0.0) {
      EXPECT_EQ(loss.koleo, 0.0);
    }
  }
}

TEST(Head, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(8);
  for (int batch = 0; batch < 10; ++batch) {
    const double lambda = batch % 3 == 0 ? 0.0 : 0.1 * batch;
    auto p = random_params(6, 5, 4, rng);
    const auto a = random_rows(5 + batch % 4, 6, rng);
    const auto b = random_rows(a.rows(), 6, rng);
    const auto analytic = head_loss(p, a, b, 0.5, lambda, true).grad;
    auto loss = [&] { return head_loss(p, a, b, 0.5, lambda, false).total; };
    constexpr double h = 1e-6;
    EXPECT_LE(tensor_relative_error(analytic.w1, p.w1, loss, h), 1e-3) << "w1, batch " << batch;
    EXPECT_LE(tensor_relative_error(analytic.b1, p.b1, loss, h), 1e-3) << "b1, batch " << batch;
    EXPECT_LE(tensor_relative_error(analytic.w2, p.w2, loss, h), 1e-3) << "w2, batch " << batch;
    EXPECT_LE(tensor_relative_error(analytic.b2, p.b2, loss, h), 1e-3) << "b2, batch " << batch;
  }
}

TEST(Head, TrainConfigValidation) {
  const auto data = synthetic::paired_views({2, 4, 16, 0.05, 0.15, 0});
  TrainConfig cfg;
  cfg.batch_size = 1;
  EXPECT_THROW(train_head(data.view_a, data.view_b, cfg), InvalidArgument);
  cfg.batch_size = 100;
  EXPECT_THROW(train_head(data.view_a, data.view_b, cfg), InvalidArgument);
  cfg.batch_size = 4;
  cfg.temperature = 0.0;
  EXPECT_THROW(train_head(data.view_a, data.view_b, cfg), InvalidArgument);
}

TEST(Head, DivergentTrainingIsReported) {
  const auto data = synthetic::paired_views({4, 16, 32, 0.05, 0.15, 0});
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 50;
  cfg.learning_rate = 1e38;
  EXPECT_THROW(train_head(data.view_a, data.view_b, cfg), TrainingError);
}

TEST(Head, TrainingIsDeterministicAndReducesLoss) {
  const auto data = synthetic::paired_views({5, 40, kHeadInputDim, 0.05, 0.15, 1});
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 50;
  cfg.seed = 3;
  const auto first = train_head(data.view_a, data.view_b, cfg);
  const auto second = train_head(data.view_a, data.view_b, cfg);
  EXPECT_EQ(first.params, second.params);
  ASSERT_EQ(first.history.size(), 8u);
  const auto& h = first.history;
  EXPECT_LT((h[5].loss + h[6].loss + h[7].loss) / 3, (h[0].loss + h[1].loss + h[2].loss) / 3);
  for (const auto& e : h) EXPECT_NEAR(e.loss, e.align + cfg.koleo_weight * e.koleo, 1e-9);
}

TEST(Head, ZeroLambdaLogsNoKoleo) {
  const auto data = synthetic::paired_views({3, 10, 64, 0.05, 0.15, 2});
  TrainConfig cfg;
  cfg.koleo_weight = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 10;
  for (const auto& e : train_head(data.view_a, data.view_b, cfg).history) {
    EXPECT_EQ(e.koleo, 0.0);
    EXPECT_EQ(e.loss, e.align);
  }
}

TEST(Head, KoleoSpreadsTheEmbeddedCatalog) {
  const auto data = synthetic::paired_views({5, 60, kHeadInputDim, 0.05, 0.15, 4});
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 60;
  cfg.seed = 4;
  TrainConfig plain = cfg;
  plain.koleo_weight = 0.0;
  const auto with = forward_batch(train_head(data.view_a, data.view_b, cfg).params, data.items);
  const auto without = forward_batch(train_head(data.view_a, data.view_b, plain).params, data.items);
  EXPECT_GT(eval::mean_nearest_neighbor_distance(with), eval::mean_nearest_neighbor_distance(without));
}

TEST(Head, FileRoundTrip) {
  oracle::TempDir dir("head");
  const auto p = init_head(9, 12, 7, 3);
  write_head(p, dir / "h.cbhd");
  EXPECT_EQ(read_head(dir / "h.cbhd"), p);
  EXPECT_EQ(std::filesystem::file_size(dir / "h.cbhd"),
            4u + 2 + 2 + 3 * 4 + 4 * (12 * 7 + 7 + 7 * 3 + 3));
  std::ofstream(dir / "bad.cbhd", std::ios::binary) << "CBXX";
  EXPECT_THROW(read_head(dir / "bad.cbhd"), FormatError);
}

}  // namespace
