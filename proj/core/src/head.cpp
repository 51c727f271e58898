#include "sbc/head.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "binary_io.hpp"
#include "sbc/error.hpp"
#include "sbc/koleo.hpp"

namespace sbc {

namespace {

constexpr std::string_view kHeadMagic = "CBHD";
constexpr std::uint16_t kHeadVersion = 1;

template <typename Scalar>
struct ViewActivations {
  RowMatrix<Scalar> pre;     // W1 x + b1
  RowMatrix<Scalar> hidden;  // relu(pre)
  ColVector<Scalar> norm;    // ||W2 h + b2|| per row
  RowMatrix<Scalar> out;     // normalised output
};

template <typename Scalar>
ViewActivations<Scalar> run_forward(const BasicHeadParams<Scalar>& p, const RowMatrix<Scalar>& x) {
  ViewActivations<Scalar> act;
  act.pre = x * p.w1.transpose();
  act.pre.rowwise() += p.b1.transpose();
  act.hidden = act.pre.cwiseMax(Scalar(0));
  RowMatrix<Scalar> z = act.hidden * p.w2.transpose();
  z.rowwise() += p.b2.transpose();
  act.norm = z.rowwise().norm();
  for (Eigen::Index i = 0; i < act.norm.size(); ++i) {
    if (!(act.norm(i) > Scalar(0))) {
      throw InvalidArgument("head output row " + std::to_string(i) +
                            " has zero norm and cannot be normalised");
    }
  }
  act.out = z.array().colwise() / act.norm.array();
  return act;
}

// Backpropagates dL/d(out) for one view into `grad`.
template <typename Scalar>
void run_backward(const BasicHeadParams<Scalar>& p, const RowMatrix<Scalar>& x,
                  const ViewActivations<Scalar>& act, const RowMatrix<Scalar>& d_out,
                  BasicHeadParams<Scalar>& grad) {
  // d/dz of z/||z|| applied to d_out: (d_out - y (y . d_out)) / ||z||
  const ColVector<Scalar> dots = act.out.cwiseProduct(d_out).rowwise().sum();
  RowMatrix<Scalar> d_z = d_out - (act.out.array().colwise() * dots.array()).matrix();
  d_z = d_z.array().colwise() / act.norm.array();

  grad.w2.noalias() += d_z.transpose() * act.hidden;
  grad.b2 += d_z.colwise().sum().transpose();
  RowMatrix<Scalar> d_pre = d_z * p.w2;
  d_pre = d_pre.cwiseProduct((act.pre.array() > Scalar(0)).template cast<Scalar>().matrix());
  grad.w1.noalias() += d_pre.transpose() * x;
  grad.b1 += d_pre.colwise().sum().transpose();
}

template <typename Scalar>
RowMatrix<Scalar> to_eigen(const EmbeddingMatrix& m) {
  return Eigen::Map<const RowMatrix<float>>(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                                            static_cast<Eigen::Index>(m.dim()))
      .template cast<Scalar>();
}

void check_input(const HeadParams& params, const EmbeddingMatrix& x) {
  if (x.dim() != params.input_dim()) {
    throw InvalidArgument("head expects input dimension " + std::to_string(params.input_dim()) +
                          ", got " + std::to_string(x.dim()));
  }
  x.check_finite();
}

}  // namespace

template <typename Scalar>
HeadLoss<Scalar> head_loss(const BasicHeadParams<Scalar>& params, const RowMatrix<Scalar>& view_a,
                           const RowMatrix<Scalar>& view_b, double temperature,
                           double koleo_weight, bool want_grad) {
  const Eigen::Index n = view_a.rows();
  if (n < 2 || view_b.rows() != n) {
    throw InvalidArgument("head loss needs two aligned views of at least 2 rows");
  }
  const auto act_a = run_forward(params, view_a);
  const auto act_b = run_forward(params, view_b);
  const Eigen::Index d = act_a.out.cols();

  // Symmetric InfoNCE: cross-entropy of matching a_i to b_i over rows and over columns.
  const Eigen::MatrixXd logits =
      (act_a.out.template cast<double>() * act_b.out.template cast<double>().transpose()) /
      temperature;
  Eigen::MatrixXd p_row(n, n);
  Eigen::MatrixXd p_col(n, n);
  double row_loss = 0.0;
  double col_loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    p_row.row(i) = (logits.row(i).array() - lse).exp();
    row_loss += lse - logits(i, i);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const double m = logits.col(j).maxCoeff();
    const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    p_col.col(j) = (logits.col(j).array() - lse).exp();
    col_loss += lse - logits(j, j);
  }

  HeadLoss<Scalar> result;
  result.align = 0.5 * (row_loss + col_loss) / static_cast<double>(n);

  RowMatrix<Scalar> d_a;
  RowMatrix<Scalar> d_b;
  if (want_grad) {
    const Eigen::MatrixXd d_logits =
        (0.5 / static_cast<double>(n)) *
        (p_row + p_col - 2.0 * Eigen::MatrixXd::Identity(n, n));
    d_a = ((d_logits * act_b.out.template cast<double>()) / temperature).template cast<Scalar>();
    d_b = ((d_logits.transpose() * act_a.out.template cast<double>()) / temperature)
              .template cast<Scalar>();
  }

  if (koleo_weight != 0.0) {
    const double scale = 0.5 * koleo_weight;
    const double ka = koleo::loss_and_grad<Scalar>(act_a.out.data(), static_cast<std::size_t>(n),
                                                   static_cast<std::size_t>(d),
                                                   want_grad ? d_a.data() : nullptr, scale);
    const double kb = koleo::loss_and_grad<Scalar>(act_b.out.data(), static_cast<std::size_t>(n),
                                                   static_cast<std::size_t>(d),
                                                   want_grad ? d_b.data() : nullptr, scale);
    result.koleo = 0.5 * (ka + kb);
  }
  result.total = result.align + koleo_weight * result.koleo;

  if (want_grad) {
    result.grad = BasicHeadParams<Scalar>::zeros(params.input_dim(), params.hidden_dim(),
                                                 params.output_dim());
    run_backward(params, view_a, act_a, d_a, result.grad);
    run_backward(params, view_b, act_b, d_b, result.grad);
  }
  return result;
}

template HeadLoss<float> head_loss(const BasicHeadParams<float>&, const RowMatrix<float>&,
                                   const RowMatrix<float>&, double, double, bool);
template HeadLoss<double> head_loss(const BasicHeadParams<double>&, const RowMatrix<double>&,
                                    const RowMatrix<double>&, double, double, bool);

HeadParams init_head(std::uint64_t seed, std::size_t input, std::size_t hidden,
                     std::size_t output) {
  if (input == 0 || hidden == 0 || output == 0) {
    throw InvalidArgument("head layer sizes must be >= 1");
  }
  std::mt19937_64 rng(seed);
  auto p = HeadParams::zeros(input, hidden, output);
  std::normal_distribution<float> first(0.0f, std::sqrt(2.0f / static_cast<float>(input)));
  std::normal_distribution<float> second(0.0f, std::sqrt(2.0f / static_cast<float>(hidden)));
  for (Eigen::Index k = 0; k < p.w1.size(); ++k) p.w1.data()[k] = first(rng);
  for (Eigen::Index k = 0; k < p.w2.size(); ++k) p.w2.data()[k] = second(rng);
  return p;
}

EmbeddingMatrix forward_batch(const HeadParams& params, const EmbeddingMatrix& x) {
  check_input(params, x);
  if (x.empty()) return EmbeddingMatrix(0, params.output_dim());
  const auto act = run_forward(params, to_eigen<float>(x));
  std::vector<float> out(act.out.data(), act.out.data() + act.out.size());
  return EmbeddingMatrix(x.rows(), params.output_dim(), std::move(out));
}

std::vector<float> forward(const HeadParams& params, std::span<const float> x) {
  EmbeddingMatrix one(1, x.size(), std::vector<float>(x.begin(), x.end()));
  const EmbeddingMatrix out = forward_batch(params, one);
  return {out.data().begin(), out.data().end()};
}

void TrainConfig::validate() const {
  if (!(koleo_weight >= 0.0) || !std::isfinite(koleo_weight)) {
    throw InvalidArgument("koleo weight must be a finite non-negative number");
  }
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (batch_size < 2) throw InvalidArgument("batch size must be >= 2");
}

namespace {

struct AdamState {
  HeadParams m;
  HeadParams v;
  std::size_t step = 0;
};

template <typename Tensor>
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, float lr,
                 float bias1, float bias2) {
  constexpr float kBeta1 = 0.9f;
  constexpr float kBeta2 = 0.999f;
  constexpr float kEps = 1e-8f;
  m = kBeta1 * m + (1.0f - kBeta1) * grad;
  v = (kBeta2 * v.array() + (1.0f - kBeta2) * grad.array().square()).matrix();
  param.array() -= lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + kEps);
}

}  // namespace

TrainResult train_head(const EmbeddingMatrix& view_a, const EmbeddingMatrix& view_b,
                       const TrainConfig& cfg) {
  cfg.validate();
  if (view_a.rows() != view_b.rows() || view_a.dim() != view_b.dim()) {
    throw InvalidArgument("paired views must have the same shape");
  }
  if (view_a.rows() < cfg.batch_size) {
    throw InvalidArgument("need at least batch_size (" + std::to_string(cfg.batch_size) +
                          ") pairs, got " + std::to_string(view_a.rows()));
  }
  view_a.check_finite();
  view_b.check_finite();

  TrainResult result;
  result.params = init_head(cfg.seed, view_a.dim());
  auto& params = result.params;
  AdamState adam{HeadParams::zeros(params.input_dim(), params.hidden_dim(), params.output_dim()),
                 HeadParams::zeros(params.input_dim(), params.hidden_dim(), params.output_dim())};

  const auto all_a = to_eigen<float>(view_a);
  const auto all_b = to_eigen<float>(view_b);
  std::vector<Eigen::Index> order(view_a.rows());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += cfg.batch_size) {
      const std::size_t size = std::min(cfg.batch_size, order.size() - start);
      if (size < 2) break;
      RowMatrix<float> a(static_cast<Eigen::Index>(size), all_a.cols());
      RowMatrix<float> b(static_cast<Eigen::Index>(size), all_b.cols());
      for (std::size_t k = 0; k < size; ++k) {
        a.row(static_cast<Eigen::Index>(k)) = all_a.row(order[start + k]);
        b.row(static_cast<Eigen::Index>(k)) = all_b.row(order[start + k]);
      }
      HeadLoss<float> loss;
      try {
        loss = head_loss(params, a, b, cfg.temperature, cfg.koleo_weight, true);
      } catch (const Error& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches) + ": " + e.what());
      }
      if (!std::isfinite(loss.total) || !loss.grad.all_finite()) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches) + " (align " + std::to_string(loss.align) +
                            ", koleo " + std::to_string(loss.koleo) +
                            "); try a lower learning rate");
      }
      ++adam.step;
      const auto lr = static_cast<float>(cfg.learning_rate);
      const float bias1 = 1.0f - std::pow(0.9f, static_cast<float>(adam.step));
      const float bias2 = 1.0f - std::pow(0.999f, static_cast<float>(adam.step));
      adam_update(params.w1, loss.grad.w1, adam.m.w1, adam.v.w1, lr, bias1, bias2);
      adam_update(params.b1, loss.grad.b1, adam.m.b1, adam.v.b1, lr, bias1, bias2);
      adam_update(params.w2, loss.grad.w2, adam.m.w2, adam.v.w2, lr, bias1, bias2);
      adam_update(params.b2, loss.grad.b2, adam.m.b2, adam.v.b2, lr, bias1, bias2);

      log.loss += loss.total;
      log.align += loss.align;
      log.koleo += loss.koleo;
      ++batches;
    }
    if (batches > 0) {
      log.loss /= static_cast<double>(batches);
      log.align /= static_cast<double>(batches);
      log.koleo /= static_cast<double>(batches);
    }
    result.history.push_back(log);
  }
  return result;
}

void write_head(const HeadParams& params, const std::filesystem::path& path) {
  if (!params.all_finite()) throw InvalidArgument("refusing to write non-finite head parameters");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::LeWriter w(out);
  w.magic(kHeadMagic);
  w.u16(kHeadVersion);
  w.u16(2);
  w.u32(static_cast<std::uint32_t>(params.input_dim()));
  w.u32(static_cast<std::uint32_t>(params.hidden_dim()));
  w.u32(static_cast<std::uint32_t>(params.output_dim()));
  w.f32s({params.w1.data(), static_cast<std::size_t>(params.w1.size())});
  w.f32s({params.b1.data(), static_cast<std::size_t>(params.b1.size())});
  w.f32s({params.w2.data(), static_cast<std::size_t>(params.w2.size())});
  w.f32s({params.b2.data(), static_cast<std::size_t>(params.b2.size())});
  if (!out) throw IoError("write failed: " + path.string());
}

HeadParams read_head(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  io::LeReader r(in);
  r.expect_magic(kHeadMagic);
  if (const auto v = r.u16("version"); v != kHeadVersion) {
    throw FormatError("unsupported head version " + std::to_string(v));
  }
  if (const auto layers = r.u16("layer count"); layers != 2) {
    throw FormatError("expected 2 layers, file declares " + std::to_string(layers));
  }
  const std::size_t input = r.u32("input dim");
  const std::size_t hidden = r.u32("hidden dim");
  const std::size_t output = r.u32("output dim");
  if (input == 0 || hidden == 0 || output == 0 || input > (1u << 20) || hidden > (1u << 20) ||
      output > (1u << 16)) {
    throw FormatError("implausible head dimensions");
  }
  auto p = HeadParams::zeros(input, hidden, output);
  auto load = [&](auto& tensor, const char* what) {
    const auto values = r.f32s(static_cast<std::size_t>(tensor.size()), what);
    std::copy(values.begin(), values.end(), tensor.data());
  };
  load(p.w1, "layer 1 weights");
  load(p.b1, "layer 1 bias");
  load(p.w2, "layer 2 weights");
  load(p.b2, "layer 2 bias");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in head file");
  if (!p.all_finite()) throw FormatError("head file contains non-finite parameters");
  return p;
}

}  // namespace sbc
