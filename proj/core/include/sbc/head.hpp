#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sbc/embedding.hpp"

namespace sbc {

inline constexpr std::size_t kHeadInputDim = 512;
inline constexpr std::size_t kHeadHiddenDim = 256;
inline constexpr std::size_t kHeadOutputDim = 32;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Two fully connected layers, ReLU on the hidden layer, L2-normalised output:
//
//   h = relu(W1 x + b1),  z = W2 h + b2,  y = z / ||z||
template <typename Scalar>
struct BasicHeadParams {
  RowMatrix<Scalar> w1;  // hidden x input
  ColVector<Scalar> b1;
  RowMatrix<Scalar> w2;  // output x hidden
  ColVector<Scalar> b2;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(w2.rows()); }

  static BasicHeadParams zeros(std::size_t input, std::size_t hidden, std::size_t output) {
    BasicHeadParams p;
    p.w1 = RowMatrix<Scalar>::Zero(hidden, input);
    p.b1 = ColVector<Scalar>::Zero(hidden);
    p.w2 = RowMatrix<Scalar>::Zero(output, hidden);
    p.b2 = ColVector<Scalar>::Zero(output);
    return p;
  }

  template <typename Other>
  BasicHeadParams<Other> cast() const {
    return {w1.template cast<Other>(), b1.template cast<Other>(), w2.template cast<Other>(),
            b2.template cast<Other>()};
  }

  bool all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
  }

  friend bool operator==(const BasicHeadParams& a, const BasicHeadParams& b) {
    return a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2;
  }
};

using HeadParams = BasicHeadParams<float>;

// He-normal weights, zero biases, drawn from a generator seeded with `seed`.
HeadParams init_head(std::uint64_t seed, std::size_t input = kHeadInputDim,
                     std::size_t hidden = kHeadHiddenDim, std::size_t output = kHeadOutputDim);

// Throws InvalidArgument on a dimension mismatch, non-finite input, or a zero
// pre-normalisation output.
std::vector<float> forward(const HeadParams& params, std::span<const float> x);
EmbeddingMatrix forward_batch(const HeadParams& params, const EmbeddingMatrix& x);

struct TrainConfig {
  double koleo_weight = 0.1;   // lambda
  double temperature = 0.07;   // tau, fixed
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

// Loss for one batch of paired views:
//   align  = symmetric InfoNCE over the n x n similarity matrix (temperature tau)
//   koleo  = mean of the KoLeo loss over each view's normalised outputs
//   total  = align + lambda * koleo
// `grad` holds dtotal/dparams when requested. koleo is 0 and not evaluated when
// lambda == 0.
template <typename Scalar>
struct HeadLoss {
  double total = 0.0;
  double align = 0.0;
  double koleo = 0.0;
  BasicHeadParams<Scalar> grad;
};

template <typename Scalar>
HeadLoss<Scalar> head_loss(const BasicHeadParams<Scalar>& params, const RowMatrix<Scalar>& view_a,
                           const RowMatrix<Scalar>& view_b, double temperature,
                           double koleo_weight, bool want_grad);

extern template HeadLoss<float> head_loss(const BasicHeadParams<float>&, const RowMatrix<float>&,
                                          const RowMatrix<float>&, double, double, bool);
extern template HeadLoss<double> head_loss(const BasicHeadParams<double>&,
                                           const RowMatrix<double>&, const RowMatrix<double>&,
                                           double, double, bool);

struct EpochLog {
  double loss = 0.0;
  double align = 0.0;
  double koleo = 0.0;  // unweighted KoLeo term; 0 when lambda == 0
};

struct TrainResult {
  HeadParams params;
  std::vector<EpochLog> history;
};

// Mini-batch Adam on align + lambda * koleo. Row i of view_a and row i of view_b
// are two views of the same item. Deterministic for a fixed cfg.seed. Throws
// TrainingError if the loss becomes non-finite.
TrainResult train_head(const EmbeddingMatrix& view_a, const EmbeddingMatrix& view_b,
                       const TrainConfig& cfg);

// "CBHD" | version u16 | layer count u16 | dims u32[layers + 1] |
// per layer: weights f32[out * in] (row-major), bias f32[out]; little-endian.
void write_head(const HeadParams& params, const std::filesystem::path& path);
HeadParams read_head(const std::filesystem::path& path);

}  // namespace sbc
