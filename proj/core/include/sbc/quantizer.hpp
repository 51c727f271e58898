#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sbc/catalog.hpp"
#include "sbc/embedding.hpp"

namespace sbc {

// 8-bit per-dimension affine scalar quantizer.
//
//   code[j] = clamp(round((v[j] - lo[j]) / (hi[j] - lo[j]) * 255), 0, 255)
//   v[j]    = lo[j] + code[j] / 255 * (hi[j] - lo[j])
//
// Rounding is to nearest with ties away from zero. A constant dimension
// (hi == lo) always encodes to 0 and decodes to lo. For v within [lo, hi]
// the round-trip error is at most half a step, (hi - lo) / 510.
class Quantizer {
 public:
  explicit Quantizer(QuantizationParams params);

  // lo/hi are the column minima/maxima of `data`. Throws InvalidArgument on an
  // empty matrix or non-finite values.
  static Quantizer fit(const EmbeddingMatrix& data);

  const QuantizationParams& params() const { return params_; }
  std::size_t dim() const { return params_.dim(); }

  std::vector<std::uint8_t> encode(std::span<const float> v) const;
  void encode_into(std::span<const float> v, std::span<std::uint8_t> out) const;
  std::vector<float> decode(std::span<const std::uint8_t> code) const;
  void decode_into(std::span<const std::uint8_t> code, std::span<float> out) const;

  // Row-major n x d' codes for every row of `data`.
  std::vector<std::uint8_t> encode_matrix(const EmbeddingMatrix& data) const;

  // Half of one quantization step in dimension j.
  double half_step(std::size_t j) const;

 private:
  QuantizationParams params_;
};

}  // namespace sbc
