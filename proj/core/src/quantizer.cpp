#include "sbc/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sbc/error.hpp"

namespace sbc {

namespace {

void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw InvalidArgument(std::string(what) + " has dimension " + std::to_string(got) +
                          ", quantizer expects " + std::to_string(want));
  }
}

}  // namespace

Quantizer::Quantizer(QuantizationParams params) : params_(std::move(params)) {
  params_.validate();
}

Quantizer Quantizer::fit(const EmbeddingMatrix& data) {
  if (data.empty()) throw InvalidArgument("cannot fit a quantizer on an empty matrix");
  data.check_finite();
  QuantizationParams p;
  auto first = data.row(0);
  p.lo.assign(first.begin(), first.end());
  p.hi.assign(first.begin(), first.end());
  for (std::size_t i = 1; i < data.rows(); ++i) {
    auto r = data.row(i);
    for (std::size_t j = 0; j < data.dim(); ++j) {
      p.lo[j] = std::min(p.lo[j], r[j]);
      p.hi[j] = std::max(p.hi[j], r[j]);
    }
  }
  return Quantizer(std::move(p));
}

void Quantizer::encode_into(std::span<const float> v, std::span<std::uint8_t> out) const {
  check_dim(v.size(), dim(), "vector");
  check_dim(out.size(), dim(), "code buffer");
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (!std::isfinite(v[j])) {
      throw InvalidArgument("cannot encode non-finite value in dimension " + std::to_string(j));
    }
    const double lo = params_.lo[j];
    const double range = static_cast<double>(params_.hi[j]) - lo;
    if (range <= 0.0) {
      out[j] = 0;
      continue;
    }
    // std::round rounds halfway cases away from zero.
    const double scaled = std::round((static_cast<double>(v[j]) - lo) / range * 255.0);
    out[j] = static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
  }
}

std::vector<std::uint8_t> Quantizer::encode(std::span<const float> v) const {
  std::vector<std::uint8_t> out(dim());
  encode_into(v, out);
  return out;
}

void Quantizer::decode_into(std::span<const std::uint8_t> code, std::span<float> out) const {
  check_dim(code.size(), dim(), "code");
  check_dim(out.size(), dim(), "output buffer");
  for (std::size_t j = 0; j < code.size(); ++j) {
    const double lo = params_.lo[j];
    const double range = static_cast<double>(params_.hi[j]) - lo;
    out[j] = static_cast<float>(lo + range * code[j] / 255.0);
  }
}

std::vector<float> Quantizer::decode(std::span<const std::uint8_t> code) const {
  std::vector<float> out(dim());
  decode_into(code, out);
  return out;
}

std::vector<std::uint8_t> Quantizer::encode_matrix(const EmbeddingMatrix& data) const {
  check_dim(data.dim(), dim(), "matrix");
  std::vector<std::uint8_t> codes(data.rows() * dim());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    encode_into(data.row(i), std::span(codes).subspan(i * dim(), dim()));
  }
  return codes;
}

double Quantizer::half_step(std::size_t j) const {
  return (static_cast<double>(params_.hi[j]) - params_.lo[j]) / (2.0 * 255.0);
}

}  // namespace sbc
