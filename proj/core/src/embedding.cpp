#include "sbc/embedding.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "binary_io.hpp"
#include "sbc/error.hpp"

namespace sbc {

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim)
    : EmbeddingMatrix(rows, dim, std::vector<float>(rows * dim, 0.0f)) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data)
    : rows_(rows), dim_(dim), data_(std::move(data)) {
  if (dim_ == 0) throw InvalidArgument("embedding dimension must be >= 1");
  if (data_.size() != rows_ * dim_) {
    throw InvalidArgument("embedding data has " + std::to_string(data_.size()) +
                          " values, expected " + std::to_string(rows_ * dim_));
  }
}

void EmbeddingMatrix::check_finite() const {
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (!std::isfinite(data_[k])) {
      throw InvalidArgument("non-finite embedding value at row " + std::to_string(k / dim_) +
                            ", column " + std::to_string(k % dim_));
    }
  }
}

EmbeddingMatrix read_f32_matrix(const std::filesystem::path& path, std::size_t dim) {
  if (dim == 0) throw InvalidArgument("dimension must be >= 1");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto size = std::filesystem::file_size(path);
  const auto row_bytes = dim * sizeof(float);
  if (size % row_bytes != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(size) +
                      " is not a multiple of " + std::to_string(row_bytes) + " bytes");
  }
  const std::size_t rows = size / row_bytes;
  io::LeReader reader(in);
  return EmbeddingMatrix(rows, dim, reader.f32s(rows * dim, "embedding values"));
}

void write_f32_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::LeWriter(out).f32s(m.data());
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sbc
