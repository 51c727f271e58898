#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace sbc {

// Row-major n x d matrix of 32-bit floats.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t dim);
  // Takes ownership of `data`; throws InvalidArgument unless data.size() == rows * dim.
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return rows_ == 0; }

  std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  float& at(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }
  float at(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  // Throws InvalidArgument if any value is NaN or infinite.
  void check_finite() const;

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 1;
  std::vector<float> data_;
};

// Headerless little-endian f32 file, row-major; the row count is file_size / (4 * dim).
EmbeddingMatrix read_f32_matrix(const std::filesystem::path& path, std::size_t dim);
void write_f32_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path);

}  // namespace sbc
