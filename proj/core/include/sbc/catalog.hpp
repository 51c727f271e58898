#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sbc {

inline constexpr std::uint16_t kQuantizationLevels = 256;
inline constexpr std::uint16_t kCatalogVersion = 1;

// Per-dimension affine range of the 8-bit code grid.
struct QuantizationParams {
  std::vector<float> lo;
  std::vector<float> hi;
  std::uint16_t levels = kQuantizationLevels;

  std::size_t dim() const { return lo.size(); }
  // Throws InvalidArgument on size mismatch, lo > hi, non-finite bounds, or levels != 256.
  void validate() const;

  friend bool operator==(const QuantizationParams&, const QuantizationParams&) = default;
};

struct CatalogRecord {
  std::uint64_t id = 0;
  std::string uri;
  std::optional<std::int64_t> label;  // evaluation-only class id

  friend bool operator==(const CatalogRecord&, const CatalogRecord&) = default;
};

// n x d' byte codes plus the records they describe, in the same row order.
// Immutable once constructed.
class QuantizedCatalog {
 public:
  QuantizedCatalog() = default;
  // Validates all invariants; throws InvalidArgument on violation.
  QuantizedCatalog(QuantizationParams params, std::vector<std::uint8_t> codes,
                   std::vector<CatalogRecord> records);

  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return params_.dim(); }
  const QuantizationParams& params() const { return params_; }

  std::span<const std::uint8_t> codes() const { return codes_; }
  std::span<const std::uint8_t> code(std::size_t row) const {
    return {codes_.data() + row * dim(), dim()};
  }

  const std::vector<CatalogRecord>& records() const { return records_; }
  const CatalogRecord& record(std::size_t row) const { return records_[row]; }

  std::optional<std::size_t> find_row(std::uint64_t id) const;
  bool has_labels() const;

  friend bool operator==(const QuantizedCatalog& a, const QuantizedCatalog& b) {
    return a.params_ == b.params_ && a.codes_ == b.codes_ && a.records_ == b.records_;
  }

 private:
  QuantizationParams params_;
  std::vector<std::uint8_t> codes_;
  std::vector<CatalogRecord> records_;
  std::unordered_map<std::uint64_t, std::size_t> row_of_id_;
};

// Fixed-size part of the binary code file; readable without touching the codes.
struct CatalogHeader {
  std::uint16_t version = kCatalogVersion;
  std::uint64_t rows = 0;
  QuantizationParams params;

  std::size_t dim() const { return params.dim(); }
  std::uint64_t codes_offset() const;  // byte offset of the first code
};

// Sidecar holding one JSON object per row: <catalog path> + ".meta.jsonl".
std::filesystem::path metadata_path(const std::filesystem::path& catalog_path);

// Writes the binary code file and its metadata sidecar. Each file is written to a
// temporary name and renamed into place.
void write_catalog(const QuantizedCatalog& catalog, const std::filesystem::path& path);
QuantizedCatalog read_catalog(const std::filesystem::path& path);
CatalogHeader read_catalog_header(const std::filesystem::path& path);

// JSON lines: {"id": <u64>, "uri": "<string>", "label": <int|null>}
void write_metadata(std::span<const CatalogRecord> records, const std::filesystem::path& path);
std::vector<CatalogRecord> read_metadata(const std::filesystem::path& path);

// Bytes of a d_in-dimensional f32 vector over bytes of a d_out-dimensional u8 code.
double storage_reduction_factor(std::size_t d_in, std::size_t d_out);

}  // namespace sbc
