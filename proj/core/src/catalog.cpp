#include "sbc/catalog.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "sbc/error.hpp"

namespace sbc {

namespace {

constexpr std::string_view kCatalogMagic = "CBRX";

void replace_file(const std::filesystem::path& tmp, const std::filesystem::path& dst) {
  std::error_code ec;
  std::filesystem::rename(tmp, dst, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot move " + tmp.string() + " to " + dst.string() + ": " + ec.message());
  }
}

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".tmp");
}

}  // namespace

void QuantizationParams::validate() const {
  if (lo.empty()) throw InvalidArgument("quantization dimension must be >= 1");
  if (lo.size() != hi.size()) throw InvalidArgument("quantization lo/hi length mismatch");
  if (lo.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw InvalidArgument("quantization dimension exceeds 65535");
  }
  if (levels != kQuantizationLevels) throw InvalidArgument("quantization levels must be 256");
  for (std::size_t j = 0; j < lo.size(); ++j) {
    if (!std::isfinite(lo[j]) || !std::isfinite(hi[j])) {
      throw InvalidArgument("non-finite quantization range in dimension " + std::to_string(j));
    }
    if (lo[j] > hi[j]) {
      throw InvalidArgument("quantization lo > hi in dimension " + std::to_string(j));
    }
  }
}

QuantizedCatalog::QuantizedCatalog(QuantizationParams params, std::vector<std::uint8_t> codes,
                                   std::vector<CatalogRecord> records)
    : params_(std::move(params)), codes_(std::move(codes)), records_(std::move(records)) {
  params_.validate();
  if (codes_.size() != records_.size() * params_.dim()) {
    throw InvalidArgument("catalog has " + std::to_string(codes_.size()) + " code bytes for " +
                          std::to_string(records_.size()) + " records of dimension " +
                          std::to_string(params_.dim()));
  }
  row_of_id_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].uri.empty()) {
      throw InvalidArgument("record " + std::to_string(records_[i].id) + " has an empty uri");
    }
    if (!row_of_id_.emplace(records_[i].id, i).second) {
      throw InvalidArgument("duplicate record id " + std::to_string(records_[i].id));
    }
  }
}

std::optional<std::size_t> QuantizedCatalog::find_row(std::uint64_t id) const {
  auto it = row_of_id_.find(id);
  if (it == row_of_id_.end()) return std::nullopt;
  return it->second;
}

bool QuantizedCatalog::has_labels() const {
  for (const auto& r : records_) {
    if (!r.label) return false;
  }
  return true;
}

std::uint64_t CatalogHeader::codes_offset() const {
  // magic + version + dim + rows + levels + lo[] + hi[]
  return 4 + 2 + 2 + 8 + 2 + 2 * 4 * static_cast<std::uint64_t>(dim());
}

std::filesystem::path metadata_path(const std::filesystem::path& catalog_path) {
  return std::filesystem::path(catalog_path.string() + ".meta.jsonl");
}

void write_metadata(std::span<const CatalogRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) {
    nlohmann::ordered_json line = {{"id", r.id}, {"uri", r.uri}, {"label", nullptr}};
    if (r.label) line["label"] = *r.label;
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<CatalogRecord> read_metadata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<CatalogRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CatalogRecord r;
      r.id = j.at("id").get<std::uint64_t>();
      r.uri = j.at("uri").get<std::string>();
      if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
        r.label = it->get<std::int64_t>();
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_catalog(const QuantizedCatalog& catalog, const std::filesystem::path& path) {
  // The constructor enforces the invariants, but params may still be empty for a
  // default-constructed catalog.
  catalog.params().validate();

  const auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    io::LeWriter w(out);
    w.magic(kCatalogMagic);
    w.u16(kCatalogVersion);
    w.u16(static_cast<std::uint16_t>(catalog.dim()));
    w.u64(catalog.size());
    w.u16(catalog.params().levels);
    w.f32s(catalog.params().lo);
    w.f32s(catalog.params().hi);
    w.bytes(catalog.codes());
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  const auto meta = metadata_path(path);
  const auto meta_tmp = temp_sibling(meta);
  write_metadata(catalog.records(), meta_tmp);
  replace_file(tmp, path);
  replace_file(meta_tmp, meta);
}

namespace {

CatalogHeader read_header(std::istream& in) {
  io::LeReader r(in);
  r.expect_magic(kCatalogMagic);
  CatalogHeader h;
  h.version = r.u16("version");
  if (h.version != kCatalogVersion) {
    throw FormatError("unsupported catalog version " + std::to_string(h.version));
  }
  const std::uint16_t dim = r.u16("dimension");
  if (dim == 0) throw FormatError("catalog dimension is zero");
  h.rows = r.u64("row count");
  h.params.levels = r.u16("levels");
  if (h.params.levels != kQuantizationLevels) {
    throw FormatError("catalog levels must be 256, got " + std::to_string(h.params.levels));
  }
  h.params.lo = r.f32s(dim, "lo");
  h.params.hi = r.f32s(dim, "hi");
  try {
    h.params.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return h;
}

}  // namespace

CatalogHeader read_catalog_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_header(in);
}

QuantizedCatalog read_catalog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  CatalogHeader h = read_header(in);

  const auto file_size = std::filesystem::file_size(path);
  const auto code_bytes = h.rows * h.dim();
  if (h.rows != 0 && code_bytes / h.rows != h.dim()) throw FormatError("row count overflows");
  if (file_size < h.codes_offset() || file_size - h.codes_offset() < code_bytes) {
    throw FormatError(path.string() + ": truncated, header declares " + std::to_string(h.rows) +
                      " rows but only " + std::to_string(file_size - h.codes_offset()) +
                      " code bytes are present");
  }
  if (file_size - h.codes_offset() != code_bytes) {
    throw FormatError(path.string() + ": trailing bytes after code section");
  }
  std::vector<std::uint8_t> codes(code_bytes);
  io::LeReader(in).bytes(codes, "codes");

  auto records = read_metadata(metadata_path(path));
  if (records.size() != h.rows) {
    throw FormatError("metadata has " + std::to_string(records.size()) +
                      " records, catalog header declares " + std::to_string(h.rows));
  }
  try {
    return QuantizedCatalog(std::move(h.params), std::move(codes), std::move(records));
  } catch (const InvalidArgument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

double storage_reduction_factor(std::size_t d_in, std::size_t d_out) {
  if (d_in == 0 || d_out == 0) throw InvalidArgument("dimensions must be >= 1");
  return static_cast<double>(d_in * sizeof(float)) / static_cast<double>(d_out);
}

}  // namespace sbc
