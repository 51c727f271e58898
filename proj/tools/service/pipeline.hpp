#pragma once

// Operator steps behind the CLI: ingest raw embeddings, build the index and
// generate a toy dataset.

#include <cstddef>
#include <cstdint>
#include <filesystem>

namespace sbc::service {

struct IngestOptions {
  std::filesystem::path embeddings;  // headerless f32, head input dim per row
  std::filesystem::path meta;        // JSON lines, one record per row
  std::filesystem::path head;
  std::filesystem::path out;         // catalog; metadata goes to <out>.meta.jsonl
};

struct IngestReport {
  std::size_t rows = 0;
  std::size_t input_dim = 0;
  std::size_t dim = 0;
  std::uintmax_t code_bytes = 0;
};

// Embeds every row with the head, fits the quantizer on the result and writes
// the catalog.
IngestReport ingest(const IngestOptions& options);

struct IndexReport {
  std::size_t rows = 0;
  std::size_t nodes = 0;
  std::size_t leaves = 0;
  double build_ms = 0.0;
};

IndexReport build_index(const std::filesystem::path& catalog, const std::filesystem::path& out,
                        std::size_t leaf_size);

struct ToyOptions {
  std::filesystem::path out;
  std::size_t classes = 5;
  std::size_t per_class = 40;
  std::uint64_t seed = 0;
};

// Writes embeddings.f32, meta.jsonl, views_a.f32 / views_b.f32 (paired views
// for train-head), images/<id>.bmp and sbc.toml into options.out.
void make_toy(const ToyOptions& options);

}  // namespace sbc::service
