#include "pipeline.hpp"

#include <array>
#include <chrono>
#include <fstream>

#include "sbc/catalog.hpp"
#include "sbc/error.hpp"
#include "sbc/head.hpp"
#include "sbc/kdtree.hpp"
#include "sbc/quantizer.hpp"
#include "sbc/synthetic.hpp"

namespace sbc::service {

namespace {

void put_le(std::ofstream& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

// 24-bit uncompressed BMP with a diagonal gradient in `rgb`.
void write_bmp(const std::filesystem::path& path, std::array<std::uint8_t, 3> rgb, int size) {
  const int row_bytes = (size * 3 + 3) & ~3;
  const std::uint32_t pixels = static_cast<std::uint32_t>(row_bytes * size);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("BM", 2);
  put_le(out, 54 + pixels, 4);
  put_le(out, 0, 4);
  put_le(out, 54, 4);
  put_le(out, 40, 4);
  put_le(out, static_cast<std::uint32_t>(size), 4);
  put_le(out, static_cast<std::uint32_t>(size), 4);
  put_le(out, 1, 2);
  put_le(out, 24, 2);
  put_le(out, 0, 4);
  put_le(out, pixels, 4);
  put_le(out, 2835, 4);
  put_le(out, 2835, 4);
  put_le(out, 0, 4);
  put_le(out, 0, 4);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double shade = 0.55 + 0.45 * (x + y) / (2.0 * size);
      for (int c = 2; c >= 0; --c) out.put(static_cast<char>(rgb[c] * shade));
    }
    for (int pad = size * 3; pad < row_bytes; ++pad) out.put(0);
  }
}

}  // namespace

IngestReport ingest(const IngestOptions& options) {
  const HeadParams head = read_head(options.head);
  const EmbeddingMatrix raw = read_f32_matrix(options.embeddings, head.input_dim());
  std::vector<CatalogRecord> records = read_metadata(options.meta);
  if (records.size() != raw.rows()) {
    throw InvalidArgument(options.meta.string() + " has " + std::to_string(records.size()) +
                          " records but " + options.embeddings.string() + " has " +
                          std::to_string(raw.rows()) + " rows");
  }
  if (raw.empty()) throw InvalidArgument("no embeddings to ingest");
  raw.check_finite();

  const EmbeddingMatrix embedded = forward_batch(head, raw);
  const Quantizer quantizer = Quantizer::fit(embedded);
  QuantizedCatalog catalog(quantizer.params(), quantizer.encode_matrix(embedded),
                           std::move(records));
  write_catalog(catalog, options.out);

  const CatalogHeader header = read_catalog_header(options.out);
  IngestReport report;
  report.rows = catalog.size();
  report.input_dim = head.input_dim();
  report.dim = catalog.dim();
  report.code_bytes = std::filesystem::file_size(options.out) - header.codes_offset();
  return report;
}

IndexReport build_index(const std::filesystem::path& catalog_path,
                        const std::filesystem::path& out, std::size_t leaf_size) {
  const QuantizedCatalog catalog = read_catalog(catalog_path);
  const auto start = std::chrono::steady_clock::now();
  const KdTree tree = KdTree::build(catalog, leaf_size);
  IndexReport report;
  report.build_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  tree.write(out);
  report.rows = tree.size();
  report.nodes = tree.nodes().size();
  report.leaves = tree.leaf_count();
  return report;
}

void make_toy(const ToyOptions& options) {
  namespace fs = std::filesystem;
  fs::create_directories(options.out / "images");

  synthetic::PairedViewConfig cfg;
  cfg.classes = options.classes;
  cfg.items_per_class = options.per_class;
  cfg.seed = options.seed;
  const auto data = synthetic::paired_views(cfg);

  write_f32_matrix(data.items, options.out / "embeddings.f32");
  write_f32_matrix(data.view_a, options.out / "views_a.f32");
  write_f32_matrix(data.view_b, options.out / "views_b.f32");

  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette = {{
      {220, 60, 60}, {60, 160, 70}, {60, 90, 210}, {230, 170, 40},
      {150, 70, 190}, {40, 170, 170}, {200, 100, 150}, {120, 120, 120},
  }};
  std::vector<CatalogRecord> records(data.items.rows());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto label = data.labels[i];
    const std::string name = "images/" + std::to_string(i) + ".bmp";
    records[i] = {i, name, label};
    write_bmp(options.out / name, kPalette[static_cast<std::size_t>(label) % kPalette.size()], 32);
  }
  write_metadata(records, options.out / "meta.jsonl");

  std::ofstream config(options.out / "sbc.toml");
  config << "# Toy dataset; build the catalog and index first:\n"
            "#   sbc train-head --view-a views_a.f32 --view-b views_b.f32 --out head.cbhd\n"
            "#   sbc ingest --embeddings embeddings.f32 --meta meta.jsonl --head head.cbhd "
            "--out toy.cbrx\n"
            "#   sbc build-index --catalog toy.cbrx --out toy.cbkd\n"
            "listen = \"127.0.0.1:8080\"\n"
            "cors = [\"*\"]\n"
            "\n"
            "[finetune]\n"
            "model = \"dbranch\"\n"
            "negative_samples = 10\n"
            "negative_weight = 10\n"
            "\n"
            "[dataset.toy]\n"
            "catalog = \"toy.cbrx\"\n"
            "index = \"toy.cbkd\"\n"
            "head = \"head.cbhd\"\n";
  if (!config) throw IoError("cannot write " + (options.out / "sbc.toml").string());
}

}  // namespace sbc::service
