#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "sbc/catalog.hpp"

namespace sbc {

using RowIndex = std::uint32_t;

// Axis-aligned box in code space with inclusive bounds. A dimension left at
// [0, 255] is unbounded.
struct Box {
  std::vector<std::uint8_t> lower;
  std::vector<std::uint8_t> upper;

  static Box unbounded(std::size_t dim);

  std::size_t dim() const { return lower.size(); }
  bool valid() const;
  bool empty() const;  // some lower[j] > upper[j]
  bool contains(std::span<const std::uint8_t> code) const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct Neighbor {
  RowIndex row = 0;
  double distance = 0.0;  // Euclidean, code space

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Exact search when max_leaves == 0, otherwise best-first search that stops
// after scanning max_leaves leaves.
struct KnnMode {
  std::size_t max_leaves = 0;

  static KnnMode exact() { return {}; }
  static KnnMode approximate(std::size_t max_leaves) { return {max_leaves}; }
  bool is_exact() const { return max_leaves == 0; }
};

struct QueryStats {
  std::size_t nodes_visited = 0;
  std::size_t leaves_visited = 0;  // leaves scanned plus leaves reported whole
  std::size_t rows_scanned = 0;    // rows compared one by one
};

// Immutable k-d tree over u8 codes. Each internal node splits the widest
// dimension (lowest index on ties) at the median: rows with code <= split go
// left, the rest right. Every node stores the tight bounding box of its rows so
// queries can prune and report whole subtrees.
class KdTree {
 public:
  static constexpr std::size_t kDefaultLeafSize = 32;
  static constexpr std::uint32_t kNoChild = std::numeric_limits<std::uint32_t>::max();

  struct Node {
    std::uint32_t begin = 0;  // row range [begin, end) in the permuted order
    std::uint32_t end = 0;
    std::uint32_t left = kNoChild;
    std::uint32_t right = kNoChild;
    std::uint32_t leaves = 1;  // leaves in this subtree
    std::uint16_t split_dim = 0;
    std::uint8_t split_value = 0;

    bool is_leaf() const { return left == kNoChild; }
    friend bool operator==(const Node&, const Node&) = default;
  };

  KdTree() = default;

  // Throws InvalidArgument for an empty catalog or leaf_size == 0.
  static KdTree build(const QuantizedCatalog& catalog, std::size_t leaf_size = kDefaultLeafSize);
  static KdTree build(std::span<const std::uint8_t> codes, std::size_t dim,
                      std::size_t leaf_size = kDefaultLeafSize);

  // Up to k nearest rows sorted by (distance, row). k larger than the tree
  // returns every row.
  std::vector<Neighbor> knn(std::span<const std::uint8_t> query, std::size_t k,
                            KnnMode mode = KnnMode::exact(), QueryStats* stats = nullptr) const;

  // Rows inside `box`, ascending.
  std::vector<RowIndex> range_query(const Box& box, QueryStats* stats = nullptr) const;

  // Appends rows inside `box` to `out` without sorting.
  void collect_range(const Box& box, std::vector<RowIndex>& out, QueryStats* stats = nullptr) const;

  std::size_t size() const { return perm_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t leaf_size() const { return leaf_size_; }
  std::size_t leaf_count() const { return nodes_.empty() ? 0 : nodes_.front().leaves; }

  const std::vector<Node>& nodes() const { return nodes_; }
  std::span<const std::uint8_t> node_min(std::size_t node) const {
    return {bounds_.data() + node * 2 * dim_, dim_};
  }
  std::span<const std::uint8_t> node_max(std::size_t node) const {
    return {bounds_.data() + node * 2 * dim_ + dim_, dim_};
  }
  // Catalog row stored at permuted position `pos`, and its code.
  RowIndex row_at(std::size_t pos) const { return perm_[pos]; }
  std::span<const std::uint8_t> code_at(std::size_t pos) const {
    return {codes_.data() + pos * dim_, dim_};
  }

  // "CBKD" | version u16 | dim u16 | rows u64 | leaf_size u32 | codes checksum u64 |
  // node count u32 | nodes | bounds u8[nodes * 2 * dim] | perm u32[rows]; little-endian.
  std::vector<std::uint8_t> serialize() const;
  void write(const std::filesystem::path& path) const;
  // The catalog supplies the codes; it must be the one the tree was built from.
  static KdTree read(const std::filesystem::path& path, const QuantizedCatalog& catalog);

 private:
  std::uint32_t build_node(std::uint32_t begin, std::uint32_t end, std::vector<RowIndex>& perm,
                           std::span<const std::uint8_t> codes, std::vector<std::uint8_t>& scratch);

  std::size_t dim_ = 0;
  std::size_t leaf_size_ = kDefaultLeafSize;
  std::uint64_t checksum_ = 0;
  std::vector<Node> nodes_;
  std::vector<std::uint8_t> bounds_;  // per node: min[dim] then max[dim]
  std::vector<RowIndex> perm_;
  std::vector<std::uint8_t> codes_;  // codes in permuted order
};

// FNV-1a over the code bytes; ties a serialized tree to its catalog.
std::uint64_t codes_checksum(std::span<const std::uint8_t> codes);

}  // namespace sbc
