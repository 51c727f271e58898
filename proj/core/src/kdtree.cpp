#include "sbc/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <queue>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "sbc/error.hpp"

namespace sbc {

namespace {

constexpr std::string_view kTreeMagic = "CBKD";
constexpr std::uint16_t kTreeVersion = 1;

std::uint64_t squared_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::uint64_t sum = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const int diff = static_cast<int>(a[j]) - static_cast<int>(b[j]);
    sum += static_cast<std::uint64_t>(diff * diff);
  }
  return sum;
}

// Squared distance from `q` to the nearest point of [lo, hi].
std::uint64_t box_distance(std::span<const std::uint8_t> q, std::span<const std::uint8_t> lo,
                           std::span<const std::uint8_t> hi) {
  std::uint64_t sum = 0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    int diff = 0;
    if (q[j] < lo[j]) {
      diff = lo[j] - q[j];
    } else if (q[j] > hi[j]) {
      diff = q[j] - hi[j];
    }
    sum += static_cast<std::uint64_t>(diff * diff);
  }
  return sum;
}

struct Candidate {
  std::uint64_t dist = 0;
  RowIndex row = 0;
  bool operator<(const Candidate& o) const { return dist != o.dist ? dist < o.dist : row < o.row; }
};

}  // namespace

Box Box::unbounded(std::size_t dim) {
  return {std::vector<std::uint8_t>(dim, 0), std::vector<std::uint8_t>(dim, 255)};
}

bool Box::valid() const { return lower.size() == upper.size() && !lower.empty(); }

bool Box::empty() const {
  for (std::size_t j = 0; j < lower.size(); ++j) {
    if (lower[j] > upper[j]) return true;
  }
  return false;
}

bool Box::contains(std::span<const std::uint8_t> code) const {
  for (std::size_t j = 0; j < lower.size(); ++j) {
    if (code[j] < lower[j] || code[j] > upper[j]) return false;
  }
  return true;
}

std::uint64_t codes_checksum(std::span<const std::uint8_t> codes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto c : codes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

KdTree KdTree::build(const QuantizedCatalog& catalog, std::size_t leaf_size) {
  return build(catalog.codes(), catalog.dim(), leaf_size);
}

KdTree KdTree::build(std::span<const std::uint8_t> codes, std::size_t dim, std::size_t leaf_size) {
  if (dim == 0) throw InvalidArgument("k-d tree dimension must be >= 1");
  if (leaf_size == 0) throw InvalidArgument("leaf size must be >= 1");
  if (codes.empty() || codes.size() % dim != 0) {
    throw InvalidArgument("cannot build a k-d tree over an empty catalog");
  }
  const std::size_t rows = codes.size() / dim;
  if (rows > std::numeric_limits<RowIndex>::max() / 2) {
    throw InvalidArgument("catalog too large for 32-bit row indices");
  }

  KdTree tree;
  tree.dim_ = dim;
  tree.leaf_size_ = leaf_size;
  tree.checksum_ = codes_checksum(codes);
  std::vector<RowIndex> perm(rows);
  for (std::size_t i = 0; i < rows; ++i) perm[i] = static_cast<RowIndex>(i);
  std::vector<std::uint8_t> scratch;
  scratch.reserve(rows);
  tree.nodes_.reserve(2 * (rows / leaf_size + 1));
  tree.build_node(0, static_cast<std::uint32_t>(rows), perm, codes, scratch);

  tree.codes_.resize(codes.size());
  for (std::size_t pos = 0; pos < rows; ++pos) {
    std::copy_n(codes.begin() + static_cast<std::ptrdiff_t>(perm[pos] * dim), dim,
                tree.codes_.begin() + static_cast<std::ptrdiff_t>(pos * dim));
  }
  tree.perm_ = std::move(perm);
  return tree;
}

std::uint32_t KdTree::build_node(std::uint32_t begin, std::uint32_t end,
                                 std::vector<RowIndex>& perm, std::span<const std::uint8_t> codes,
                                 std::vector<std::uint8_t>& scratch) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  bounds_.resize(bounds_.size() + 2 * dim_);
  std::uint8_t* lo = bounds_.data() + index * 2 * dim_;
  std::uint8_t* hi = lo + dim_;
  std::fill_n(lo, dim_, std::uint8_t{255});
  std::fill_n(hi, dim_, std::uint8_t{0});
  for (std::uint32_t pos = begin; pos < end; ++pos) {
    const std::uint8_t* c = codes.data() + static_cast<std::size_t>(perm[pos]) * dim_;
    for (std::size_t j = 0; j < dim_; ++j) {
      lo[j] = std::min(lo[j], c[j]);
      hi[j] = std::max(hi[j], c[j]);
    }
  }

  std::size_t split_dim = 0;
  int spread = -1;
  for (std::size_t j = 0; j < dim_; ++j) {
    if (hi[j] - lo[j] > spread) {
      spread = hi[j] - lo[j];
      split_dim = j;
    }
  }
  const auto first = perm.begin() + begin;
  const auto last = perm.begin() + end;
  if (end - begin <= leaf_size_ || spread == 0) {
    std::sort(first, last);
    return index;
  }

  scratch.clear();
  for (std::uint32_t pos = begin; pos < end; ++pos) {
    scratch.push_back(codes[static_cast<std::size_t>(perm[pos]) * dim_ + split_dim]);
  }
  const auto median = scratch.begin() + static_cast<std::ptrdiff_t>((scratch.size() - 1) / 2);
  std::nth_element(scratch.begin(), median, scratch.end());
  std::uint8_t split = *median;
  if (split == hi[split_dim]) --split;  // keep the right child non-empty

  const auto mid = std::stable_partition(first, last, [&](RowIndex row) {
    return codes[static_cast<std::size_t>(row) * dim_ + split_dim] <= split;
  });
  const auto mid_pos = static_cast<std::uint32_t>(mid - perm.begin());

  nodes_[index].split_dim = static_cast<std::uint16_t>(split_dim);
  nodes_[index].split_value = split;
  const std::uint32_t left = build_node(begin, mid_pos, perm, codes, scratch);
  const std::uint32_t right = build_node(mid_pos, end, perm, codes, scratch);
  nodes_[index].left = left;
  nodes_[index].right = right;
  nodes_[index].leaves = nodes_[left].leaves + nodes_[right].leaves;
  return index;
}

std::vector<Neighbor> KdTree::knn(std::span<const std::uint8_t> query, std::size_t k,
                                  KnnMode mode, QueryStats* stats) const {
  if (query.size() != dim_) {
    throw InvalidArgument("query has dimension " + std::to_string(query.size()) +
                          ", index expects " + std::to_string(dim_));
  }
  if (k == 0) throw InvalidArgument("k must be >= 1");
  k = std::min(k, size());
  QueryStats local;
  QueryStats& st = stats != nullptr ? *stats : local;

  using Pending = std::pair<std::uint64_t, std::uint32_t>;  // (box distance, node)
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> frontier;
  std::priority_queue<Candidate> best;  // max-heap, worst on top
  frontier.emplace(box_distance(query, node_min(0), node_max(0)), 0);

  while (!frontier.empty()) {
    const auto [bound, index] = frontier.top();
    frontier.pop();
    if (best.size() == k && bound > best.top().dist) break;
    ++st.nodes_visited;
    const Node& node = nodes_[index];
    if (!node.is_leaf()) {
      for (std::uint32_t child : {node.left, node.right}) {
        const auto d = box_distance(query, node_min(child), node_max(child));
        if (best.size() < k || d <= best.top().dist) frontier.emplace(d, child);
      }
      continue;
    }
    ++st.leaves_visited;
    for (std::uint32_t pos = node.begin; pos < node.end; ++pos) {
      ++st.rows_scanned;
      const Candidate c{squared_distance(query, code_at(pos)), perm_[pos]};
      if (best.size() < k) {
        best.push(c);
      } else if (c < best.top()) {
        best.pop();
        best.push(c);
      }
    }
    if (!mode.is_exact() && st.leaves_visited >= mode.max_leaves) break;
  }

  std::vector<Neighbor> out(best.size());
  for (auto it = out.rbegin(); it != out.rend(); ++it) {
    *it = {best.top().row, std::sqrt(static_cast<double>(best.top().dist))};
    best.pop();
  }
  return out;
}

void KdTree::collect_range(const Box& box, std::vector<RowIndex>& out, QueryStats* stats) const {
  if (box.dim() != dim_ || !box.valid()) {
    throw InvalidArgument("box has dimension " + std::to_string(box.dim()) + ", index expects " +
                          std::to_string(dim_));
  }
  if (nodes_.empty() || box.empty()) return;
  QueryStats local;
  QueryStats& st = stats != nullptr ? *stats : local;

  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const std::uint32_t index = stack.back();
    stack.pop_back();
    ++st.nodes_visited;
    const auto lo = node_min(index);
    const auto hi = node_max(index);
    bool disjoint = false;
    bool inside = true;
    for (std::size_t j = 0; j < dim_; ++j) {
      if (hi[j] < box.lower[j] || lo[j] > box.upper[j]) {
        disjoint = true;
        break;
      }
      inside = inside && box.lower[j] <= lo[j] && hi[j] <= box.upper[j];
    }
    if (disjoint) continue;
    const Node& node = nodes_[index];
    if (inside) {
      st.leaves_visited += node.leaves;
      out.insert(out.end(), perm_.begin() + node.begin, perm_.begin() + node.end);
      continue;
    }
    if (node.is_leaf()) {
      ++st.leaves_visited;
      for (std::uint32_t pos = node.begin; pos < node.end; ++pos) {
        ++st.rows_scanned;
        if (box.contains(code_at(pos))) out.push_back(perm_[pos]);
      }
      continue;
    }
    stack.push_back(node.right);
    stack.push_back(node.left);
  }
}

std::vector<RowIndex> KdTree::range_query(const Box& box, QueryStats* stats) const {
  std::vector<RowIndex> out;
  collect_range(box, out, stats);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::uint8_t> KdTree::serialize() const {
  std::ostringstream buf(std::ios::binary);
  io::LeWriter w(buf);
  w.magic(kTreeMagic);
  w.u16(kTreeVersion);
  w.u16(static_cast<std::uint16_t>(dim_));
  w.u64(perm_.size());
  w.u32(static_cast<std::uint32_t>(leaf_size_));
  w.u64(checksum_);
  w.u32(static_cast<std::uint32_t>(nodes_.size()));
  for (const Node& n : nodes_) {
    w.u32(n.begin);
    w.u32(n.end);
    w.u32(n.left);
    w.u32(n.right);
    w.u32(n.leaves);
    w.u16(n.split_dim);
    w.u8(n.split_value);
  }
  w.bytes(bounds_);
  for (RowIndex r : perm_) w.u32(r);
  const std::string s = std::move(buf).str();
  return {s.begin(), s.end()};
}

void KdTree::write(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

KdTree KdTree::read(const std::filesystem::path& path, const QuantizedCatalog& catalog) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  io::LeReader r(in);
  r.expect_magic(kTreeMagic);
  if (const auto v = r.u16("version"); v != kTreeVersion) {
    throw FormatError("unsupported index version " + std::to_string(v));
  }
  KdTree tree;
  tree.dim_ = r.u16("dimension");
  const std::uint64_t rows = r.u64("row count");
  tree.leaf_size_ = r.u32("leaf size");
  tree.checksum_ = r.u64("checksum");
  if (tree.dim_ != catalog.dim() || rows != catalog.size()) {
    throw FormatError(path.string() + ": index covers " + std::to_string(rows) + " x " +
                      std::to_string(tree.dim_) + " codes, catalog has " +
                      std::to_string(catalog.size()) + " x " + std::to_string(catalog.dim()));
  }
  if (tree.checksum_ != codes_checksum(catalog.codes())) {
    throw FormatError(path.string() + ": index was built from a different catalog");
  }
  const std::uint32_t node_count = r.u32("node count");
  if (node_count == 0 || node_count > 2 * rows) throw FormatError("implausible node count");
  tree.nodes_.resize(node_count);
  for (Node& n : tree.nodes_) {
    n.begin = r.u32("node");
    n.end = r.u32("node");
    n.left = r.u32("node");
    n.right = r.u32("node");
    n.leaves = r.u32("node");
    n.split_dim = r.u16("node");
    n.split_value = r.u8("node");
    const bool leaf = n.left == kNoChild;
    if (n.begin > n.end || n.end > rows || n.split_dim >= tree.dim_ ||
        (!leaf && (n.left >= node_count || n.right >= node_count))) {
      throw FormatError(path.string() + ": corrupt node");
    }
  }
  tree.bounds_.resize(static_cast<std::size_t>(node_count) * 2 * tree.dim_);
  r.bytes(tree.bounds_, "node bounds");
  tree.perm_.resize(rows);
  std::vector<bool> seen(rows, false);
  for (auto& row : tree.perm_) {
    row = r.u32("permutation");
    if (row >= rows || seen[row]) throw FormatError(path.string() + ": corrupt permutation");
    seen[row] = true;
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in index");

  const auto codes = catalog.codes();
  tree.codes_.resize(codes.size());
  for (std::size_t pos = 0; pos < rows; ++pos) {
    std::copy_n(codes.begin() + static_cast<std::ptrdiff_t>(tree.perm_[pos] * tree.dim_),
                tree.dim_, tree.codes_.begin() + static_cast<std::ptrdiff_t>(pos * tree.dim_));
  }
  return tree;
}

}  // namespace sbc
