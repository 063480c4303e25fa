#include "lightformer/mask.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <mutex>
#include <ostream>
#include <tuple>

namespace lightformer {

std::string pattern_name(PatternKind kind) {
  switch (kind) {
    case PatternKind::kFull:
      return "full";
    case PatternKind::kDilated:
      return "dilated";
    case PatternKind::kDilatedMemory:
      return "dilated-memory";
    case PatternKind::kCascade:
      return "cascade";
  }
  return "unknown";
}

PatternKind pattern_from_name(const std::string& name) {
  if (name == "full") return PatternKind::kFull;
  if (name == "dilated") return PatternKind::kDilated;
  if (name == "dilated-memory" || name == "dilated_memory") {
    return PatternKind::kDilatedMemory;
  }
  if (name == "cascade") return PatternKind::kCascade;
  throw ConfigError("unknown pattern \"" + name +
                    "\"; expected full, dilated, dilated-memory or cascade");
}

void PatternSpec::validate() const {
  if (filter_size < 1) {
    throw ConfigError("pattern: filter size k must be >= 1, got " +
                      std::to_string(filter_size));
  }
  if (dilation_base < 1) {
    throw ConfigError("pattern: dilation base must be >= 1, got " +
                      std::to_string(dilation_base));
  }
  if (base_window < 1) {
    throw ConfigError("pattern: base window b must be >= 1, got " +
                      std::to_string(base_window));
  }
  if (cardinal < 1) {
    throw ConfigError("pattern: cardinal m must be >= 1, got " +
                      std::to_string(cardinal));
  }
}

BitMatrix::BitMatrix(std::int64_t rows, std::int64_t cols)
    : rows_(rows), cols_(cols), words_per_row_((cols + 63) / 64) {
  if (rows < 0 || cols < 0) {
    throw ShapeError("bit matrix: negative dimensions " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  const auto needed = static_cast<unsigned __int128>(rows_) *
                      static_cast<unsigned __int128>(words_per_row_);
  if (needed > (std::uint64_t{1} << 28)) {  // 2 GiB of mask is plenty
    throw ShapeError("bit matrix " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " is too large to materialize");
  }
  words_.assign(static_cast<std::size_t>(needed), 0);
}

bool BitMatrix::get(std::int64_t i, std::int64_t j) const {
  const auto w = words_[static_cast<std::size_t>(i * words_per_row_ + j / 64)];
  return (w >> (j % 64)) & 1u;
}

void BitMatrix::set(std::int64_t i, std::int64_t j) {
  words_[static_cast<std::size_t>(i * words_per_row_ + j / 64)] |=
      std::uint64_t{1} << (j % 64);
}

std::int64_t BitMatrix::row_count(std::int64_t i) const {
  std::int64_t c = 0;
  for (std::int64_t w = 0; w < words_per_row_; ++w) {
    c += std::popcount(words_[static_cast<std::size_t>(i * words_per_row_ + w)]);
  }
  return c;
}

std::int64_t BitMatrix::count() const {
  std::int64_t c = 0;
  for (auto w : words_) c += std::popcount(w);
  return c;
}

bool BitMatrix::operator==(const BitMatrix& other) const {
  return rows_ == other.rows_ && cols_ == other.cols_ &&
         words_ == other.words_;
}

BitMatrix BitMatrix::product(const BitMatrix& a, const BitMatrix& b) {
  if (a.cols_ != b.rows_) {
    throw ShapeError("bit product: inner dimensions disagree (" +
                     std::to_string(a.cols_) + " vs " +
                     std::to_string(b.rows_) + ")");
  }
  BitMatrix out(a.rows_, b.cols_);
  for (std::int64_t i = 0; i < a.rows_; ++i) {
    for (std::int64_t k = 0; k < a.cols_; ++k) {
      if (!a.get(i, k)) continue;
      const std::size_t dst = static_cast<std::size_t>(i * out.words_per_row_);
      const std::size_t src = static_cast<std::size_t>(k * b.words_per_row_);
      for (std::int64_t w = 0; w < b.words_per_row_; ++w) {
        out.words_[dst + w] |= b.words_[src + w];
      }
    }
  }
  return out;
}

namespace {

// base^layer, clamped so it never exceeds cap (avoids overflow; any stride
// beyond the sequence behaves identically).
std::int64_t clamped_pow(std::int64_t base, std::int64_t layer,
                         std::int64_t cap) {
  std::int64_t v = 1;
  for (std::int64_t i = 0; i < layer; ++i) {
    if (v > cap / (base > 0 ? base : 1)) return cap;
    v *= base;
    if (v >= cap) return cap;
  }
  return v;
}

void fill_dilated_row(BitMatrix& bits, std::int64_t i, std::int64_t k,
                      std::int64_t d) {
  for (std::int64_t t = 0; t < k; ++t) {
    const std::int64_t j = i - t * d;
    if (j < 0) break;
    bits.set(i, j);
  }
}

}  // namespace

AttentionMask build_mask(const PatternSpec& spec, std::int64_t layer,
                         std::int64_t n) {
  spec.validate();
  if (n < 1) {
    throw ConfigError("build_mask: sequence length must be >= 1, got " +
                      std::to_string(n));
  }
  if (layer < 0) {
    throw ConfigError("build_mask: layer must be >= 0, got " +
                      std::to_string(layer));
  }

  AttentionMask mask;
  mask.n = n;
  mask.layer = layer;
  mask.bits = BitMatrix(n, n);

  switch (spec.kind) {
    case PatternKind::kFull:
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j <= i; ++j) mask.bits.set(i, j);
      }
      break;
    case PatternKind::kDilated: {
      const std::int64_t d = clamped_pow(spec.dilation_base, layer, n + 1);
      for (std::int64_t i = 0; i < n; ++i) {
        fill_dilated_row(mask.bits, i, spec.filter_size, d);
      }
      break;
    }
    case PatternKind::kDilatedMemory: {
      const std::int64_t d = clamped_pow(spec.dilation_base, layer, n + 1);
      const std::int64_t d_prev =
          layer > 0 ? clamped_pow(spec.dilation_base, layer - 1, n + 1) : d;
      for (std::int64_t i = 0; i < n; ++i) {
        fill_dilated_row(mask.bits, i, spec.filter_size, d);
        if (layer > 0) fill_dilated_row(mask.bits, i, spec.filter_size, d_prev);
      }
      break;
    }
    case PatternKind::kCascade: {
      const std::int64_t growth = clamped_pow(spec.cardinal, layer, n + 1);
      const std::int64_t w = (spec.base_window > n / growth)
                                 ? n
                                 : std::min(spec.base_window * growth, n);
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t lo = i - w + 1 > 0 ? i - w + 1 : 0;
        for (std::int64_t j = lo; j <= i; ++j) mask.bits.set(i, j);
      }
      break;
    }
  }
  return mask;
}

namespace {

using MaskKey = std::tuple<int, std::int64_t, std::int64_t, std::int64_t,
                           std::int64_t, std::int64_t, std::int64_t>;

MaskKey make_key(const PatternSpec& spec, std::int64_t layer, std::int64_t n) {
  return {static_cast<int>(spec.kind), spec.filter_size, spec.dilation_base,
          spec.base_window, spec.cardinal, layer, n};
}

std::mutex g_mask_cache_mutex;
std::map<MaskKey, std::shared_ptr<const AttentionMask>> g_mask_cache;

}  // namespace

std::shared_ptr<const AttentionMask> cached_mask(const PatternSpec& spec,
                                                 std::int64_t layer,
                                                 std::int64_t n) {
  const MaskKey key = make_key(spec, layer, n);
  {
    std::lock_guard<std::mutex> lock(g_mask_cache_mutex);
    auto it = g_mask_cache.find(key);
    if (it != g_mask_cache.end()) return it->second;
  }
  auto mask = std::make_shared<const AttentionMask>(build_mask(spec, layer, n));
  std::lock_guard<std::mutex> lock(g_mask_cache_mutex);
  auto [it, inserted] = g_mask_cache.emplace(key, std::move(mask));
  return it->second;
}

std::vector<std::int64_t> row_support(const AttentionMask& mask,
                                      std::int64_t i) {
  if (i < 0 || i >= mask.n) {
    throw IndexError("row_support: position " + std::to_string(i) +
                     " out of range [0," + std::to_string(mask.n) + ")");
  }
  std::vector<std::int64_t> support;
  for (std::int64_t j = 0; j <= i; ++j) {
    if (mask.at(i, j)) support.push_back(j);
  }
  return support;
}

BitMatrix reachability(const PatternSpec& spec, std::int64_t layers,
                       std::int64_t n) {
  if (layers < 1) {
    throw ConfigError("reachability: need at least one layer, got " +
                      std::to_string(layers));
  }
  BitMatrix composed = build_mask(spec, 0, n).bits;
  for (std::int64_t l = 1; l < layers; ++l) {
    composed = BitMatrix::product(build_mask(spec, l, n).bits, composed);
  }
  return composed;
}

std::vector<std::int64_t> receptive_field(const PatternSpec& spec,
                                          std::int64_t layers,
                                          std::int64_t n) {
  const BitMatrix composed = reachability(spec, layers, n);
  std::vector<std::int64_t> coverage(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    coverage[static_cast<std::size_t>(i)] = composed.row_count(i);
  }
  return coverage;
}

void write_mask_csv(const AttentionMask& mask, std::ostream& os) {
  for (std::int64_t i = 0; i < mask.n; ++i) {
    for (std::int64_t j = 0; j < mask.n; ++j) {
      if (j) os << ',';
      os << (mask.at(i, j) ? '1' : '0');
    }
    os << '\n';
  }
}

void write_mask_pgm(const AttentionMask& mask, std::ostream& os) {
  os << "P2\n" << mask.n << ' ' << mask.n << "\n255\n";
  for (std::int64_t i = 0; i < mask.n; ++i) {
    for (std::int64_t j = 0; j < mask.n; ++j) {
      if (j) os << ' ';
      os << (mask.at(i, j) ? 255 : 0);
    }
    os << '\n';
  }
}

}  // namespace lightformer
