#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "lightformer/error.hpp"

namespace lightformer {

enum class PatternKind { kFull, kDilated, kDilatedMemory, kCascade };

std::string pattern_name(PatternKind kind);
PatternKind pattern_from_name(const std::string& name);  // ConfigError on unknown

// Connectivity pattern parameters. Dilated variants read filter_size and
// dilation_base; cascade reads base_window and cardinal; full reads none.
struct PatternSpec {
  PatternKind kind = PatternKind::kFull;
  std::int64_t filter_size = 3;    // k, backward taps including self
  std::int64_t dilation_base = 2;  // stride grows as base^layer
  std::int64_t base_window = 4;    // b
  std::int64_t cardinal = 2;       // m, window grows as b*m^layer

  void validate() const;
};

// Packed boolean matrix with 64-bit words per row.
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::int64_t rows, std::int64_t cols);

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  bool get(std::int64_t i, std::int64_t j) const;
  void set(std::int64_t i, std::int64_t j);

  std::int64_t row_count(std::int64_t i) const;  // popcount of row i
  std::int64_t count() const;

  bool operator==(const BitMatrix& other) const;

  // Boolean matrix product: out[i][j] = OR_k (a[i][k] AND b[k][j]).
  static BitMatrix product(const BitMatrix& a, const BitMatrix& b);

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::int64_t words_per_row_ = 0;
  std::vector<std::uint64_t> words_;
};

// Per-layer causal connectivity: bits(i, j) == true iff query position i may
// attend to key position j. Causal (no j > i) with a non-empty diagonal.
struct AttentionMask {
  std::int64_t n = 0;
  std::int64_t layer = 0;
  BitMatrix bits;

  bool at(std::int64_t i, std::int64_t j) const { return bits.get(i, j); }
  std::int64_t nnz() const { return bits.count(); }
};

AttentionMask build_mask(const PatternSpec& spec, std::int64_t layer,
                         std::int64_t n);

// Process-wide cache keyed by (spec, layer, n); concurrent reads are safe,
// insertion is serialized.
std::shared_ptr<const AttentionMask> cached_mask(const PatternSpec& spec,
                                                 std::int64_t layer,
                                                 std::int64_t n);

// Ascending key positions attendable from query position i. Never empty.
std::vector<std::int64_t> row_support(const AttentionMask& mask,
                                      std::int64_t i);

// Composed reachability M_{L-1} * ... * M_1 * M_0 through the layer stack.
BitMatrix reachability(const PatternSpec& spec, std::int64_t layers,
                       std::int64_t n);

// For each position, how many source positions can influence it after
// `layers` layers.
std::vector<std::int64_t> receptive_field(const PatternSpec& spec,
                                          std::int64_t layers, std::int64_t n);

// Dump formats: CSV of 0/1 rows; PGM (P2) with white = connected.
void write_mask_csv(const AttentionMask& mask, std::ostream& os);
void write_mask_pgm(const AttentionMask& mask, std::ostream& os);

}  // namespace lightformer
