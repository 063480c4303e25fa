#pragma once

#include <cstdint>
#include <iosfwd>

#include "lightformer/mask.hpp"
#include "lightformer/model_config.hpp"

namespace lightformer {

// One per-layer accounting row. symbolic_bound instantiates the pattern's
// asymptotic attention cost with constants dropped: full n^2*h, dilated
// n*k*h, dilated-memory n*k*c*h (c = 1 at layer 0, 2 above), cascade
// n*b*m^l*h. connection_count is the exact mask nnz; attention_flops counts
// 2*nnz*h (scores + value mixing), projections excluded.
struct ComplexityRow {
  std::int64_t layer = 0;
  PatternKind kind = PatternKind::kFull;
  std::uint64_t connection_count = 0;
  std::uint64_t symbolic_bound = 0;
  std::uint64_t attention_flops = 0;
};

ComplexityRow complexity_estimate(const PatternSpec& spec, std::int64_t n,
                                  std::int64_t h, std::int64_t layer);

// Exact trainable-parameter counts. The output projection is the transposed
// embedding, so it contributes nothing.
struct ParameterCount {
  std::int64_t embedding = 0;            // V * dmodel
  std::int64_t positional = 0;           // n_max * dmodel
  std::int64_t attention_per_block = 0;  // 4*dmodel^2 + 4*dmodel
  std::int64_t ffn_per_block = 0;        // 2*dmodel*dff + dff + dmodel
  std::int64_t layernorm_per_block = 0;  // 4*dmodel
  std::int64_t per_block = 0;
  std::int64_t total = 0;
};

ParameterCount parameter_count(const ModelConfig& config);

// TSV report: columns layer, kind, nnz, bound, flops, params; one row per
// layer, a "total" row, and a "coverage" row carrying the receptive-field
// size of the last position in the nnz column.
void write_complexity_tsv(const PatternSpec& spec, std::int64_t n,
                          std::int64_t h, std::int64_t layers,
                          const ModelConfig& dims, std::ostream& os);

}  // namespace lightformer
