#include "lightformer/complexity.hpp"

#include <limits>
#include <ostream>

namespace lightformer {

namespace {

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    return std::numeric_limits<std::uint64_t>::max();
  }
  return a * b;
}

std::uint64_t sat_pow(std::uint64_t base, std::int64_t exp) {
  std::uint64_t v = 1;
  for (std::int64_t i = 0; i < exp; ++i) v = sat_mul(v, base);
  return v;
}

}  // namespace

ComplexityRow complexity_estimate(const PatternSpec& spec, std::int64_t n,
                                  std::int64_t h, std::int64_t layer) {
  spec.validate();
  ComplexityRow row;
  row.layer = layer;
  row.kind = spec.kind;

  const auto un = static_cast<std::uint64_t>(n);
  const auto uh = static_cast<std::uint64_t>(h);
  switch (spec.kind) {
    case PatternKind::kFull:
      row.symbolic_bound = sat_mul(sat_mul(un, un), uh);
      break;
    case PatternKind::kDilated:
      row.symbolic_bound =
          sat_mul(sat_mul(un, static_cast<std::uint64_t>(spec.filter_size)), uh);
      break;
    case PatternKind::kDilatedMemory: {
      const std::uint64_t c = layer >= 1 ? 2 : 1;
      row.symbolic_bound = sat_mul(
          sat_mul(sat_mul(un, static_cast<std::uint64_t>(spec.filter_size)), c),
          uh);
      break;
    }
    case PatternKind::kCascade: {
      const std::uint64_t window =
          sat_mul(static_cast<std::uint64_t>(spec.base_window),
                  sat_pow(static_cast<std::uint64_t>(spec.cardinal), layer));
      row.symbolic_bound = sat_mul(sat_mul(un, window), uh);
      break;
    }
  }

  row.connection_count =
      static_cast<std::uint64_t>(build_mask(spec, layer, n).nnz());
  row.attention_flops = sat_mul(sat_mul(2, row.connection_count), uh);
  return row;
}

ParameterCount parameter_count(const ModelConfig& config) {
  config.validate();
  const std::int64_t d = config.dmodel;
  ParameterCount pc;
  pc.embedding = config.vocab * d;
  pc.positional = config.n_max * d;
  pc.attention_per_block = 4 * d * d + 4 * d;
  pc.ffn_per_block = d * config.dff + config.dff + config.dff * d + d;
  pc.layernorm_per_block = 4 * d;
  pc.per_block = pc.attention_per_block + pc.ffn_per_block +
                 pc.layernorm_per_block;
  pc.total = pc.embedding + pc.positional + config.layers * pc.per_block;
  return pc;
}

void write_complexity_tsv(const PatternSpec& spec, std::int64_t n,
                          std::int64_t h, std::int64_t layers,
                          const ModelConfig& dims, std::ostream& os) {
  const ParameterCount pc = parameter_count(dims);
  os << "layer\tkind\tnnz\tbound\tflops\tparams\n";
  std::uint64_t total_nnz = 0, total_bound = 0, total_flops = 0;
  for (std::int64_t l = 0; l < layers; ++l) {
    const ComplexityRow row = complexity_estimate(spec, n, h, l);
    total_nnz += row.connection_count;
    total_bound += row.symbolic_bound;
    total_flops += row.attention_flops;
    os << l << '\t' << pattern_name(spec.kind) << '\t' << row.connection_count
       << '\t' << row.symbolic_bound << '\t' << row.attention_flops << '\t'
       << pc.per_block << '\n';
  }
  os << "total\t" << pattern_name(spec.kind) << '\t' << total_nnz << '\t'
     << total_bound << '\t' << total_flops << '\t' << pc.total << '\n';
  const auto coverage = receptive_field(spec, layers, n);
  os << "coverage\t" << pattern_name(spec.kind) << '\t' << coverage.back()
     << "\t-\t-\t-\n";
}

}  // namespace lightformer
