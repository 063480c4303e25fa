#pragma once

#include <cstdint>

#include "lightformer/mask.hpp"

namespace lightformer {

// Architecture hyperparameters for the decoder-only LM.
struct ModelConfig {
  PatternSpec pattern;
  std::int64_t layers = 3;
  std::int64_t dmodel = 320;  // embedding size; heads must divide it
  std::int64_t dff = 2000;    // position-wise FFN inner width
  std::int64_t heads = 16;
  std::int64_t vocab = 0;
  std::int64_t n_max = 70;
  double dropout = 0.0;

  void validate() const;
};

}  // namespace lightformer
