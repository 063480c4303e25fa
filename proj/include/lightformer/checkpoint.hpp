#pragma once

#include <cstdint>
#include <string>

#include "lightformer/model.hpp"
#include "lightformer/vocab.hpp"

namespace lightformer {

// Binary checkpoint layout, all integers little-endian:
//   bytes 0..7   magic "LTFMCKPT"
//   bytes 8..11  format version (u32, currently 1)
//   bytes 12..19 metadata length (u64)
//   metadata     UTF-8 JSON: model config, seed, id-ordered vocabulary,
//                parameter names and shapes in storage order
//   payload      one f64 little-endian block per parameter, in listed order
//
// Loading restores the exact bytes saved; any mismatch (magic, version,
// metadata, shapes, truncation) fails loudly.

struct LoadedCheckpoint {
  std::uint64_t seed = 0;
  Vocabulary vocab;
  LightTransformerLM model;
};

void save_checkpoint(const std::string& path, LightTransformerLM& model,
                     const Vocabulary& vocab, std::uint64_t seed);

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace lightformer
