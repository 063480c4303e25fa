#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "lightformer/error.hpp"

namespace lightformer {

inline constexpr const char* kEosToken = "<eos>";
inline constexpr const char* kUnkToken = "<unk>";

// Word-level vocabulary over whitespace-tokenized text. Ids are dense in
// [0, size()) and assigned in first-occurrence order; every line contributes
// an end-of-sentence marker, and the unknown marker is appended if the
// corpus never produced it.
class Vocabulary {
 public:
  // Reads the whole stream, one sentence per line (blank lines still emit
  // the end-of-sentence marker). Throws ConfigError on an empty stream.
  static Vocabulary build(std::istream& corpus);

  // Rebuilds from an id-ordered token list (checkpoint restore). Throws
  // ConfigError on duplicates or if a reserved marker is missing.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::int64_t size() const {
    return static_cast<std::int64_t>(id_to_token_.size());
  }
  bool contains(const std::string& token) const;

  // In-vocabulary token -> id, anything else -> unk_id().
  std::int64_t encode(const std::string& token) const;
  const std::string& decode(std::int64_t id) const;  // IndexError if out of range

  std::int64_t eos_id() const { return eos_; }
  std::int64_t unk_id() const { return unk_; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::int64_t intern(const std::string& token);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int64_t> token_to_id_;
  std::int64_t eos_ = -1;
  std::int64_t unk_ = -1;
};

// Encodes a corpus stream with the same line convention build() uses: the
// tokens of each line in order, then the end-of-sentence id. Out-of-vocabulary
// tokens map to the unknown id.
std::vector<std::int64_t> encode_corpus(std::istream& corpus,
                                        const Vocabulary& vocab);

}  // namespace lightformer
