#include "lightformer/vocab.hpp"

#include <istream>
#include <sstream>
#include <utility>

namespace lightformer {

std::int64_t Vocabulary::intern(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const std::int64_t id = size();
  id_to_token_.push_back(token);
  token_to_id_.emplace(token, id);
  return id;
}

Vocabulary Vocabulary::build(std::istream& corpus) {
  Vocabulary v;
  std::string line;
  bool saw_line = false;
  while (std::getline(corpus, line)) {
    saw_line = true;
    std::istringstream words(line);
    std::string token;
    while (words >> token) v.intern(token);
    v.eos_ = v.intern(kEosToken);
  }
  if (!saw_line) throw ConfigError("vocabulary: empty corpus");
  v.unk_ = v.intern(kUnkToken);
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.id_to_token_ = std::move(tokens);
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    const auto id = static_cast<std::int64_t>(i);
    if (!v.token_to_id_.emplace(v.id_to_token_[i], id).second) {
      throw ConfigError("vocabulary: duplicate token \"" + v.id_to_token_[i] +
                        "\"");
    }
    if (v.id_to_token_[i] == kEosToken) v.eos_ = id;
    if (v.id_to_token_[i] == kUnkToken) v.unk_ = id;
  }
  if (v.eos_ < 0 || v.unk_ < 0) {
    throw ConfigError("vocabulary: reserved markers missing from token list");
  }
  return v;
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) != 0;
}

std::int64_t Vocabulary::encode(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it != token_to_id_.end() ? it->second : unk_;
}

const std::string& Vocabulary::decode(std::int64_t id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("vocabulary: id " + std::to_string(id) +
                     " out of range [0, " + std::to_string(size()) + ")");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::int64_t> encode_corpus(std::istream& corpus,
                                        const Vocabulary& vocab) {
  std::vector<std::int64_t> ids;
  std::string line;
  while (std::getline(corpus, line)) {
    std::istringstream words(line);
    std::string token;
    while (words >> token) ids.push_back(vocab.encode(token));
    ids.push_back(vocab.eos_id());
  }
  return ids;
}

}  // namespace lightformer
