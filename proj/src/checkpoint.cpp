#include "lightformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <utility>

#include "json.hpp"

namespace lightformer {

namespace {

constexpr char kMagic[8] = {'L', 'T', 'F', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f64_block(std::ostream& os, const std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double d : values) write_u64(os, std::bit_cast<std::uint64_t>(d));
  }
}

void read_f64_block(std::istream& is, std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double& d : values) d = std::bit_cast<double>(read_u64(is));
  }
}

nlohmann::json config_json(const ModelConfig& c) {
  return {
      {"pattern", pattern_name(c.pattern.kind)},
      {"filter_size", c.pattern.filter_size},
      {"dilation_base", c.pattern.dilation_base},
      {"base_window", c.pattern.base_window},
      {"cardinal", c.pattern.cardinal},
      {"layers", c.layers},
      {"dmodel", c.dmodel},
      {"dff", c.dff},
      {"heads", c.heads},
      {"vocab", c.vocab},
      {"n_max", c.n_max},
      {"dropout", c.dropout},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.pattern.kind = pattern_from_name(j.at("pattern").get<std::string>());
  c.pattern.filter_size = j.at("filter_size").get<std::int64_t>();
  c.pattern.dilation_base = j.at("dilation_base").get<std::int64_t>();
  c.pattern.base_window = j.at("base_window").get<std::int64_t>();
  c.pattern.cardinal = j.at("cardinal").get<std::int64_t>();
  c.layers = j.at("layers").get<std::int64_t>();
  c.dmodel = j.at("dmodel").get<std::int64_t>();
  c.dff = j.at("dff").get<std::int64_t>();
  c.heads = j.at("heads").get<std::int64_t>();
  c.vocab = j.at("vocab").get<std::int64_t>();
  c.n_max = j.at("n_max").get<std::int64_t>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, LightTransformerLM& model,
                     const Vocabulary& vocab, std::uint64_t seed) {
  auto params = model.parameters();

  nlohmann::json meta;
  meta["config"] = config_json(model.config());
  meta["seed"] = seed;
  meta["vocab"] = vocab.tokens();
  auto& plist = meta["params"] = nlohmann::json::array();
  for (auto& p : params) {
    plist.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  }
  const std::string blob = meta.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kVersion);
  write_u64(os, blob.size());
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  for (auto& p : params) write_f64_block(os, p.value.values());
  os.flush();
  if (!os) throw IoError("checkpoint: write to " + path + " failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);

  char magic[8] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: " + path + " is not a checkpoint file");
  }
  const std::uint32_t version = read_u32(is);
  if (!is || version != kVersion) {
    throw IoError("checkpoint: unsupported format version " +
                  std::to_string(version) + " in " + path);
  }
  const std::uint64_t meta_len = read_u64(is);
  std::string blob(meta_len, '\0');
  is.read(blob.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw IoError("checkpoint: truncated metadata in " + path);

  ModelConfig config;
  std::vector<std::string> tokens;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  try {
    const nlohmann::json meta = nlohmann::json::parse(blob);
    config = config_from_json(meta.at("config"));
    seed = meta.at("seed").get<std::uint64_t>();
    tokens = meta.at("vocab").get<std::vector<std::string>>();
    for (const auto& entry : meta.at("params")) {
      names.push_back(entry.at("name").get<std::string>());
      shapes.push_back(entry.at("shape").get<Shape>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed metadata in " + path + ": " +
                  e.what());
  }

  Vocabulary vocab = Vocabulary::from_tokens(std::move(tokens));
  if (vocab.size() != config.vocab) {
    throw ConfigError("checkpoint: vocabulary has " +
                      std::to_string(vocab.size()) +
                      " tokens but the model config expects " +
                      std::to_string(config.vocab));
  }

  LightTransformerLM model(config);
  auto params = model.parameters();
  if (names.size() != params.size()) {
    throw IoError("checkpoint: expected " + std::to_string(params.size()) +
                  " parameters, metadata lists " +
                  std::to_string(names.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (names[i] != params[i].name || shapes[i] != params[i].value.shape()) {
      throw IoError("checkpoint: parameter " + std::to_string(i) +
                    " mismatch: file has " + names[i] + shape_str(shapes[i]) +
                    ", model has " + params[i].name +
                    shape_str(params[i].value.shape()));
    }
  }
  for (auto& p : params) {
    read_f64_block(is, p.value.values());
    if (!is) {
      throw IoError("checkpoint: truncated parameter data in " + path +
                    " at " + p.name);
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw IoError("checkpoint: trailing bytes in " + path);
  }

  return LoadedCheckpoint{seed, std::move(vocab), std::move(model)};
}

}  // namespace lightformer
