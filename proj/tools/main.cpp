// Command-line front end: train, eval, analyze, dump-mask.
//
// Config precedence: command-line flags override config-file values, which
// override built-in defaults. The config file is flat key=value text whose
// keys mirror the long flag names without the leading dashes. Exit codes:
// 0 success, 1 runtime failure, 2 usage or config error.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lightformer/batch.hpp"
#include "lightformer/checkpoint.hpp"
#include "lightformer/complexity.hpp"
#include "lightformer/mask.hpp"
#include "lightformer/model.hpp"
#include "lightformer/pipeline.hpp"
#include "lightformer/vocab.hpp"

namespace lf = lightformer;
namespace fs = std::filesystem;

namespace {

// Outputs to delete if a config error aborts the run before any real work.
std::vector<fs::path> g_partial_outputs;
bool g_work_started = false;

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, end);
}

std::int64_t parse_i64(const std::string& key, const std::string& text) {
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw lf::ConfigError("config: key \"" + key +
                          "\" needs an integer, got \"" + text + "\"");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw lf::ConfigError("config: key \"" + key +
                          "\" needs a non-negative integer, got \"" + text +
                          "\"");
  }
  return v;
}

double parse_f64(const std::string& key, const std::string& text) {
  double v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw lf::ConfigError("config: key \"" + key + "\" needs a number, got \"" +
                          text + "\"");
  }
  return v;
}

// One flag + config-file key bound to a variable.
struct Binding {
  std::string key;
  CLI::Option* opt = nullptr;
  std::function<void(const std::string&)> apply;
  std::function<std::string()> render;
  bool from_file = false;
};

// The flags of one subcommand that a config file may also set.
class BindingSet {
 public:
  void add_i64(CLI::App* cmd, const std::string& key, std::int64_t& var,
               const std::string& desc) {
    auto* opt = cmd->add_option("--" + key, var, desc);
    bindings_.push_back({key, opt,
                         [&var, key](const std::string& s) {
                           var = parse_i64(key, s);
                         },
                         [&var] { return std::to_string(var); }});
  }
  void add_u64(CLI::App* cmd, const std::string& key, std::uint64_t& var,
               const std::string& desc) {
    auto* opt = cmd->add_option("--" + key, var, desc);
    bindings_.push_back({key, opt,
                         [&var, key](const std::string& s) {
                           var = parse_u64(key, s);
                         },
                         [&var] { return std::to_string(var); }});
  }
  void add_f64(CLI::App* cmd, const std::string& key, double& var,
               const std::string& desc) {
    auto* opt = cmd->add_option("--" + key, var, desc);
    bindings_.push_back({key, opt,
                         [&var, key](const std::string& s) {
                           var = parse_f64(key, s);
                         },
                         [&var] { return fmt_double(var); }});
  }
  void add_str(CLI::App* cmd, const std::string& key, std::string& var,
               const std::string& desc) {
    auto* opt = cmd->add_option("--" + key, var, desc);
    bindings_.push_back({key, opt,
                         [&var](const std::string& s) { var = s; },
                         [&var] { return var; }});
  }

  // Applies file values to every binding whose flag was not given.
  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw lf::IoError("config: cannot open " + path);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw lf::ConfigError("config: line " + std::to_string(lineno) +
                              " of " + path + " is not key=value");
      }
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      Binding* binding = find(key);
      if (!binding) {
        throw lf::ConfigError("config: unknown key \"" + key + "\" in " +
                              path);
      }
      if (binding->opt->count() == 0) {
        binding->apply(value);
        binding->from_file = true;
      }
    }
  }

  // True when the user supplied `key` via flag or config file.
  bool given(const std::string& key) const {
    for (const auto& b : bindings_) {
      if (b.key == key) return b.opt->count() > 0 || b.from_file;
    }
    return false;
  }

  std::string render_all() const {
    std::string out;
    for (const auto& b : bindings_) out += b.key + "=" + b.render() + "\n";
    return out;
  }

 private:
  Binding* find(const std::string& key) {
    for (auto& b : bindings_) {
      if (b.key == key) return &b;
    }
    return nullptr;
  }

  std::vector<Binding> bindings_;
};

// Duplicates everything written to `primary` onto `secondary`.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* primary, std::streambuf* secondary)
      : primary_(primary), secondary_(secondary) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    const int r1 = primary_->sputc(static_cast<char>(c));
    const int r2 = secondary_->sputc(static_cast<char>(c));
    return (r1 == traits_type::eof() || r2 == traits_type::eof())
               ? traits_type::eof()
               : c;
  }
  int sync() override {
    const int r1 = primary_->pubsync();
    const int r2 = secondary_->pubsync();
    return (r1 == 0 && r2 == 0) ? 0 : -1;
  }

 private:
  std::streambuf* primary_;
  std::streambuf* secondary_;
};

struct PatternFlags {
  std::string pattern = "full";
  std::int64_t k = 3;
  std::int64_t d_base = 2;
  std::int64_t b = 4;
  std::int64_t m = 2;
};

void bind_pattern(BindingSet& bs, CLI::App* cmd, PatternFlags& p,
                  bool allow_all) {
  bs.add_str(cmd, "pattern", p.pattern,
             std::string("full|dilated|dilated-memory|cascade") +
                 (allow_all ? "|all" : ""));
  bs.add_i64(cmd, "k", p.k, "dilated filter size (backward taps incl. self)");
  bs.add_i64(cmd, "d-base", p.d_base, "dilation base (stride = base^layer)");
  bs.add_i64(cmd, "b", p.b, "cascade base window");
  bs.add_i64(cmd, "m", p.m, "cascade cardinal (window = b*m^layer)");
}

lf::PatternSpec make_spec(const PatternFlags& p) {
  lf::PatternSpec spec;
  spec.kind = lf::pattern_from_name(p.pattern);
  spec.filter_size = p.k;
  spec.dilation_base = p.d_base;
  spec.base_window = p.b;
  spec.cardinal = p.m;
  spec.validate();
  return spec;
}

std::vector<std::int64_t> load_corpus_ids(const std::string& path,
                                          const lf::Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw lf::IoError("corpus: cannot open " + path);
  return lf::encode_corpus(in, vocab);
}

std::string default_out_dir() {
  const char* env = std::getenv("LIGHTFORMER_OUT");
  return (env && *env) ? env : "out";
}

// ---------------------------------------------------------------- train --

struct TrainCmd {
  PatternFlags pattern;
  std::int64_t layers = 3;
  std::int64_t dmodel = 320;
  std::int64_t dff = 2000;
  std::int64_t heads = 16;
  std::int64_t n_max = 70;
  double dropout = 0.0;
  double lr = 10.0;
  std::int64_t epochs = 40;
  std::uint64_t seed = 1;
  std::int64_t batch = 20;
  std::int64_t seq_len = 70;
  double clip = 0.0;
  std::int64_t log_every = 50;
  std::int64_t threads = 1;
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string out;

  BindingSet bindings;
  std::string config_path;
};

void setup_train(CLI::App* cmd, TrainCmd& o) {
  auto& bs = o.bindings;
  bind_pattern(bs, cmd, o.pattern, /*allow_all=*/false);
  bs.add_i64(cmd, "layers", o.layers, "decoder blocks");
  bs.add_i64(cmd, "dmodel", o.dmodel, "embedding size");
  bs.add_i64(cmd, "dff", o.dff, "FFN inner width");
  bs.add_i64(cmd, "heads", o.heads, "attention heads");
  bs.add_i64(cmd, "n-max", o.n_max, "positional table length");
  bs.add_f64(cmd, "dropout", o.dropout, "dropout rate in [0,1)");
  bs.add_f64(cmd, "lr", o.lr, "SGD learning rate");
  bs.add_i64(cmd, "epochs", o.epochs, "training epochs");
  bs.add_u64(cmd, "seed", o.seed, "seed for init, dropout, and shuffling-free determinism");
  bs.add_i64(cmd, "batch", o.batch, "batch size (parallel lanes)");
  bs.add_i64(cmd, "seq-len", o.seq_len, "segment length for truncated BPTT");
  bs.add_f64(cmd, "clip", o.clip, "gradient clip norm (0 disables)");
  bs.add_i64(cmd, "log-every", o.log_every, "steps between train log rows");
  bs.add_i64(cmd, "threads", o.threads, "worker threads (only 1 supported)");
  bs.add_str(cmd, "train", o.train_path, "training corpus path");
  bs.add_str(cmd, "valid", o.valid_path, "validation corpus path");
  bs.add_str(cmd, "test", o.test_path, "optional test corpus path");
  bs.add_str(cmd, "out", o.out,
             "output directory (default $LIGHTFORMER_OUT or ./out)");
  cmd->add_option("--config", o.config_path, "flat key=value config file");
}

int run_train(TrainCmd& o) {
  if (!o.config_path.empty()) o.bindings.merge_file(o.config_path);
  if (o.out.empty()) o.out = default_out_dir();
  if (o.train_path.empty() || o.valid_path.empty()) {
    throw lf::ConfigError("train: --train and --valid corpora are required");
  }
  if (o.threads != 1) {
    throw lf::ConfigError("train: --threads must be 1 (got " +
                          std::to_string(o.threads) +
                          "); execution is single-threaded");
  }

  fs::create_directories(o.out);
  const fs::path cfg_path = fs::path(o.out) / "effective.cfg";
  {
    std::ofstream cfg(cfg_path, std::ios::trunc);
    if (!cfg) throw lf::IoError("train: cannot write " + cfg_path.string());
    cfg << o.bindings.render_all();
  }
  g_partial_outputs.push_back(cfg_path);

  lf::TrainConfig tc;
  tc.lr = o.lr;
  tc.epochs = o.epochs;
  tc.seed = o.seed;
  tc.batch_size = o.batch;
  tc.seq_len = o.seq_len;
  tc.clip_norm = o.clip;
  tc.log_every = o.log_every;
  tc.validate();

  lf::ModelConfig mc;
  mc.pattern = make_spec(o.pattern);
  mc.layers = o.layers;
  mc.dmodel = o.dmodel;
  mc.dff = o.dff;
  mc.heads = o.heads;
  mc.n_max = o.n_max;
  mc.dropout = o.dropout;
  if (tc.seq_len > mc.n_max) {
    throw lf::ConfigError("train: --seq-len " + std::to_string(tc.seq_len) +
                          " exceeds --n-max " + std::to_string(mc.n_max));
  }

  std::ifstream train_in(o.train_path);
  if (!train_in) throw lf::IoError("corpus: cannot open " + o.train_path);
  lf::Vocabulary vocab = lf::Vocabulary::build(train_in);
  train_in.clear();
  train_in.seekg(0);
  const auto train_ids = lf::encode_corpus(train_in, vocab);
  const auto valid_ids = load_corpus_ids(o.valid_path, vocab);
  std::vector<std::int64_t> test_ids;
  if (!o.test_path.empty()) test_ids = load_corpus_ids(o.test_path, vocab);

  mc.vocab = vocab.size();
  mc.validate();

  lf::LightTransformerLM model(mc);
  model.init_parameters(o.seed);
  const auto pc = lf::parameter_count(mc);
  std::cout << "pattern " << lf::pattern_name(mc.pattern.kind) << ", vocab "
            << vocab.size() << ", parameters " << pc.total << "\n";

  const fs::path log_path = fs::path(o.out) / "train_log.tsv";
  std::ofstream log_file(log_path, std::ios::trunc);
  if (!log_file) throw lf::IoError("train: cannot write " + log_path.string());
  TeeBuf tee(log_file.rdbuf(), std::cout.rdbuf());
  std::ostream log_stream(&tee);

  const fs::path ckpt_path = fs::path(o.out) / "model.ckpt";
  auto on_best = [&](std::int64_t, double) {
    lf::save_checkpoint(ckpt_path.string(), model, vocab, o.seed);
  };

  g_work_started = true;
  const lf::TrainResult result =
      lf::train(model, train_ids, valid_ids, tc, &log_stream, on_best);

  double test_ppl = 0.0;
  if (!test_ids.empty()) {
    test_ppl = lf::evaluate_perplexity(model, test_ids, tc.seq_len);
  }

  const fs::path metrics_path = fs::path(o.out) / "metrics.tsv";
  {
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) {
      throw lf::IoError("train: cannot write " + metrics_path.string());
    }
    metrics << "pattern\tparams\tval_ppl\ttest_ppl\n";
    metrics << lf::pattern_name(mc.pattern.kind) << '\t' << pc.total << '\t'
            << fmt_double(result.best_val_ppl) << '\t'
            << (test_ids.empty() ? std::string("-") : fmt_double(test_ppl))
            << '\n';
  }

  std::cout << "best validation perplexity " << fmt_double(result.best_val_ppl)
            << " at epoch " << result.best_epoch << "\n";
  if (!test_ids.empty()) {
    std::cout << "test perplexity " << fmt_double(test_ppl) << "\n";
  }
  std::cout << "artifacts in " << o.out << "\n";
  return 0;
}

// ----------------------------------------------------------------- eval --

struct EvalCmd {
  std::string checkpoint;
  std::string corpus;
  std::int64_t seq_len = 70;

  BindingSet bindings;
  std::string config_path;
};

void setup_eval(CLI::App* cmd, EvalCmd& o) {
  auto& bs = o.bindings;
  bs.add_str(cmd, "checkpoint", o.checkpoint, "checkpoint file");
  bs.add_str(cmd, "corpus", o.corpus, "corpus to score");
  bs.add_i64(cmd, "seq-len", o.seq_len, "evaluation segment length");
  cmd->add_option("--config", o.config_path, "flat key=value config file");
}

int run_eval(EvalCmd& o) {
  if (!o.config_path.empty()) o.bindings.merge_file(o.config_path);
  if (o.checkpoint.empty() || o.corpus.empty()) {
    throw lf::ConfigError("eval: --checkpoint and --corpus are required");
  }
  lf::LoadedCheckpoint ck = lf::load_checkpoint(o.checkpoint);
  // The default segment length adapts to the model; explicit values must fit.
  if (!o.bindings.given("seq-len")) {
    o.seq_len = std::min(o.seq_len, ck.model.config().n_max);
  }
  if (o.seq_len < 1 || o.seq_len > ck.model.config().n_max) {
    throw lf::ConfigError(
        "eval: --seq-len must be in [1, " +
        std::to_string(ck.model.config().n_max) + "], got " +
        std::to_string(o.seq_len));
  }
  const auto ids = load_corpus_ids(o.corpus, ck.vocab);
  const double ppl = lf::evaluate_perplexity(ck.model, ids, o.seq_len);
  std::cout << "ppl=" << fmt_double(ppl) << "\n";
  std::cout << "perplexity " << fmt_double(ppl) << " over "
            << (ids.empty() ? 0 : ids.size() - 1)
            << " scored tokens (segment length " << o.seq_len << ")\n";
  return 0;
}

// -------------------------------------------------------------- analyze --

struct AnalyzeCmd {
  PatternFlags pattern;
  std::int64_t n = 70;
  std::int64_t h = 320;
  std::int64_t layers = 3;
  std::int64_t dff = 2000;
  std::int64_t heads = 16;
  std::int64_t vocab = 10000;
  std::int64_t n_max = 70;

  BindingSet bindings;
  std::string config_path;
};

void setup_analyze(CLI::App* cmd, AnalyzeCmd& o) {
  auto& bs = o.bindings;
  // --h is a real option here, so help keeps only its long form.
  cmd->set_help_flag("--help", "print help");
  o.pattern.pattern = "all";
  bind_pattern(bs, cmd, o.pattern, /*allow_all=*/true);
  bs.add_i64(cmd, "n", o.n, "sequence length");
  bs.add_i64(cmd, "h", o.h, "embedding size for the bound and params columns");
  bs.add_i64(cmd, "layers", o.layers, "layer count");
  bs.add_i64(cmd, "dff", o.dff, "FFN width for the params column");
  bs.add_i64(cmd, "heads", o.heads, "attention heads for the params column");
  bs.add_i64(cmd, "vocab", o.vocab, "vocabulary size for the params column");
  bs.add_i64(cmd, "n-max", o.n_max, "positional table for the params column");
  cmd->add_option("--config", o.config_path, "flat key=value config file");
}

int run_analyze(AnalyzeCmd& o) {
  if (!o.config_path.empty()) o.bindings.merge_file(o.config_path);
  if (o.n < 1 || o.h < 1 || o.layers < 1) {
    throw lf::ConfigError("analyze: --n, --h, and --layers must be >= 1");
  }
  std::vector<std::string> names;
  if (o.pattern.pattern == "all") {
    names = {"full", "dilated", "dilated-memory", "cascade"};
  } else {
    names = {o.pattern.pattern};
  }
  lf::ModelConfig dims;
  dims.layers = o.layers;
  dims.dmodel = o.h;
  dims.dff = o.dff;
  dims.heads = o.heads;
  dims.vocab = o.vocab;
  dims.n_max = std::max(o.n_max, o.n);

  bool first = true;
  for (const auto& name : names) {
    PatternFlags flags = o.pattern;
    flags.pattern = name;
    const lf::PatternSpec spec = make_spec(flags);
    if (!first) std::cout << "\n";
    first = false;
    lf::write_complexity_tsv(spec, o.n, o.h, o.layers, dims, std::cout);
  }
  return 0;
}

// ------------------------------------------------------------ dump-mask --

struct DumpMaskCmd {
  PatternFlags pattern;
  std::int64_t layer = 0;
  std::int64_t n = 8;
  std::string format = "csv";
  std::string output;

  BindingSet bindings;
  std::string config_path;
};

void setup_dump_mask(CLI::App* cmd, DumpMaskCmd& o) {
  auto& bs = o.bindings;
  bind_pattern(bs, cmd, o.pattern, /*allow_all=*/false);
  bs.add_i64(cmd, "layer", o.layer, "layer index");
  bs.add_i64(cmd, "n", o.n, "sequence length");
  bs.add_str(cmd, "format", o.format, "csv or pgm");
  bs.add_str(cmd, "output", o.output, "output file (default stdout)");
  cmd->add_option("--config", o.config_path, "flat key=value config file");
}

int run_dump_mask(DumpMaskCmd& o) {
  if (!o.config_path.empty()) o.bindings.merge_file(o.config_path);
  if (o.format != "csv" && o.format != "pgm") {
    throw lf::ConfigError("dump-mask: unsupported format \"" + o.format +
                          "\" (use csv or pgm)");
  }
  const lf::PatternSpec spec = make_spec(o.pattern);
  const lf::AttentionMask mask = lf::build_mask(spec, o.layer, o.n);

  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!o.output.empty()) {
    file.open(o.output, std::ios::trunc);
    if (!file) throw lf::IoError("dump-mask: cannot write " + o.output);
    os = &file;
  }
  if (o.format == "csv") {
    lf::write_mask_csv(mask, *os);
  } else {
    lf::write_mask_pgm(mask, *os);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-attention Transformer language model toolkit"};
  app.require_subcommand(1);

  TrainCmd train_cmd;
  EvalCmd eval_cmd;
  AnalyzeCmd analyze_cmd;
  DumpMaskCmd dump_cmd;

  CLI::App* train = app.add_subcommand("train", "train a model");
  setup_train(train, train_cmd);
  CLI::App* eval = app.add_subcommand("eval", "score a corpus");
  setup_eval(eval, eval_cmd);
  CLI::App* analyze =
      app.add_subcommand("analyze", "connection/FLOP/parameter accounting");
  setup_analyze(analyze, analyze_cmd);
  CLI::App* dump =
      app.add_subcommand("dump-mask", "write one layer's attention mask");
  setup_dump_mask(dump, dump_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return run_train(train_cmd);
    if (eval->parsed()) return run_eval(eval_cmd);
    if (analyze->parsed()) return run_analyze(analyze_cmd);
    if (dump->parsed()) return run_dump_mask(dump_cmd);
    std::cerr << "error: no command\n";
    return 2;
  } catch (const lf::ConfigError& e) {
    if (!g_work_started) {
      for (const auto& p : g_partial_outputs) {
        std::error_code ec;
        fs::remove(p, ec);
      }
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
