#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "lightformer/model.hpp"

namespace lightformer {

struct TrainConfig {
  double lr = 10.0;
  std::int64_t epochs = 40;
  std::uint64_t seed = 1;
  std::int64_t batch_size = 20;
  std::int64_t seq_len = 70;
  double clip_norm = 0.0;  // 0 disables clipping
  std::int64_t log_every = 50;

  void validate() const;
};

struct TrainLogRow {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double ppl = 0.0;
  double tokens_per_sec = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  double best_val_ppl = 0.0;
  std::int64_t best_epoch = 0;
  std::int64_t steps = 0;
};

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const TrainLogRow& row);

// Per-epoch hook fired when validation perplexity improves; the model holds
// the improved weights at call time.
using BestCallback = std::function<void(std::int64_t epoch, double val_ppl)>;

// SGD over independent truncated-BPTT segments. The caller initializes the
// model; on return the model holds the weights of the best validation epoch.
// Interval training losses and per-epoch validation perplexities are appended
// to the result log (and streamed to log_stream when given). Throws
// NumericError as soon as a training loss goes non-finite, naming the step
// and learning rate.
TrainResult train(LightTransformerLM& model,
                  const std::vector<std::int64_t>& train_ids,
                  const std::vector<std::int64_t>& val_ids,
                  const TrainConfig& cfg, std::ostream* log_stream = nullptr,
                  const BestCallback& on_best = {});

// exp of the mean per-token negative log-likelihood over one contiguous
// lane (batch 1) cut into segments of seg_len inputs; a shorter final
// segment covers the remainder, so every token after the first is scored
// exactly once. Dropout is off. Throws ConfigError when ids has fewer than
// two tokens.
double evaluate_perplexity(const LightTransformerLM& model,
                           const std::vector<std::int64_t>& ids,
                           std::int64_t seg_len);

}  // namespace lightformer
