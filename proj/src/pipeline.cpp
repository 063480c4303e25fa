#include "lightformer/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

#include "lightformer/batch.hpp"

namespace lightformer {

void TrainConfig::validate() const {
  if (lr < 0.0) {
    throw ConfigError("training: learning rate must be >= 0, got " +
                      std::to_string(lr));
  }
  if (epochs < 1) {
    throw ConfigError("training: epochs must be >= 1, got " +
                      std::to_string(epochs));
  }
  if (batch_size < 1 || seq_len < 1) {
    throw ConfigError("training: batch size and segment length must be >= 1");
  }
  if (clip_norm < 0.0) {
    throw ConfigError("training: clip norm must be >= 0, got " +
                      std::to_string(clip_norm));
  }
  if (log_every < 1) {
    throw ConfigError("training: log interval must be >= 1, got " +
                      std::to_string(log_every));
  }
}

void write_log_header(std::ostream& os) {
  os << "step\tepoch\tsplit\tloss\tppl\ttokens_per_sec\n";
}

void write_log_row(std::ostream& os, const TrainLogRow& row) {
  os << row.step << '\t' << row.epoch << '\t' << row.split << '\t' << row.loss
     << '\t' << row.ppl << '\t' << row.tokens_per_sec << '\n';
}

namespace {

std::vector<std::vector<double>> snapshot(std::vector<Parameter>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (auto& p : params) out.push_back(p.value.values());
  return out;
}

void restore(std::vector<Parameter>& params,
             const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].value.values() = snap[i];
  }
}

}  // namespace

TrainResult train(LightTransformerLM& model,
                  const std::vector<std::int64_t>& train_ids,
                  const std::vector<std::int64_t>& val_ids,
                  const TrainConfig& cfg, std::ostream* log_stream,
                  const BestCallback& on_best) {
  cfg.validate();
  BatchStream stream(train_ids, cfg.batch_size, cfg.seq_len);
  auto params = model.parameters();

  TrainResult result;
  result.best_val_ppl = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;

  if (log_stream) write_log_header(*log_stream);
  auto emit = [&](const TrainLogRow& row) {
    result.log.push_back(row);
    if (log_stream) write_log_row(*log_stream, row);
  };

  std::int64_t step = 0;
  double interval_loss = 0.0;
  std::int64_t interval_rows = 0;
  auto interval_start = std::chrono::steady_clock::now();

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::int64_t k = 0; k < stream.segments(); ++k) {
      auto [input, target] = stream.segment(k);
      ForwardCtx ctx;
      ctx.training = true;
      ctx.seed = cfg.seed;
      ctx.step = static_cast<std::uint64_t>(step);
      Tensor loss = cross_entropy(model.forward(input, ctx), target);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericError(
            "training: non-finite loss at step " + std::to_string(step) +
            " with lr " + std::to_string(cfg.lr) +
            "; lower the learning rate or enable gradient clipping (--clip)");
      }
      backward(loss);
      sgd_step(params, cfg.lr, cfg.clip_norm);

      interval_loss += loss_value;
      ++interval_rows;
      ++step;
      if (step % cfg.log_every == 0 || k + 1 == stream.segments()) {
        const auto now = std::chrono::steady_clock::now();
        const double secs =
            std::chrono::duration<double>(now - interval_start).count();
        const double mean_loss = interval_loss / interval_rows;
        const double tokens =
            static_cast<double>(interval_rows * cfg.batch_size * cfg.seq_len);
        emit({step, epoch, "train", mean_loss, std::exp(mean_loss),
              secs > 0.0 ? tokens / secs : 0.0});
        interval_loss = 0.0;
        interval_rows = 0;
        interval_start = now;
      }
    }

    const double val_ppl = evaluate_perplexity(model, val_ids, cfg.seq_len);
    emit({step, epoch, "val", std::log(val_ppl), val_ppl, 0.0});
    if (val_ppl < result.best_val_ppl) {
      result.best_val_ppl = val_ppl;
      result.best_epoch = epoch;
      best_params = snapshot(params);
      if (on_best) on_best(epoch, val_ppl);
    }
  }

  if (!best_params.empty()) restore(params, best_params);
  result.steps = step;
  return result;
}

double evaluate_perplexity(const LightTransformerLM& model,
                           const std::vector<std::int64_t>& ids,
                           std::int64_t seg_len) {
  if (seg_len < 1) {
    throw ConfigError("evaluation: segment length must be >= 1, got " +
                      std::to_string(seg_len));
  }
  const auto total = static_cast<std::int64_t>(ids.size());
  if (total < 2) {
    throw ConfigError("evaluation: need at least 2 tokens, got " +
                      std::to_string(total));
  }
  NoGradGuard no_grad;
  ForwardCtx ctx;  // eval mode: dropout off

  double nll = 0.0;
  std::int64_t scored = 0;
  std::int64_t t = 0;
  while (t + 1 < total) {
    const std::int64_t len = std::min(seg_len, total - 1 - t);
    TokenBatch input;
    TokenBatch target;
    input.batch = target.batch = 1;
    input.n = target.n = len;
    input.ids.assign(ids.begin() + t, ids.begin() + t + len);
    target.ids.assign(ids.begin() + t + 1, ids.begin() + t + 1 + len);
    Tensor loss = cross_entropy(model.forward(input, ctx), target);
    nll += loss.item() * static_cast<double>(len);
    scored += len;
    t += len;
  }
  return std::exp(nll / static_cast<double>(scored));
}

}  // namespace lightformer
