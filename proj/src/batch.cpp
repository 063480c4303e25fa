#include "lightformer/batch.hpp"

#include <string>
#include <utility>

#include "lightformer/error.hpp"

namespace lightformer {

BatchStream::BatchStream(std::vector<std::int64_t> ids,
                         std::int64_t batch_size, std::int64_t segment_length)
    : ids_(std::move(ids)), batch_(batch_size), seg_(segment_length) {
  if (batch_ < 1 || seg_ < 1) {
    throw ConfigError("batching: batch size and segment length must be >= 1");
  }
  const auto total = static_cast<std::int64_t>(ids_.size());
  const std::int64_t minimum = batch_ * (seg_ + 1);
  if (total < minimum) {
    throw ConfigError("batching: corpus has " + std::to_string(total) +
                      " tokens but batch " + std::to_string(batch_) +
                      " with segment length " + std::to_string(seg_) +
                      " needs at least " + std::to_string(minimum));
  }
  lane_len_ = total / batch_;
  segments_ = (lane_len_ - 1) / seg_;
}

std::pair<TokenBatch, TokenBatch> BatchStream::segment(std::int64_t k) const {
  if (k < 0 || k >= segments_) {
    throw IndexError("batching: segment " + std::to_string(k) +
                     " out of range [0, " + std::to_string(segments_) + ")");
  }
  TokenBatch input;
  TokenBatch target;
  input.batch = target.batch = batch_;
  input.n = target.n = seg_;
  input.ids.resize(static_cast<std::size_t>(batch_ * seg_));
  target.ids.resize(static_cast<std::size_t>(batch_ * seg_));
  const std::int64_t start = k * seg_;
  for (std::int64_t b = 0; b < batch_; ++b) {
    const std::int64_t lane = b * lane_len_ + start;
    for (std::int64_t t = 0; t < seg_; ++t) {
      input.ids[static_cast<std::size_t>(b * seg_ + t)] =
          ids_[static_cast<std::size_t>(lane + t)];
      target.ids[static_cast<std::size_t>(b * seg_ + t)] =
          ids_[static_cast<std::size_t>(lane + t + 1)];
    }
  }
  return {std::move(input), std::move(target)};
}

std::vector<std::pair<TokenBatch, TokenBatch>> make_batches(
    const std::vector<std::int64_t>& ids, std::int64_t batch_size,
    std::int64_t segment_length) {
  BatchStream stream(ids, batch_size, segment_length);
  std::vector<std::pair<TokenBatch, TokenBatch>> out;
  out.reserve(static_cast<std::size_t>(stream.segments()));
  for (std::int64_t k = 0; k < stream.segments(); ++k) {
    out.push_back(stream.segment(k));
  }
  return out;
}

}  // namespace lightformer
