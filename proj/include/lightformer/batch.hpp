#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lightformer/tensor.hpp"

namespace lightformer {

// Continuous batching with truncated-BPTT segmentation: the id sequence is
// split into batch_size contiguous lanes of floor(T / batch_size) tokens;
// each lane is cut into consecutive non-overlapping segments of
// segment_length inputs whose targets are the same positions shifted by one.
// Segments are independent; nothing flows across their boundaries.
class BatchStream {
 public:
  // Throws ConfigError when T < batch_size * (segment_length + 1), stating
  // the minimum.
  BatchStream(std::vector<std::int64_t> ids, std::int64_t batch_size,
              std::int64_t segment_length);

  std::int64_t batch_size() const { return batch_; }
  std::int64_t segment_length() const { return seg_; }
  std::int64_t lane_length() const { return lane_len_; }
  // Segments per lane per epoch.
  std::int64_t segments() const { return segments_; }
  // Target tokens consumed per epoch across all lanes.
  std::int64_t tokens_per_epoch() const { return batch_ * segments_ * seg_; }

  // Input/target pair for segment index k in [0, segments()).
  std::pair<TokenBatch, TokenBatch> segment(std::int64_t k) const;

 private:
  std::vector<std::int64_t> ids_;
  std::int64_t batch_ = 0;
  std::int64_t seg_ = 0;
  std::int64_t lane_len_ = 0;
  std::int64_t segments_ = 0;
};

// All segment pairs of one epoch, in order.
std::vector<std::pair<TokenBatch, TokenBatch>> make_batches(
    const std::vector<std::int64_t>& ids, std::int64_t batch_size,
    std::int64_t segment_length);

}  // namespace lightformer
