#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "saelab/common.hpp"
#include "saelab/dataset.hpp"
#include "saelab/rng.hpp"
#include "saelab/tokenizer.hpp"
#include "saelab/transformer.hpp"

namespace saelab {

struct BufferConfig {
  Eigen::Index capacity = 100000;  // vectors held at once
  Eigen::Index batch_size = 256;
  uint64_t seed = 0;

  void validate() const {
    require(batch_size > 0, "buffer: batch_size must be positive");
    require(capacity >= batch_size, "buffer: capacity must be at least batch_size");
  }
};

struct BufferBatch {
  ActivationDataset data;
  bool partial = false;  // short batch after the source ran dry
};

// Shuffling reservoir between activation capture and SAE training. A source
// delivers chunks (empty chunk = exhausted); the buffer tops itself up to
// capacity whenever it drops below half, reshuffles the unserved vectors each
// time new ones arrive, and deals fixed-size batches. Every vector is served
// exactly once per pass; order is deterministic per seed.
class ActivationBuffer {
 public:
  using Source = std::function<ActivationDataset()>;

  explicit ActivationBuffer(const BufferConfig& config) : cfg_(config) { cfg_.validate(); }

  const BufferConfig& config() const { return cfg_; }

  void attach_source(Source source) {
    source_ = std::move(source);
    exhausted_ = false;
  }

  // Next training batch, or nothing once the pass is complete. Coefficients on
  // incoming chunks are not carried through; rows and token ids are.
  std::optional<BufferBatch> next_batch() {
    if (remaining() < cfg_.batch_size || remaining() < (cfg_.capacity + 1) / 2) refill();
    const Eigen::Index m = std::min(cfg_.batch_size, remaining());
    if (m == 0) return std::nullopt;
    BufferBatch batch;
    batch.data.rows = pool_.middleRows(cursor_, m);
    if (has_ids_)
      batch.data.token_ids.assign(ids_.begin() + cursor_, ids_.begin() + cursor_ + m);
    batch.partial = m < cfg_.batch_size;
    cursor_ += m;
    return batch;
  }

 private:
  Eigen::Index remaining() const { return pool_.rows() - cursor_; }

  void refill() {
    if (exhausted_ || !source_) return;
    // Compact unserved rows to the front, then pull until full or dry.
    const Eigen::Index kept = remaining();
    if (cursor_ > 0) {
      Mat compacted = pool_.middleRows(cursor_, kept);
      pool_.swap(compacted);
      if (has_ids_) ids_.erase(ids_.begin(), ids_.begin() + cursor_);
      cursor_ = 0;
    }
    bool grew = false;
    while (pool_.rows() < cfg_.capacity && !exhausted_) {
      ActivationDataset chunk = source_();
      if (chunk.n_samples() == 0) {
        exhausted_ = true;
        break;
      }
      chunk.validate();
      if (pool_.rows() == 0) {
        has_ids_ = chunk.has_token_ids();
        pool_ = chunk.rows;
      } else {
        require(chunk.n_dense() == pool_.cols(), "buffer: chunk width mismatch");
        require(chunk.has_token_ids() == has_ids_, "buffer: inconsistent token ids across chunks");
        pool_.conservativeResize(pool_.rows() + chunk.n_samples(), Eigen::NoChange);
        pool_.bottomRows(chunk.n_samples()) = chunk.rows;
      }
      if (has_ids_) ids_.insert(ids_.end(), chunk.token_ids.begin(), chunk.token_ids.end());
      grew = true;
    }
    if (!grew || pool_.rows() == 0) return;
    Rng rng(cfg_.seed, stream_id("buffer.refill", shuffle_count_++));
    const std::vector<uint32_t> order = shuffled_indices(static_cast<uint32_t>(pool_.rows()), rng);
    Mat shuffled(pool_.rows(), pool_.cols());
    for (Eigen::Index r = 0; r < pool_.rows(); ++r) shuffled.row(r) = pool_.row(order[r]);
    pool_.swap(shuffled);
    if (has_ids_) {
      std::vector<uint32_t> ids(ids_.size());
      for (size_t r = 0; r < ids.size(); ++r) ids[r] = ids_[order[r]];
      ids_.swap(ids);
    }
  }

  BufferConfig cfg_;
  Mat pool_;
  std::vector<uint32_t> ids_;
  bool has_ids_ = false;
  Eigen::Index cursor_ = 0;
  Source source_;
  bool exhausted_ = true;
  uint64_t shuffle_count_ = 0;
};

// Wire a buffer to a model: the token stream is cut into consecutive
// context-length windows, each window run forward with the residual stream
// captured after `layer`, one vector per position. The spec, params, and
// stream must outlive the buffer's consumption.
inline void fill_buffer(const NetSpec& spec, const NetParams& params, const TokenStream& stream,
                        int layer, ActivationBuffer& buffer) {
  require(layer >= 0 && layer < spec.n_layers, "fill_buffer: layer out of range");
  require(stream.desc.vocab_size <= static_cast<uint32_t>(spec.vocab_size),
          "fill_buffer: stream vocabulary exceeds model vocabulary");
  auto cursor = std::make_shared<size_t>(0);
  auto next_seq = std::make_shared<uint32_t>(0);
  buffer.attach_source([&spec, &params, &stream, layer, cursor, next_seq]() -> ActivationDataset {
    const size_t n = stream.tokens.size();
    if (*cursor >= n) return {};
    const size_t len = std::min(static_cast<size_t>(spec.context_length), n - *cursor);
    const std::vector<uint32_t> window(stream.tokens.begin() + *cursor,
                                       stream.tokens.begin() + *cursor + len);
    *cursor += len;
    ForwardResult res = transformer_forward(spec, params, window, {layer}, (*next_seq)++);
    return std::move(res.captures.front().data);
  });
}

}  // namespace saelab
