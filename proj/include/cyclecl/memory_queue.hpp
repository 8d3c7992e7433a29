#pragma once

// Fixed-capacity FIFO memory bank of key embeddings tagged with the id of the
// video they came from, plus the neighbor-set / remainder split drawn from it
// every iteration.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cyclecl/losses.hpp"
#include "cyclecl/tensor.hpp"

namespace cyclecl {

using VideoId = std::int64_t;

class MemoryQueue {
 public:
  MemoryQueue() = default;
  MemoryQueue(int capacity, int dim);

  // Writes keys at write_ptr cyclically; once full, the oldest rows are
  // overwritten. Rows must be unit-norm.
  void enqueue_dequeue(const MatrixF& keys, std::span<const VideoId> video_ids);

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int fill() const { return fill_; }
  int write_ptr() const { return write_ptr_; }
  const MatrixF& buffer() const { return buffer_; }
  const std::vector<VideoId>& video_ids() const { return video_ids_; }

  // Filled slots from oldest to newest.
  std::vector<int> slots_oldest_first() const;

  // Filled slots whose video id is not in `excluded`, ascending slot order.
  std::vector<int> unmasked_slots(std::span<const VideoId> excluded) const;

  MatrixF gather(std::span<const int> slots) const;

  // Restores a serialized state; validates the ring invariants.
  static MemoryQueue from_state(int capacity, int dim, int write_ptr, int fill, MatrixF buffer,
                                std::vector<VideoId> video_ids);

  bool operator==(const MemoryQueue&) const = default;

 private:
  int capacity_ = 0;
  int dim_ = 0;
  int write_ptr_ = 0;
  int fill_ = 0;
  MatrixF buffer_;
  std::vector<VideoId> video_ids_;
};

struct NeighborSplit {
  MatrixF neighbors;                // U, one row per sampled slot
  MatrixF remainder;                // unmasked filled slots not in U
  std::vector<int> neighbor_slots;  // ascending
  std::vector<int> remainder_slots; // ascending
  int masked = 0;                   // filled slots dropped for sharing a batch video id
};

// Draws m_nb slots uniformly without replacement from the filled slots whose
// video id is absent from `query_video_ids`. Returns nullopt (warmup) when
// fewer than m_nb + 1 such slots exist.
std::optional<NeighborSplit> sample_neighbor_split(const MemoryQueue& queue, int m_nb,
                                                   std::span<const VideoId> query_video_ids,
                                                   std::uint64_t seed);

// Per-row top-K restriction of a neighbor set: keep(r, j) marks the k_top
// neighbors most similar to query row r. Neighbors not kept for a row act as
// extra negatives for that row.
struct TopKSelection {
  KeepMask keep;  // n x |U|
};

TopKSelection top_k_filter(const MatrixF& q_cycle, const NeighborSplit& split, int k_top);

}  // namespace cyclecl
