#include "cyclecl/memory_queue.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

namespace cyclecl {

MemoryQueue::MemoryQueue(int capacity, int dim)
    : capacity_(capacity),
      dim_(dim),
      buffer_(MatrixF::Zero(capacity, dim)),
      video_ids_(static_cast<std::size_t>(capacity), -1) {
  if (capacity < 1) throw ParameterError("queue capacity must be >= 1");
  if (dim < 1) throw ParameterError("queue dimension must be >= 1");
}

void MemoryQueue::enqueue_dequeue(const MatrixF& keys, std::span<const VideoId> video_ids) {
  const auto n = keys.rows();
  if (n > capacity_) {
    throw ParameterError("enqueue of " + std::to_string(n) + " keys exceeds capacity " +
                         std::to_string(capacity_));
  }
  if (static_cast<Eigen::Index>(video_ids.size()) != n) {
    throw DimensionError("enqueue: " + std::to_string(video_ids.size()) + " video ids for " +
                         std::to_string(n) + " keys");
  }
  if (n > 0 && keys.cols() != dim_) {
    throw DimensionError("enqueue: keys " + shape_string(keys) + " do not match queue width " +
                         std::to_string(dim_));
  }
  require_unit_rows(keys, "enqueue keys");
  for (Eigen::Index r = 0; r < n; ++r) {
    buffer_.row(write_ptr_) = keys.row(r);
    video_ids_[static_cast<std::size_t>(write_ptr_)] = video_ids[static_cast<std::size_t>(r)];
    write_ptr_ = (write_ptr_ + 1) % capacity_;
  }
  fill_ = std::min<int>(fill_ + static_cast<int>(n), capacity_);
}

std::vector<int> MemoryQueue::slots_oldest_first() const {
  std::vector<int> slots;
  slots.reserve(static_cast<std::size_t>(fill_));
  const int oldest = fill_ < capacity_ ? 0 : write_ptr_;
  for (int i = 0; i < fill_; ++i) slots.push_back((oldest + i) % capacity_);
  return slots;
}

std::vector<int> MemoryQueue::unmasked_slots(std::span<const VideoId> excluded) const {
  const std::unordered_set<VideoId> ex(excluded.begin(), excluded.end());
  std::vector<int> out;
  // Before the first wrap the filled slots are exactly [0, fill).
  for (int s = 0; s < capacity_; ++s) {
    if (fill_ < capacity_ && s >= fill_) break;
    if (!ex.contains(video_ids_[static_cast<std::size_t>(s)])) out.push_back(s);
  }
  return out;
}

MatrixF MemoryQueue::gather(std::span<const int> slots) const {
  MatrixF out(static_cast<Eigen::Index>(slots.size()), dim_);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = buffer_.row(slots[i]);
  }
  return out;
}

MemoryQueue MemoryQueue::from_state(int capacity, int dim, int write_ptr, int fill,
                                    MatrixF buffer, std::vector<VideoId> video_ids) {
  MemoryQueue q(capacity, dim);
  if (write_ptr < 0 || write_ptr >= capacity || fill < 0 || fill > capacity) {
    throw ParameterError("queue state out of range");
  }
  if (fill < capacity && write_ptr != fill % capacity) {
    throw ParameterError("queue write pointer inconsistent with fill");
  }
  if (buffer.rows() != capacity || buffer.cols() != dim ||
      static_cast<int>(video_ids.size()) != capacity) {
    throw ParameterError("queue buffer shape mismatch");
  }
  q.write_ptr_ = write_ptr;
  q.fill_ = fill;
  q.buffer_ = std::move(buffer);
  q.video_ids_ = std::move(video_ids);
  return q;
}

std::optional<NeighborSplit> sample_neighbor_split(const MemoryQueue& queue, int m_nb,
                                                   std::span<const VideoId> query_video_ids,
                                                   std::uint64_t seed) {
  if (m_nb < 1) throw ParameterError("neighbor set size must be >= 1");
  std::vector<int> pool = queue.unmasked_slots(query_video_ids);
  if (static_cast<int>(pool.size()) < m_nb + 1) return std::nullopt;

  // Partial Fisher-Yates: the first m_nb entries become the neighbor set.
  std::mt19937_64 rng(seed);
  for (int i = 0; i < m_nb; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
  }
  NeighborSplit split;
  split.neighbor_slots.assign(pool.begin(), pool.begin() + m_nb);
  split.remainder_slots.assign(pool.begin() + m_nb, pool.end());
  std::sort(split.neighbor_slots.begin(), split.neighbor_slots.end());
  std::sort(split.remainder_slots.begin(), split.remainder_slots.end());
  split.neighbors = queue.gather(split.neighbor_slots);
  split.remainder = queue.gather(split.remainder_slots);
  split.masked = queue.fill() - static_cast<int>(pool.size());
  return split;
}

TopKSelection top_k_filter(const MatrixF& q_cycle, const NeighborSplit& split, int k_top) {
  if (k_top <= 0) throw ParameterError("top_k must be positive");
  const auto m = split.neighbors.rows();
  if (k_top > m) {
    throw ParameterError("top_k " + std::to_string(k_top) + " exceeds neighbor set size " +
                         std::to_string(m));
  }
  if (q_cycle.cols() != split.neighbors.cols()) {
    throw DimensionError("top_k_filter: queries " + shape_string(q_cycle) + " vs neighbors " +
                         shape_string(split.neighbors));
  }
  const MatrixF sims = q_cycle * split.neighbors.transpose();
  TopKSelection sel;
  sel.keep = KeepMask::Constant(q_cycle.rows(), m, false);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index r = 0; r < q_cycle.rows(); ++r) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    // Neighbor columns are in ascending slot order, so a lower column index
    // is a lower slot id.
    std::partial_sort(order.begin(), order.begin() + k_top, order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        if (sims(r, a) != sims(r, b)) return sims(r, a) > sims(r, b);
                        return a < b;
                      });
    for (int i = 0; i < k_top; ++i) sel.keep(r, order[static_cast<std::size_t>(i)]) = true;
  }
  return sel;
}

}  // namespace cyclecl
