#pragma once

// CCKP checkpoint layout (all integers u32 little-endian unless noted, all
// tensors float32 little-endian, row-major):
//
//   "CCKP" | version
//   config block: input_height input_width num_hidden hidden_widths[num_hidden]
//                 embedding_dim projection_dim
//   query parameters, then key parameters, each in Encoder::for_each order
//   num_queues, then per queue: capacity dim write_ptr fill
//                               buffer[capacity x dim] video_ids[capacity] (i64)
//   step (u64)

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cyclecl/encoder.hpp"
#include "cyclecl/memory_queue.hpp"

namespace cyclecl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderConfig config;
  MomentumPair<float> nets;
  std::vector<MemoryQueue> queues;  // video-space queue, then cycle-space queue
  std::uint64_t step = 0;
};

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace cyclecl
