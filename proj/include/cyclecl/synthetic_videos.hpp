#pragma once

// Procedural toy videos: each video renders one parametric shape prototype
// (its hidden class) under an instance transform that drifts smoothly from
// frame to frame, over a background of soft blobs that drift on their own
// and per-frame pixel noise. Labels are balanced across classes. Also holds
// the augmentation pipeline, pair-batch sampling and the CCV1 file format.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cyclecl/tensor.hpp"

namespace cyclecl {

inline constexpr int kNumPrototypes = 12;

const char* prototype_name(int class_id);

struct InstanceParams {
  float center_x = 0, center_y = 0;  // normalized image coordinates in [-1, 1]
  float scale = 1;
  float rotation = 0;  // radians
  float brightness = 1;
  float velocity_x = 0, velocity_y = 0, angular_velocity = 0, scale_rate = 0;  // per frame
  float background = 0, background_tilt_x = 0, background_tilt_y = 0;
};

// Frames only. Class labels live in ClassLabels and are handed to evaluation
// code alone, so the training path cannot read them.
struct VideoDataset {
  std::uint32_t num_videos = 0;
  std::uint32_t frames_per_video = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t num_classes = 0;
  std::uint64_t seed = 0;
  std::vector<float> pixels;  // [video][frame][row][col]

  std::size_t frame_size() const { return std::size_t{height} * width; }

  // The frame as a 1 x (height*width) row.
  Eigen::Map<const MatrixF> frame(std::uint32_t video, std::uint32_t frame_idx) const;

  bool operator==(const VideoDataset&) const = default;
};

struct ClassLabels {
  std::vector<std::uint16_t> labels;  // one per video

  bool operator==(const ClassLabels&) const = default;
};

struct GeneratedData {
  VideoDataset videos;
  ClassLabels labels;
  std::vector<InstanceParams> instances;  // generation-time only, not serialized
};

struct GenerateOptions {
  std::uint32_t num_videos = 2000;
  std::uint32_t frames_per_video = 4;
  std::uint32_t num_classes = 10;
  std::uint32_t height = 32;
  std::uint32_t width = 32;
  std::uint64_t seed = 0;
};

GeneratedData generate(const GenerateOptions& opts);

struct AugmentConfig {
  double crop_scale_min = 0.5;  // area fraction of the crop
  double crop_scale_max = 1.0;
  double aspect_jitter = 0.2877;  // |log aspect ratio| bound, log(4/3)
  double noise_std = 0.05;
  double brightness_jitter = 0.3;
  double contrast_jitter = 0.3;

  static AugmentConfig identity() { return {1.0, 1.0, 0.0, 0.0, 0.0, 0.0}; }
  void validate() const;
};

// Random resized crop (bilinear, back to height x width), brightness and
// contrast jitter, additive Gaussian noise, clipping to [0, 1].
MatrixF augment(const Eigen::Ref<const MatrixF>& frame, int height, int width,
                const AugmentConfig& cfg, std::uint64_t seed);

struct PairBatch {
  MatrixF x_i;       // batch x (height*width), first frame of each pair
  MatrixF x_j;       // a different frame of the same video
  MatrixF x_i_view;  // second augmentation of the x_i frame; empty unless requested
  std::vector<std::int64_t> video_ids;
  std::vector<std::uint32_t> frame_i, frame_j;
};

// Draws batch_size distinct videos and two distinct frames from each, with
// independent augmentations.
PairBatch sample_pair_batch(const VideoDataset& data, int batch_size, std::uint64_t seed,
                            const AugmentConfig& cfg, bool second_view_of_i = false);

// CCV1 file: 36-byte little-endian header (magic "CCV1", version, num_videos,
// frames_per_video, height, width, num_classes as u32, seed as u64), then
// float32 pixels, then one u16 class label per video.
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 36;

void write_dataset(const VideoDataset& videos, const ClassLabels& labels,
                   const std::filesystem::path& path);
GeneratedData read_dataset(const std::filesystem::path& path);

}  // namespace cyclecl
