#pragma once

// The optimization loop: pair batch -> query/key encoding -> losses -> SGD on
// the query network -> EMA of the key network -> queue update.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cyclecl/checkpoint.hpp"
#include "cyclecl/encoder.hpp"
#include "cyclecl/losses.hpp"
#include "cyclecl/memory_queue.hpp"
#include "cyclecl/synthetic_videos.hpp"

namespace cyclecl {

enum class LossPreset {
  kIntraImage,  // intra-image loss alone
  kIntraVideo,  // intra-video loss alone
  kFull,        // intra-video + lambda * cycle (+ optional intra-image term)
};

enum class LrSchedule { kCosine, kStep };

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.015;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  LrSchedule lr_schedule = LrSchedule::kCosine;
  LossPreset loss_preset = LossPreset::kFull;
  LossConfig loss;
  int capacity = 4096;  // queue size K
  int m_nb = 1024;      // neighbor set size
  MomentumConfig momentum_config;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  AugmentConfig augment;
  bool log_wall_time = false;     // wall_time column is 0 when off
  bool check_invariants = false;  // verify queue partition / exclusion every step

  void validate() const;
};

struct MetricsRecord {
  int epoch = 0;
  std::uint64_t step = 0;
  double loss_total = 0;
  std::optional<double> loss_intra_video;
  std::optional<double> loss_cycle;  // absent during queue warmup
  std::optional<double> loss_intra_image;
  double lr = 0;
  int queue_fill = 0;
  double wall_time = 0;
};

struct TrainState {
  MomentumPair<float> nets;
  MemoryQueue video_queue;  // keys from the video head: intra-video / intra-image negatives
  MemoryQueue cycle_queue;  // keys from the cycle head: neighbor sets and cycle negatives
  std::vector<MatrixF> velocity;  // SGD momentum buffers, Encoder::for_each order
  std::uint64_t step = 0;
};

TrainState init_state(const TrainConfig& cfg);

// Copies of the pieces of state one step touched, for verification harnesses.
struct StepTrace {
  Encoder<float> key_before;
  Encoder<float> query_after;
  Encoder<float> key_after;
  MemoryQueue cycle_queue_before;
  MemoryQueue cycle_queue_after;
  std::optional<NeighborSplit> split;
  std::vector<VideoId> batch_video_ids;
};

// Samples, augments and pairs the frames for one step. The batch depends only
// on (cfg.seed, step), never on the loss configuration.
PairBatch make_batch(const VideoDataset& data, const TrainConfig& cfg, std::uint64_t step);

std::uint64_t batch_seed(const TrainConfig& cfg, std::uint64_t step);

// One full iteration. Throws NumericError on a non-finite loss.
MetricsRecord train_step(TrainState& state, const PairBatch& batch, const TrainConfig& cfg,
                         double lr, int epoch, StepTrace* trace = nullptr);

double lr_at(LrSchedule schedule, std::uint64_t step, std::uint64_t total_steps, double base_lr);

struct FitResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_csv;
  std::filesystem::path summary_json;
  std::vector<MetricsRecord> metrics;
};

struct FitOptions {
  std::string config_echo;  // effective run configuration, copied into the summary
  std::function<void(const MetricsRecord&, const StepTrace*)> observer;
  bool trace = false;  // hand the observer a StepTrace for every step
};

// Runs epochs * floor(num_videos / batch_size) steps. Writes
// epoch_NNN.cckp after every epoch, final.cckp, metrics.csv and summary.json
// into out_dir.
FitResult fit(const TrainConfig& cfg, const VideoDataset& data,
              const std::filesystem::path& out_dir, const FitOptions& options = {});

Checkpoint make_checkpoint(const TrainConfig& cfg, const TrainState& state);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& m);

const char* to_string(LossPreset p);
const char* to_string(LrSchedule s);
const char* to_string(BackwardNegatives b);
LossPreset parse_loss_preset(const std::string& s);
LrSchedule parse_lr_schedule(const std::string& s);
BackwardNegatives parse_backward_negatives(const std::string& s);

}  // namespace cyclecl
