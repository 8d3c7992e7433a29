#include "cyclecl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "cyclecl/seeding.hpp"

namespace cyclecl {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (capacity < batch_size) throw ConfigError("capacity must be >= batch_size");
  if (m_nb < 1 || m_nb >= capacity) throw ConfigError("m_nb must lie in [1, capacity)");
  if (loss.top_k && *loss.top_k > m_nb) throw ConfigError("top_k must not exceed m_nb");
  try {
    loss.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  momentum_config.validate();
  encoder.validate();
  augment.validate();
}

TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.nets = init_params<float>(cfg.encoder, derive_seed(cfg.seed, {kStreamInit}));
  s.video_queue = MemoryQueue(cfg.capacity, cfg.encoder.projection_dim);
  s.cycle_queue = MemoryQueue(cfg.capacity, cfg.encoder.projection_dim);
  s.nets.query.for_each([&](const MatrixF& m) { s.velocity.push_back(MatrixF::Zero(m.rows(), m.cols())); });
  return s;
}

std::uint64_t batch_seed(const TrainConfig& cfg, std::uint64_t step) {
  return derive_seed(cfg.seed, {kStreamBatch, step});
}

PairBatch make_batch(const VideoDataset& data, const TrainConfig& cfg, std::uint64_t step) {
  // The second view of x_i is always rendered: every loss preset sees
  // the same x_i / x_j frames for a given step.
  return sample_pair_batch(data, cfg.batch_size, batch_seed(cfg, step), cfg.augment, true);
}

double lr_at(LrSchedule schedule, std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (total_steps == 0) return base_lr;
  if (step > total_steps) throw ParameterError("lr_at: step beyond total_steps");
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  switch (schedule) {
    case LrSchedule::kCosine:
      return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    case LrSchedule::kStep:
      if (progress >= 0.8) return base_lr * 0.01;
      if (progress >= 0.6) return base_lr * 0.1;
      return base_lr;
  }
  return base_lr;
}

namespace {

void check_split_invariants(const MemoryQueue& queue, const NeighborSplit& split,
                            std::span<const VideoId> batch_ids) {
  std::unordered_set<int> u(split.neighbor_slots.begin(), split.neighbor_slots.end());
  for (int s : split.remainder_slots) {
    if (u.contains(s)) throw NumericError("invariant: slot in both neighbor set and remainder");
  }
  const auto total = split.neighbor_slots.size() + split.remainder_slots.size() +
                     static_cast<std::size_t>(split.masked);
  if (total != static_cast<std::size_t>(queue.fill())) {
    throw NumericError("invariant: neighbor set, remainder and masked slots do not cover the fill");
  }
  const std::unordered_set<VideoId> batch(batch_ids.begin(), batch_ids.end());
  for (const auto* slots : {&split.neighbor_slots, &split.remainder_slots}) {
    for (int s : *slots) {
      if (batch.contains(queue.video_ids()[static_cast<std::size_t>(s)])) {
        throw NumericError("invariant: queue row shares a video id with the batch");
      }
    }
  }
}

}  // namespace

MetricsRecord train_step(TrainState& state, const PairBatch& batch, const TrainConfig& cfg,
                         double lr, int epoch, StepTrace* trace) {
  const auto n = batch.x_i.rows();
  const std::span<const VideoId> vids(batch.video_ids);
  if (trace != nullptr) {
    trace->key_before = state.nets.key;
    trace->cycle_queue_before = state.cycle_queue;
    trace->batch_video_ids = batch.video_ids;
    trace->split.reset();
  }

  // Key path, outside the tape: no gradient ever reaches the key network.
  const auto key_j = encode(state.nets.key, batch.x_j);
  const bool need_view = cfg.loss_preset == LossPreset::kIntraImage ||
                         (cfg.loss_preset == LossPreset::kFull &&
                          (cfg.loss.intra_image_weight > 0.0 || cfg.loss.include_self_view));
  std::optional<EncodedBatch<float>> key_view;
  if (need_view) {
    if (batch.x_i_view.rows() != n) throw ParameterError("batch lacks the second view of x_i");
    key_view = encode(state.nets.key, batch.x_i_view);
  }

  Tape<float> tape;
  const auto bound = bind(tape, state.nets.query);
  const auto q = encode(bound, tape.constant(batch.x_i));

  const MatrixF video_negatives = state.video_queue.gather(state.video_queue.unmasked_slots(vids));
  auto video_negs = tape.constant(video_negatives);

  LossConfig loss_cfg = cfg.loss;
  LossParts<float> parts;
  MetricsRecord rec;
  rec.epoch = epoch;
  rec.step = state.step;
  rec.lr = lr;

  switch (cfg.loss_preset) {
    case LossPreset::kIntraImage:
      loss_cfg.intra_image_weight = 1.0;
      parts.intra_image = intra_image_loss(q.z_video, tape.constant(key_view->z_video), video_negs, loss_cfg);
      break;
    case LossPreset::kIntraVideo:
      parts.intra_video = intra_video_loss(q.z_video, tape.constant(key_j.z_video), video_negs, loss_cfg);
      break;
    case LossPreset::kFull: {
      parts.intra_video = intra_video_loss(q.z_video, tape.constant(key_j.z_video), video_negs, loss_cfg);
      if (loss_cfg.intra_image_weight > 0.0) {
        parts.intra_image = intra_image_loss(q.z_video, tape.constant(key_view->z_video), video_negs, loss_cfg);
      }
      std::optional<NeighborSplit> split;
      if (state.cycle_queue.fill() >= 2 * cfg.m_nb) {
        split = sample_neighbor_split(state.cycle_queue, cfg.m_nb, vids,
                                      derive_seed(cfg.seed, {kStreamNeighbors, state.step}));
      }
      if (split) {
        if (cfg.check_invariants) check_split_invariants(state.cycle_queue, *split, vids);
        const auto m = split->neighbors.rows();
        const bool filter = loss_cfg.top_k && *loss_cfg.top_k < m;
        std::optional<KeepMask> keep;
        if (filter) keep = top_k_filter(q.z_cycle.value(), *split, *loss_cfg.top_k).keep;

        MatrixF neighbor_rows = split->neighbors;
        if (loss_cfg.include_self_view) {
          // Row r additionally sees its own second view k_pp[r]; the other
          // rows' views are masked out.
          neighbor_rows.conservativeResize(m + n, Eigen::NoChange);
          neighbor_rows.bottomRows(n) = key_view->z_cycle;
          KeepMask ext = KeepMask::Constant(n, m + n, false);
          ext.leftCols(m) = keep ? *keep : KeepMask::Constant(n, m, true);
          for (Eigen::Index r = 0; r < n; ++r) ext(r, m + r) = true;
          keep = std::move(ext);
        }
        auto neighbors = tape.constant(neighbor_rows);
        const auto snn = soft_nearest_neighbor(q.z_cycle, neighbors, loss_cfg, keep ? &*keep : nullptr);
        auto k_j = tape.constant(key_j.z_cycle);
        if (loss_cfg.backward_negatives == BackwardNegatives::kNeighborSet) {
          parts.cycle = cycle_loss(snn.q_hat, k_j, tape.constant(split->neighbors), loss_cfg);
        } else if (filter) {
          auto sampled = tape.constant(split->neighbors);
          const KeepMask discard = !keep->leftCols(m);
          parts.cycle = cycle_loss(snn.q_hat, k_j, tape.constant(split->remainder), sampled, discard,
                                   loss_cfg);
        } else {
          parts.cycle = cycle_loss(snn.q_hat, k_j, tape.constant(split->remainder), loss_cfg);
        }
        if (trace != nullptr) trace->split = std::move(split);
      }
      break;
    }
  }

  const auto total = combined_loss(parts, loss_cfg);
  rec.loss_total = total.item();
  if (parts.intra_video) rec.loss_intra_video = parts.intra_video->item();
  if (parts.cycle) rec.loss_cycle = parts.cycle->item();
  if (parts.intra_image) rec.loss_intra_image = parts.intra_image->item();
  for (const auto& v : {std::optional<double>(rec.loss_total), rec.loss_intra_video, rec.loss_cycle,
                        rec.loss_intra_image}) {
    if (v && !std::isfinite(*v)) {
      throw NumericError("non-finite loss at step " + std::to_string(state.step) + " (batch seed " +
                         std::to_string(batch_seed(cfg, state.step)) + ")");
    }
  }

  tape.backward(total);

  // SGD with momentum and L2 weight decay on the query network and heads.
  const auto lr_f = static_cast<float>(lr);
  const auto mu = static_cast<float>(cfg.momentum);
  const auto wd = static_cast<float>(cfg.weight_decay);
  std::size_t i = 0;
  state.nets.query.for_each([&](MatrixF& p) {
    const MatrixF& g = bound.leaves[i].grad();
    MatrixF& v = state.velocity[i];
    v = mu * v + (g + wd * p);
    p -= lr_f * v;
    ++i;
  });

  ema_update(state.nets.key, state.nets.query, cfg.momentum_config);

  const MatrixF& enqueue_video = cfg.loss_preset == LossPreset::kIntraImage ? key_view->z_video
                                                                              : key_j.z_video;
  state.video_queue.enqueue_dequeue(enqueue_video, vids);
  state.cycle_queue.enqueue_dequeue(key_j.z_cycle, vids);
  rec.queue_fill = state.cycle_queue.fill();

  if (trace != nullptr) {
    trace->query_after = state.nets.query;
    trace->key_after = state.nets.key;
    trace->cycle_queue_after = state.cycle_queue;
  }
  ++state.step;
  return rec;
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const TrainState& state) {
  Checkpoint c;
  c.config = cfg.encoder;
  c.nets = state.nets;
  c.queues = {state.video_queue, state.cycle_queue};
  c.step = state.step;
  return c;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

std::string fmt_optional(const std::optional<double>& v) { return v ? fmt_double(*v) : ""; }

}  // namespace

std::string metrics_csv_header() {
  return "epoch,step,loss_total,loss_intra_video,loss_cycle,loss_intra_image,lr,queue_fill,wall_time";
}

std::string metrics_csv_row(const MetricsRecord& m) {
  std::ostringstream os;
  os << m.epoch << ',' << m.step << ',' << fmt_double(m.loss_total) << ','
     << fmt_optional(m.loss_intra_video) << ',' << fmt_optional(m.loss_cycle) << ','
     << fmt_optional(m.loss_intra_image) << ',' << fmt_double(m.lr) << ',' << m.queue_fill << ','
     << fmt_double(m.wall_time);
  return os.str();
}

FitResult fit(const TrainConfig& cfg, const VideoDataset& data,
              const std::filesystem::path& out_dir, const FitOptions& options) {
  cfg.validate();
  if (static_cast<int>(data.height) != cfg.encoder.input_height ||
      static_cast<int>(data.width) != cfg.encoder.input_width) {
    throw ConfigError("dataset frames are " + std::to_string(data.height) + "x" +
                      std::to_string(data.width) + " but the encoder expects " +
                      std::to_string(cfg.encoder.input_height) + "x" +
                      std::to_string(cfg.encoder.input_width));
  }
  if (static_cast<std::uint32_t>(cfg.batch_size) > data.num_videos) {
    throw ConfigError("batch_size exceeds the number of videos");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const auto t0 = std::chrono::steady_clock::now();
  FitResult result;
  result.metrics_csv = out_dir / "metrics.csv";
  result.summary_json = out_dir / "summary.json";
  std::ofstream csv(result.metrics_csv, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + result.metrics_csv.string() + " for writing");
  csv << metrics_csv_header() << '\n';

  TrainState state = init_state(cfg);
  const std::uint64_t steps_per_epoch = data.num_videos / static_cast<std::uint32_t>(cfg.batch_size);
  const std::uint64_t total_steps = steps_per_epoch * static_cast<std::uint64_t>(cfg.epochs);
  const bool want_trace = options.trace && options.observer;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::uint64_t s = 0; s < steps_per_epoch; ++s) {
      const double lr = lr_at(cfg.lr_schedule, state.step, total_steps, cfg.lr);
      const auto batch = make_batch(data, cfg, state.step);
      StepTrace trace;
      MetricsRecord rec;
      try {
        rec = train_step(state, batch, cfg, lr, epoch, want_trace ? &trace : nullptr);
      } catch (const NumericError& e) {
        const auto dump = out_dir / "nan_diagnostic.txt";
        std::ofstream d(dump, std::ios::trunc);
        d << "error = " << e.what() << "\nstep = " << state.step << "\nepoch = " << epoch
          << "\nbatch_seed = " << batch_seed(cfg, state.step) << "\nvideo_ids =";
        for (auto v : batch.video_ids) d << ' ' << v;
        d << '\n';
        throw NumericError(std::string(e.what()) + "; diagnostic written to " + dump.string());
      }
      if (cfg.log_wall_time) {
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
      csv << metrics_csv_row(rec) << '\n';
      if (options.observer) options.observer(rec, want_trace ? &trace : nullptr);
      result.metrics.push_back(rec);
    }
    std::ostringstream name;
    name << "epoch_" << std::setw(3) << std::setfill('0') << (epoch + 1) << ".cckp";
    write_checkpoint(make_checkpoint(cfg, state), out_dir / name.str());
  }
  csv.close();
  if (!csv) throw IoError("write failure on " + result.metrics_csv.string());

  result.checkpoint = out_dir / "final.cckp";
  write_checkpoint(make_checkpoint(cfg, state), result.checkpoint);

  nlohmann::json summary;
  summary["steps"] = state.step;
  summary["epochs"] = cfg.epochs;
  summary["elapsed_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!result.metrics.empty()) {
    // Final losses are averaged over the last epoch.
    const std::size_t begin = result.metrics.size() - steps_per_epoch;
    double total = 0, video = 0, cycle = 0, image = 0;
    std::size_t nv = 0, nc = 0, ni = 0;
    for (std::size_t k = begin; k < result.metrics.size(); ++k) {
      const auto& m = result.metrics[k];
      total += m.loss_total;
      if (m.loss_intra_video) video += *m.loss_intra_video, ++nv;
      if (m.loss_cycle) cycle += *m.loss_cycle, ++nc;
      if (m.loss_intra_image) image += *m.loss_intra_image, ++ni;
    }
    summary["final_loss_total"] = total / static_cast<double>(steps_per_epoch);
    summary["final_loss_intra_video"] = nv ? nlohmann::json(video / nv) : nlohmann::json();
    summary["final_loss_cycle"] = nc ? nlohmann::json(cycle / nc) : nlohmann::json();
    summary["final_loss_intra_image"] = ni ? nlohmann::json(image / ni) : nlohmann::json();
  }
  summary["config"] = options.config_echo;
  std::ofstream js(result.summary_json, std::ios::trunc);
  if (!js) throw IoError("cannot open " + result.summary_json.string() + " for writing");
  js << summary.dump(2) << '\n';
  return result;
}

const char* to_string(LossPreset p) {
  switch (p) {
    case LossPreset::kIntraImage: return "intra-image";
    case LossPreset::kIntraVideo: return "intra-video";
    case LossPreset::kFull: return "full";
  }
  return "?";
}

const char* to_string(LrSchedule s) { return s == LrSchedule::kCosine ? "cosine" : "step"; }

const char* to_string(BackwardNegatives b) {
  return b == BackwardNegatives::kRemainder ? "remainder" : "neighbor_set";
}

LossPreset parse_loss_preset(const std::string& s) {
  if (s == "intra-image") return LossPreset::kIntraImage;
  if (s == "intra-video") return LossPreset::kIntraVideo;
  if (s == "full") return LossPreset::kFull;
  throw ConfigError("unknown loss preset '" + s + "' (expected intra-image, intra-video or full)");
}

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "cosine") return LrSchedule::kCosine;
  if (s == "step") return LrSchedule::kStep;
  throw ConfigError("unknown lr_schedule '" + s + "' (expected cosine or step)");
}

BackwardNegatives parse_backward_negatives(const std::string& s) {
  if (s == "remainder") return BackwardNegatives::kRemainder;
  if (s == "neighbor_set") return BackwardNegatives::kNeighborSet;
  throw ConfigError("unknown backward_negatives '" + s + "' (expected remainder or neighbor_set)");
}

}  // namespace cyclecl
