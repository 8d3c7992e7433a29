#include "cyclecl/synthetic_videos.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "cyclecl/binary_io.hpp"
#include "cyclecl/seeding.hpp"

namespace cyclecl {

namespace {

constexpr double kPi = std::numbers::pi;

const std::array<const char*, kNumPrototypes> kPrototypeNames = {
    "horizontal_grating", "diagonal_grating", "disk",         "ring",
    "plus",               "saltire",          "square_frame", "checkerboard",
    "target",             "triangle",         "dot_grid",     "crescent",
};

double smoothstep_edge(double signed_dist, double width) {
  // 1 inside (negative distance), 0 outside, linear ramp of the given width.
  return std::clamp(0.5 - signed_dist / width, 0.0, 1.0);
}

// Intensity of prototype `cls` at local coordinates (x, y); the prototype
// lives roughly inside the unit disk. `edge` is the antialiasing width in
// local units.
double prototype_intensity(int cls, double x, double y, double edge) {
  const double r = std::hypot(x, y);
  const double window = smoothstep_edge(r - 0.75, edge);
  switch (cls) {
    case 0:  // horizontal bars
      return window * (0.5 + 0.5 * std::cos(2 * kPi * 1.6 * y));
    case 1: {  // fine bars at 45 degrees
      const double t = (x + y) / std::sqrt(2.0);
      return window * (0.5 + 0.5 * std::cos(2 * kPi * 2.6 * t));
    }
    case 2:
      return smoothstep_edge(r - 0.5, edge);
    case 3:
      return smoothstep_edge(std::abs(r - 0.55) - 0.1, edge);
    case 4: {
      const double arm = std::min(std::max(std::abs(x) - 0.12, std::abs(y) - 0.7),
                                  std::max(std::abs(y) - 0.12, std::abs(x) - 0.7));
      return smoothstep_edge(arm, edge);
    }
    case 5: {
      const double u = (x + y) / std::sqrt(2.0), v = (x - y) / std::sqrt(2.0);
      const double arm = std::min(std::max(std::abs(u) - 0.12, std::abs(v) - 0.7),
                                  std::max(std::abs(v) - 0.12, std::abs(u) - 0.7));
      return smoothstep_edge(arm, edge);
    }
    case 6: {
      const double box = std::max(std::abs(x), std::abs(y));
      return smoothstep_edge(std::abs(box - 0.5) - 0.09, edge);
    }
    case 7: {
      const double box = std::max(std::abs(x), std::abs(y));
      const int cx = static_cast<int>(std::floor((x + 0.6) / 0.3));
      const int cy = static_cast<int>(std::floor((y + 0.6) / 0.3));
      return smoothstep_edge(box - 0.6, edge) * ((cx + cy) % 2 == 0 ? 1.0 : 0.15);
    }
    case 8:
      return smoothstep_edge(r - 0.7, edge) * (0.5 + 0.5 * std::cos(2 * kPi * 2.2 * r));
    case 9: {
      // Upward triangle as the intersection of three half-planes.
      double d = -1e9;
      for (int k = 0; k < 3; ++k) {
        const double a = kPi / 2 + 2 * kPi * k / 3;
        d = std::max(d, x * std::cos(a) + y * std::sin(a) - 0.32);
      }
      return smoothstep_edge(d, edge);
    }
    case 10: {
      double best = 1e9;
      for (int i = -1; i <= 1; ++i) {
        for (int j = -1; j <= 1; ++j) best = std::min(best, std::hypot(x - 0.42 * i, y - 0.42 * j));
      }
      return smoothstep_edge(best - 0.13, edge);
    }
    case 11: {
      const double outer = r - 0.55;
      const double inner = 0.45 - std::hypot(x - 0.25, y);
      return smoothstep_edge(std::max(outer, inner), edge);
    }
    default:
      return 0.0;
  }
}

InstanceParams draw_instance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  InstanceParams p;
  p.center_x = static_cast<float>(0.05 * u(rng));
  p.center_y = static_cast<float>(0.05 * u(rng));
  p.scale = static_cast<float>(0.75 + 0.05 * u(rng));
  p.rotation = static_cast<float>(0.3 * u(rng));
  p.brightness = static_cast<float>(0.7 + 0.2 * u(rng));
  p.velocity_x = static_cast<float>(0.05 * u(rng));
  p.velocity_y = static_cast<float>(0.05 * u(rng));
  p.angular_velocity = 0.0f;
  rng.discard(1);
  p.scale_rate = static_cast<float>(0.06 * u(rng));
  p.background = static_cast<float>(0.15 + 0.05 * u(rng));
  p.background_tilt_x = static_cast<float>(0.05 * u(rng));
  p.background_tilt_y = static_cast<float>(0.05 * u(rng));
  return p;
}

void render_frame(int cls, const InstanceParams& p, double t, int height, int width, float* out) {
  const double cx = p.center_x + p.velocity_x * t;
  const double cy = p.center_y + p.velocity_y * t;
  const double theta = p.rotation + p.angular_velocity * t;
  const double s = p.scale * (1.0 + p.scale_rate * t);
  const double c = std::cos(theta), sn = std::sin(theta);
  const double edge = 2.0 / (std::min(height, width) * s);
  for (int row = 0; row < height; ++row) {
    const double v = 2.0 * (row + 0.5) / height - 1.0;
    for (int col = 0; col < width; ++col) {
      const double u = 2.0 * (col + 0.5) / width - 1.0;
      const double dx = (u - cx) / s, dy = (v - cy) / s;
      const double x = c * dx + sn * dy;
      const double y = -sn * dx + c * dy;
      const double bg = p.background + p.background_tilt_x * u + p.background_tilt_y * v;
      const double val = bg + p.brightness * prototype_intensity(cls, x, y, edge);
      out[row * width + col] = static_cast<float>(std::clamp(val, 0.0, 1.0));
    }
  }
}

// Soft background texture drifting independently of the object.
struct Blob {
  double x, y, amplitude, vx, vy;
};

constexpr int kBackgroundBlobs = 4;
constexpr double kBlobSigma = 0.25;
constexpr double kPixelNoise = 0.2;

void add_blob(const Blob& b, double t, int height, int width, float* out) {
  const double bx = b.x + b.vx * t, by = b.y + b.vy * t;
  for (int row = 0; row < height; ++row) {
    const double v = 2.0 * (row + 0.5) / height - 1.0;
    for (int col = 0; col < width; ++col) {
      const double u = 2.0 * (col + 0.5) / width - 1.0;
      const double r2 = (u - bx) * (u - bx) + (v - by) * (v - by);
      out[row * width + col] += static_cast<float>(
          b.amplitude * std::exp(-0.5 * r2 / (kBlobSigma * kBlobSigma)));
    }
  }
}

float bilinear(const Eigen::Ref<const MatrixF>& img, int height, int width, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, height - 1), x1 = std::min(x0 + 1, width - 1);
  const double fy = y - y0, fx = x - x0;
  auto at = [&](int r, int c) { return static_cast<double>(img(0, r * width + c)); };
  const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
  const double bot = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

}  // namespace

const char* prototype_name(int class_id) {
  if (class_id < 0 || class_id >= kNumPrototypes) return "unknown";
  return kPrototypeNames[static_cast<std::size_t>(class_id)];
}

Eigen::Map<const MatrixF> VideoDataset::frame(std::uint32_t video, std::uint32_t frame_idx) const {
  const std::size_t offset = (std::size_t{video} * frames_per_video + frame_idx) * frame_size();
  return Eigen::Map<const MatrixF>(pixels.data() + offset, 1,
                                   static_cast<Eigen::Index>(frame_size()));
}

GeneratedData generate(const GenerateOptions& opts) {
  if (opts.num_videos == 0) throw ParameterError("num_videos must be positive");
  if (opts.frames_per_video < 2) throw ParameterError("frames_per_video must be >= 2");
  if (opts.num_classes == 0) throw ParameterError("num_classes must be positive");
  if (opts.num_classes > static_cast<std::uint32_t>(kNumPrototypes)) {
    throw ParameterError("num_classes " + std::to_string(opts.num_classes) + " exceeds the " +
                         std::to_string(kNumPrototypes) + " available prototypes");
  }
  if (opts.height < 4 || opts.width < 4) throw ParameterError("frame size must be >= 4");

  GeneratedData g;
  auto& d = g.videos;
  d.num_videos = opts.num_videos;
  d.frames_per_video = opts.frames_per_video;
  d.height = opts.height;
  d.width = opts.width;
  d.num_classes = opts.num_classes;
  d.seed = opts.seed;
  d.pixels.resize(std::size_t{d.num_videos} * d.frames_per_video * d.frame_size());
  g.labels.labels.resize(d.num_videos);
  g.instances.resize(d.num_videos);

  for (std::uint32_t v = 0; v < d.num_videos; ++v) {
    g.labels.labels[v] = static_cast<std::uint16_t>(v % d.num_classes);
  }
  std::mt19937_64 lrng(derive_seed(opts.seed, {kStreamLabels}));
  std::shuffle(g.labels.labels.begin(), g.labels.labels.end(), lrng);

  const double mid = 0.5 * (static_cast<double>(d.frames_per_video) - 1.0);
  std::uniform_real_distribution<double> uu(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, kPixelNoise);
  for (std::uint32_t v = 0; v < d.num_videos; ++v) {
    std::mt19937_64 rng(derive_seed(opts.seed, {kStreamVideo, v}));
    rng.discard(1);
    const int cls = g.labels.labels[v];
    g.instances[v] = draw_instance(rng);
    std::array<Blob, kBackgroundBlobs> blobs;
    for (auto& b : blobs) {
      b.x = uu(rng);
      b.y = uu(rng);
      b.amplitude = 0.5 * (0.5 + 0.5 * uu(rng));
      b.vx = 0.4 * uu(rng);
      b.vy = 0.4 * uu(rng);
    }
    for (std::uint32_t f = 0; f < d.frames_per_video; ++f) {
      float* out = d.pixels.data() + (std::size_t{v} * d.frames_per_video + f) * d.frame_size();
      const double t = f - mid;
      render_frame(cls, g.instances[v], t, static_cast<int>(d.height),
                   static_cast<int>(d.width), out);
      for (const auto& b : blobs) add_blob(b, t, static_cast<int>(d.height), static_cast<int>(d.width), out);
      std::mt19937_64 frng(derive_seed(opts.seed, {kStreamVideo, v, f + 1}));
      noise.reset();
      for (std::size_t i = 0; i < d.frame_size(); ++i) {
        out[i] = static_cast<float>(std::clamp(out[i] + noise(frng), 0.0, 1.0));
      }
    }
  }
  return g;
}

void AugmentConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(aspect_jitter >= 0.0)) throw ConfigError("aspect_jitter must be >= 0");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  if (!(brightness_jitter >= 0.0 && brightness_jitter < 1.0)) {
    throw ConfigError("brightness_jitter must lie in [0, 1)");
  }
  if (!(contrast_jitter >= 0.0 && contrast_jitter < 1.0)) {
    throw ConfigError("contrast_jitter must lie in [0, 1)");
  }
}

MatrixF augment(const Eigen::Ref<const MatrixF>& frame, int height, int width,
                const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (frame.rows() != 1 || frame.cols() != static_cast<Eigen::Index>(height) * width) {
    throw DimensionError("augment: frame " + shape_string(frame) + " is not a " +
                         std::to_string(height) + "x" + std::to_string(width) + " image row");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double area = cfg.crop_scale_min + (cfg.crop_scale_max - cfg.crop_scale_min) * unit(rng);
  const double log_ratio = cfg.aspect_jitter * (2.0 * unit(rng) - 1.0);
  const double ratio = std::exp(log_ratio);
  const double crop_w = std::min(static_cast<double>(width), width * std::sqrt(area * ratio));
  const double crop_h = std::min(static_cast<double>(height), height * std::sqrt(area / ratio));
  const double x0 = (width - crop_w) * unit(rng);
  const double y0 = (height - crop_h) * unit(rng);
  const double brightness = 1.0 + cfg.brightness_jitter * (2.0 * unit(rng) - 1.0);
  const double contrast = 1.0 + cfg.contrast_jitter * (2.0 * unit(rng) - 1.0);

  MatrixF out(1, frame.cols());
  for (int r = 0; r < height; ++r) {
    const double sy = y0 + (r + 0.5) * crop_h / height - 0.5;
    for (int c = 0; c < width; ++c) {
      const double sx = x0 + (c + 0.5) * crop_w / width - 0.5;
      out(0, r * width + c) = bilinear(frame, height, width, sy, sx);
    }
  }
  if (cfg.brightness_jitter > 0.0 || cfg.contrast_jitter > 0.0) {
    const double mean = out.mean();
    out = ((out.array().cast<double>() - mean) * contrast + mean).cast<float>() *
          static_cast<float>(brightness);
  }
  if (cfg.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      out(0, i) = static_cast<float>(out(0, i) + noise(rng));
    }
  }
  return out.cwiseMax(0.0f).cwiseMin(1.0f);
}

PairBatch sample_pair_batch(const VideoDataset& data, int batch_size, std::uint64_t seed,
                            const AugmentConfig& cfg, bool second_view_of_i) {
  if (batch_size < 1) throw ParameterError("batch_size must be positive");
  if (static_cast<std::uint32_t>(batch_size) > data.num_videos) {
    throw ParameterError("batch_size " + std::to_string(batch_size) + " exceeds " +
                         std::to_string(data.num_videos) + " videos");
  }
  if (data.frames_per_video < 2) throw ParameterError("pair sampling needs >= 2 frames per video");

  std::mt19937_64 rng(seed);
  std::vector<std::uint32_t> pool(data.num_videos);
  for (std::uint32_t v = 0; v < data.num_videos; ++v) pool[v] = v;
  for (int i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
  }

  const int h = static_cast<int>(data.height), w = static_cast<int>(data.width);
  const auto dim = static_cast<Eigen::Index>(data.frame_size());
  PairBatch b;
  b.x_i.resize(batch_size, dim);
  b.x_j.resize(batch_size, dim);
  if (second_view_of_i) b.x_i_view.resize(batch_size, dim);
  for (int r = 0; r < batch_size; ++r) {
    const std::uint32_t v = pool[static_cast<std::size_t>(r)];
    std::uniform_int_distribution<std::uint32_t> first(0, data.frames_per_video - 1);
    std::uniform_int_distribution<std::uint32_t> second(0, data.frames_per_video - 2);
    const std::uint32_t fi = first(rng);
    std::uint32_t fj = second(rng);
    if (fj >= fi) ++fj;
    const std::uint64_t s_i = rng(), s_j = rng(), s_view = rng();
    b.x_i.row(r) = augment(data.frame(v, fi), h, w, cfg, s_i);
    b.x_j.row(r) = augment(data.frame(v, fj), h, w, cfg, s_j);
    if (second_view_of_i) b.x_i_view.row(r) = augment(data.frame(v, fi), h, w, cfg, s_view);
    b.video_ids.push_back(v);
    b.frame_i.push_back(fi);
    b.frame_j.push_back(fj);
  }
  return b;
}

void write_dataset(const VideoDataset& videos, const ClassLabels& labels,
                   const std::filesystem::path& path) {
  const std::size_t expected =
      std::size_t{videos.num_videos} * videos.frames_per_video * videos.frame_size();
  if (videos.pixels.size() != expected) {
    throw DimensionError("write_dataset: pixel count does not match header");
  }
  if (labels.labels.size() != videos.num_videos) {
    throw DimensionError("write_dataset: label count does not match num_videos");
  }
  io::Writer w;
  w.bytes("CCV1", 4);
  w.u32(kDatasetVersion);
  w.u32(videos.num_videos);
  w.u32(videos.frames_per_video);
  w.u32(videos.height);
  w.u32(videos.width);
  w.u32(videos.num_classes);
  w.u64(videos.seed);
  w.f32s(videos.pixels.data(), videos.pixels.size());
  for (auto l : labels.labels) w.u16(l);
  io::write_file(path.string(), w.buffer());
}

GeneratedData read_dataset(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path.string());
  io::Reader r(bytes.data(), bytes.size());
  if (r.tag(4, "magic") != "CCV1") throw FormatError("bad magic, expected CCV1", 0);
  const auto version = r.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported CCV1 version " + std::to_string(version), 4);
  }
  GeneratedData g;
  auto& d = g.videos;
  d.num_videos = r.u32("num_videos");
  d.frames_per_video = r.u32("frames_per_video");
  d.height = r.u32("height");
  d.width = r.u32("width");
  d.num_classes = r.u32("num_classes");
  d.seed = r.u64("seed");
  const std::uint64_t pixel_count =
      std::uint64_t{d.num_videos} * d.frames_per_video * d.height * d.width;
  const std::uint64_t payload = pixel_count * 4 + std::uint64_t{d.num_videos} * 2;
  if (r.remaining() != payload) {
    throw FormatError("payload length mismatch: expected " + std::to_string(payload) +
                          " bytes after header, found " + std::to_string(r.remaining()),
                      r.offset());
  }
  d.pixels.resize(pixel_count);
  r.f32s(d.pixels.data(), d.pixels.size(), "pixels");
  g.labels.labels.resize(d.num_videos);
  for (auto& l : g.labels.labels) {
    const auto at = r.offset();
    l = r.u16("labels");
    if (l >= d.num_classes) throw FormatError("class label out of range", at);
  }
  return g;
}

}  // namespace cyclecl
