#pragma once

// MLP backbone with two projection heads, and the query/key momentum pair.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "cyclecl/tensor.hpp"

namespace cyclecl {

struct EncoderConfig {
  int input_height = 32;
  int input_width = 32;
  std::vector<int> hidden_widths{256, 128};
  int embedding_dim = 64;   // backbone output width
  int projection_dim = 64;  // width of both heads

  int input_dim() const { return input_height * input_width; }

  void validate() const {
    if (input_height < 1 || input_width < 1) throw ConfigError("input shape must be positive");
    for (int w : hidden_widths) {
      if (w < 1) throw ConfigError("hidden widths must be >= 1");
    }
    if (embedding_dim < 2) throw ConfigError("embedding_dim must be >= 2");
    if (projection_dim < 2) throw ConfigError("projection_dim must be >= 2");
  }

  bool operator==(const EncoderConfig&) const = default;
};

template <typename Scalar>
struct Linear {
  Matrix<Scalar> weight;  // fan_in x fan_out
  Matrix<Scalar> bias;    // 1 x fan_out
};

enum class ParamRole { kQuery, kKey };

// Backbone layers; ReLU follows every layer.
template <typename Scalar>
struct EncoderParams {
  ParamRole role = ParamRole::kQuery;
  std::vector<Linear<Scalar>> layers;
};

// Separate affine heads for the intra-video loss and the cycle loss.
template <typename Scalar>
struct ProjectionHeads {
  Linear<Scalar> video;
  Linear<Scalar> cycle;
};

template <typename Scalar>
struct Encoder {
  EncoderParams<Scalar> params;
  ProjectionHeads<Scalar> heads;

  // Visits every parameter matrix in declaration order: backbone layers
  // (weight, bias) first to last, then the video head, then the cycle head.
  template <typename F>
  void for_each(F&& f) {
    for (auto& l : params.layers) {
      f(l.weight);
      f(l.bias);
    }
    f(heads.video.weight);
    f(heads.video.bias);
    f(heads.cycle.weight);
    f(heads.cycle.bias);
  }

  template <typename F>
  void for_each(F&& f) const {
    for (const auto& l : params.layers) {
      f(l.weight);
      f(l.bias);
    }
    f(heads.video.weight);
    f(heads.video.bias);
    f(heads.cycle.weight);
    f(heads.cycle.bias);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const Matrix<Scalar>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }
};

template <typename Scalar>
struct MomentumPair {
  Encoder<Scalar> query;
  Encoder<Scalar> key;
};

struct MomentumConfig {
  double momentum_coefficient = 0.999;

  void validate() const {
    if (!(momentum_coefficient >= 0.0 && momentum_coefficient <= 1.0)) {
      throw ConfigError("momentum_coefficient must lie in [0, 1]");
    }
  }
};

// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases; the key
// network starts as an exact copy of the query network.
template <typename Scalar>
MomentumPair<Scalar> init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto make = [&](int fan_in, int fan_out) {
    Linear<Scalar> l;
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    l.weight.resize(fan_in, fan_out);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) {
      l.weight.data()[i] = static_cast<Scalar>(dist(rng));
    }
    l.bias = Matrix<Scalar>::Zero(1, fan_out);
    return l;
  };
  MomentumPair<Scalar> pair;
  int fan_in = cfg.input_dim();
  for (int w : cfg.hidden_widths) {
    pair.query.params.layers.push_back(make(fan_in, w));
    fan_in = w;
  }
  pair.query.params.layers.push_back(make(fan_in, cfg.embedding_dim));
  pair.query.heads.video = make(cfg.embedding_dim, cfg.projection_dim);
  pair.query.heads.cycle = make(cfg.embedding_dim, cfg.projection_dim);
  pair.query.params.role = ParamRole::kQuery;
  pair.key = pair.query;
  pair.key.params.role = ParamRole::kKey;
  return pair;
}

namespace detail {

template <typename Scalar>
void check_same_structure(const Encoder<Scalar>& a, const Encoder<Scalar>& b) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> sa, sb;
  a.for_each([&](const Matrix<Scalar>& m) { sa.emplace_back(m.rows(), m.cols()); });
  b.for_each([&](const Matrix<Scalar>& m) { sb.emplace_back(m.rows(), m.cols()); });
  if (sa != sb) throw ConfigError("query and key parameter lists are not structurally identical");
}

}  // namespace detail

// key <- m key + (1 - m) query, elementwise, in the network's scalar type.
template <typename Scalar>
void ema_update(Encoder<Scalar>& key, const Encoder<Scalar>& query, const MomentumConfig& cfg) {
  cfg.validate();
  detail::check_same_structure(key, query);
  const Scalar m = static_cast<Scalar>(cfg.momentum_coefficient);
  const Scalar one_minus = Scalar(1) - m;
  std::vector<const Matrix<Scalar>*> q;
  query.for_each([&](const Matrix<Scalar>& p) { q.push_back(&p); });
  std::size_t i = 0;
  key.for_each([&](Matrix<Scalar>& k) {
    k = (m * k.array() + one_minus * q[i++]->array()).matrix();
  });
}

template <typename Scalar>
struct EncodedBatch {
  Matrix<Scalar> backbone;  // raw backbone features, n x embedding_dim
  Matrix<Scalar> z_video;   // unit rows, n x projection_dim
  Matrix<Scalar> z_cycle;   // unit rows, n x projection_dim
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& m) {
  Matrix<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Scalar norm = m.row(r).norm();
    if (!(norm > Scalar(kNormEpsilon))) {
      throw NumericError("normalize_rows: row " + std::to_string(r) + " has degenerate norm");
    }
    out.row(r) = m.row(r) / norm;
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> affine(const Matrix<Scalar>& x, const Linear<Scalar>& l) {
  return (x * l.weight).rowwise() + l.bias.row(0);
}

}  // namespace detail

// Forward pass outside any tape (key path, evaluation).
template <typename Scalar>
EncodedBatch<Scalar> encode(const Encoder<Scalar>& enc, const Matrix<Scalar>& batch) {
  if (enc.params.layers.empty()) throw ConfigError("encode: encoder has no layers");
  if (batch.cols() != enc.params.layers.front().weight.rows()) {
    throw DimensionError("encode: batch " + shape_string(batch) + " does not match input width " +
                         std::to_string(enc.params.layers.front().weight.rows()));
  }
  Matrix<Scalar> h = batch;
  for (const auto& l : enc.params.layers) {
    h = detail::affine(h, l).cwiseMax(Scalar(0));
  }
  EncodedBatch<Scalar> out;
  out.z_video = detail::normalize_rows<Scalar>(detail::affine(h, enc.heads.video));
  out.z_cycle = detail::normalize_rows<Scalar>(detail::affine(h, enc.heads.cycle));
  out.backbone = std::move(h);
  return out;
}

// Encoder parameters bound as tape leaves, in for_each order.
template <typename Scalar>
struct BoundEncoder {
  std::vector<Tensor<Scalar>> leaves;
};

template <typename Scalar>
BoundEncoder<Scalar> bind(Tape<Scalar>& tape, const Encoder<Scalar>& enc) {
  BoundEncoder<Scalar> b;
  enc.for_each([&](const Matrix<Scalar>& m) { b.leaves.push_back(tape.leaf(m, true)); });
  return b;
}

template <typename Scalar>
struct TapedEncoding {
  Tensor<Scalar> backbone;
  Tensor<Scalar> z_video;
  Tensor<Scalar> z_cycle;
};

// Forward pass recorded on the tape, for the query network.
template <typename Scalar>
TapedEncoding<Scalar> encode(const BoundEncoder<Scalar>& bound, const Tensor<Scalar>& batch) {
  const auto& p = bound.leaves;
  if (p.size() < 6 || p.size() % 2 != 0) throw ConfigError("encode: malformed bound encoder");
  const std::size_t layers = p.size() / 2 - 2;
  if (batch.cols() != p[0].rows()) {
    throw DimensionError("encode: batch " + shape_string(batch.value()) +
                         " does not match input width " + std::to_string(p[0].rows()));
  }
  Tensor<Scalar> h = batch;
  for (std::size_t i = 0; i < layers; ++i) {
    h = relu(add_row(matmul(h, p[2 * i]), p[2 * i + 1]));
  }
  const std::size_t v = 2 * layers;
  auto z_video = l2_normalize(add_row(matmul(h, p[v]), p[v + 1]));
  auto z_cycle = l2_normalize(add_row(matmul(h, p[v + 2]), p[v + 3]));
  return {h, z_video, z_cycle};
}

}  // namespace cyclecl
