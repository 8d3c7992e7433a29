#include <cmath>
#include <random>

#include "cyclecl/encoder.hpp"
#include "doctest.h"

using namespace cyclecl;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.input_height = 6;
  cfg.input_width = 5;
  cfg.hidden_widths = {12, 9};
  cfg.embedding_dim = 7;
  cfg.projection_dim = 4;
  return cfg;
}

float max_abs_diff(const Encoder<float>& a, const Encoder<float>& b) {
  std::vector<const MatrixF*> pa;
  a.for_each([&](const MatrixF& m) { pa.push_back(&m); });
  float worst = 0;
  std::size_t i = 0;
  b.for_each([&](const MatrixF& m) {
    worst = std::max(worst, (m - *pa[i++]).cwiseAbs().maxCoeff());
  });
  return worst;
}

void fill(Encoder<float>& e, float v) {
  e.for_each([&](MatrixF& m) { m.setConstant(v); });
}

}  // namespace

TEST_CASE("init_params: determinism, key copy, layer shapes") {
  const auto cfg = small_config();
  const auto a = init_params<float>(cfg, 7);
  const auto b = init_params<float>(cfg, 7);
  CHECK(max_abs_diff(a.query, b.query) == 0.0f);
  CHECK(max_abs_diff(a.query, a.key) == 0.0f);
  CHECK(a.query.params.role == ParamRole::kQuery);
  CHECK(a.key.params.role == ParamRole::kKey);
  CHECK(max_abs_diff(a.query, init_params<float>(cfg, 8).query) > 0.0f);

  REQUIRE(a.query.params.layers.size() == 3);
  CHECK(a.query.params.layers[0].weight.rows() == 30);
  CHECK(a.query.params.layers[0].weight.cols() == 12);
  CHECK(a.query.params.layers[2].weight.cols() == 7);
  CHECK(a.query.heads.video.weight.cols() == 4);
  CHECK(a.query.heads.video.weight != a.query.heads.cycle.weight);
  CHECK(a.query.params.layers[1].bias.isZero());
  CHECK(a.query.parameter_count() == 30 * 12 + 12 + 12 * 9 + 9 + 9 * 7 + 7 + 2 * (7 * 4 + 4));
}

TEST_CASE("init_params: weight spread follows sqrt(6/fan_in)") {
  EncoderConfig cfg;
  cfg.input_height = 10;
  cfg.input_width = 10;
  cfg.hidden_widths = {100};
  const auto pair = init_params<double>(cfg, 3);
  const MatrixD& w = pair.query.params.layers[0].weight;
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().sum() / static_cast<double>(w.size() - 1));
  const double analytic = std::sqrt(6.0 / 100.0) / std::sqrt(3.0);
  CHECK(std::abs(sd - analytic) <= 0.2 * analytic);
  CHECK(w.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 100.0));
}

TEST_CASE("config validation") {
  auto cfg = small_config();
  cfg.embedding_dim = 1;
  CHECK_THROWS_AS(init_params<float>(cfg, 0), ConfigError);
  cfg = small_config();
  cfg.hidden_widths = {4, 0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  auto pair = init_params<float>(small_config(), 0);
  CHECK_THROWS_AS(ema_update(pair.key, pair.query, MomentumConfig{1.5}), ConfigError);
}

TEST_CASE("ema_update examples") {
  auto pair = init_params<float>(small_config(), 1);
  fill(pair.key, 0.0f);
  fill(pair.query, 1.0f);

  auto key = pair.key;
  ema_update(key, pair.query, MomentumConfig{1.0});
  CHECK(max_abs_diff(key, pair.key) == 0.0f);

  key = pair.key;
  ema_update(key, pair.query, MomentumConfig{0.0});
  CHECK(max_abs_diff(key, pair.query) == 0.0f);

  key = pair.key;
  ema_update(key, pair.query, MomentumConfig{0.999});
  key.for_each([](const MatrixF& m) {
    CHECK(m.array().isApprox(MatrixF::Constant(m.rows(), m.cols(), 0.001f).array(), 1e-4f));
  });

  auto other = init_params<float>(EncoderConfig{}, 1);
  CHECK_THROWS_AS(ema_update(other.key, pair.query, MomentumConfig{}), ConfigError);
}

TEST_CASE("ema_update is bit-exact and matches the closed form") {
  auto pair = init_params<float>(small_config(), 2);
  auto query = init_params<float>(small_config(), 9).query;
  const float m = 0.999f;
  auto key = pair.key;
  auto expected = pair.key;
  std::vector<const MatrixF*> q;
  query.for_each([&](const MatrixF& p) { q.push_back(&p); });
  std::size_t i = 0;
  expected.for_each([&](MatrixF& k) { k = (m * k.array() + (1.0f - m) * q[i++]->array()).matrix(); });
  ema_update(key, query, MomentumConfig{0.999});
  CHECK(max_abs_diff(key, expected) == 0.0f);

  fill(pair.key, 0.0f);
  fill(pair.query, 1.0f);
  for (int t = 1; t <= 2000; ++t) {
    ema_update(pair.key, pair.query, MomentumConfig{0.999});
    if (t % 250 == 0) {
      const double closed = 1.0 - std::pow(0.999, t);
      pair.key.for_each([&](const MatrixF& k) {
        CHECK((k.array().cast<double>() - closed).abs().maxCoeff() <= 1e-5);
      });
    }
  }
}

TEST_CASE("encode: unit rows, empty batch, determinism, taped agreement") {
  const auto cfg = small_config();
  const auto pair = init_params<float>(cfg, 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  MatrixF x(11, cfg.input_dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);

  const auto a = encode(pair.query, x);
  const auto b = encode(pair.query, x);
  CHECK(a.z_video == b.z_video);
  CHECK(a.z_cycle == b.z_cycle);
  CHECK(a.backbone.cols() == cfg.embedding_dim);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    CHECK(std::abs(a.z_video.row(r).norm() - 1.0f) <= 1e-6f);
    CHECK(std::abs(a.z_cycle.row(r).norm() - 1.0f) <= 1e-6f);
  }
  CHECK((a.backbone.array() >= 0.0f).all());

  const auto empty = encode(pair.query, MatrixF(0, cfg.input_dim()));
  CHECK(empty.z_video.rows() == 0);
  CHECK(empty.z_video.cols() == cfg.projection_dim);
  CHECK(empty.z_cycle.cols() == cfg.projection_dim);

  CHECK_THROWS_AS(encode(pair.query, MatrixF(MatrixF::Zero(2, 7))), DimensionError);

  Tape<float> tape;
  const auto bound = bind(tape, pair.query);
  const auto t = encode(bound, tape.constant(x));
  CHECK((t.z_video.value() - a.z_video).cwiseAbs().maxCoeff() <= 1e-6f);
  CHECK((t.z_cycle.value() - a.z_cycle).cwiseAbs().maxCoeff() <= 1e-6f);
  CHECK((t.backbone.value() - a.backbone).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("taped encoder gradient matches finite differences in double") {
  auto cfg = small_config();
  cfg.hidden_widths = {6};
  const auto pair = init_params<double>(cfg, 6);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  MatrixD x(3, cfg.input_dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  const MatrixD w = MatrixD::Random(3, cfg.projection_dim);

  auto value = [&](const Encoder<double>& e) {
    const auto out = encode(e, x);
    return (out.z_video.array() * w.array()).sum() + (out.z_cycle.array() * w.array()).sum();
  };
  Tape<double> tape;
  const auto bound = bind(tape, pair.query);
  const auto t = encode(bound, tape.constant(x));
  const auto wt = tape.constant(w);
  auto loss = sum(add(mul(t.z_video, wt), mul(t.z_cycle, wt)));
  tape.backward(loss);

  double worst = 0;
  std::size_t leaf = 0;
  auto probe = pair.query;
  probe.for_each([&](MatrixD& p) {
    const MatrixD& g = bound.leaves[leaf++].grad();
    for (Eigen::Index k = 0; k < p.size(); k += 5) {
      const double x0 = p.data()[k];
      const double h = 1e-6;
      p.data()[k] = x0 + h;
      const double fp = value(probe);
      p.data()[k] = x0 - h;
      const double fm = value(probe);
      p.data()[k] = x0;
      const double num = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(num - g.data()[k]) / (std::max(std::abs(num), std::abs(g.data()[k])) + 1e-6));
    }
  });
  CHECK(worst <= 1e-5);
}
