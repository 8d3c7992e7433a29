#include <filesystem>
#include <random>

#include "cyclecl/checkpoint.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cyclecl;

namespace {

Checkpoint sample_checkpoint() {
  EncoderConfig cfg;
  cfg.input_height = 4;
  cfg.input_width = 3;
  cfg.hidden_widths = {5};
  cfg.embedding_dim = 3;
  cfg.projection_dim = 2;
  Checkpoint c;
  c.config = cfg;
  c.nets = init_params<float>(cfg, 11);
  ema_update(c.nets.key, init_params<float>(cfg, 12).query, MomentumConfig{0.5});
  std::mt19937_64 rng(13);
  MemoryQueue a(6, 2), b(6, 2);
  std::vector<VideoId> ids{4, 9, 2};
  a.enqueue_dequeue(oracle::random_unit_rows(rng, 3, 2).cast<float>(), ids);
  for (int i = 0; i < 3; ++i) b.enqueue_dequeue(oracle::random_unit_rows(rng, 3, 2).cast<float>(), ids);
  c.queues = {a, b};
  c.step = 123456789012ULL;
  return c;
}

bool same_encoder(const Encoder<float>& x, const Encoder<float>& y) {
  std::vector<MatrixF> a, b;
  x.for_each([&](const MatrixF& m) { a.push_back(m); });
  y.for_each([&](const MatrixF& m) { b.push_back(m); });
  return a == b;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const auto c = sample_checkpoint();
  const auto bytes = serialize_checkpoint(c);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CCKP");
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back.config == c.config);
  CHECK(same_encoder(back.nets.query, c.nets.query));
  CHECK(same_encoder(back.nets.key, c.nets.key));
  CHECK(back.nets.key.params.role == ParamRole::kKey);
  REQUIRE(back.queues.size() == 2);
  CHECK(back.queues[0] == c.queues[0]);
  CHECK(back.queues[1] == c.queues[1]);
  CHECK(back.step == c.step);
  CHECK(serialize_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "cyclecl_test_round.cckp";
  write_checkpoint(c, path);
  CHECK(serialize_checkpoint(read_checkpoint(path)) == bytes);
}

TEST_CASE("checkpoint format errors carry byte offsets") {
  const auto bytes = serialize_checkpoint(sample_checkpoint());

  auto bad = bytes;
  bad[1] = 'X';
  try {
    deserialize_checkpoint(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  bad = bytes;
  bad[4] = 9;
  try {
    deserialize_checkpoint(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 4);
  }

  for (std::size_t cut : {std::size_t{6}, std::size_t{30}, bytes.size() / 2, bytes.size() - 1}) {
    auto t = bytes;
    t.resize(cut);
    try {
      deserialize_checkpoint(t);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() <= cut);
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
  }

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(trailing), FormatError);

  // embedding_dim (offset 24 with one hidden layer) set to 1.
  bad = bytes;
  bad[24] = 1;
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);

  CHECK_THROWS_AS(read_checkpoint("/nonexistent_dir/x.cckp"), IoError);
}
