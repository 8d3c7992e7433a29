#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "cyclecl/eval.hpp"
#include "cyclecl/trainer.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cyclecl;

namespace {

EmbeddingTable table(const MatrixF& rows, std::vector<int> labels, std::uint64_t source = 0) {
  EmbeddingTable t;
  t.rows = rows;
  t.labels = std::move(labels);
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    t.ids.push_back({source, static_cast<std::uint32_t>(i / 2), static_cast<std::uint32_t>(i % 2)});
  }
  return t;
}

EmbeddingTable random_table(std::mt19937_64& rng, int n, int d, int classes, std::uint64_t source) {
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng() % classes));
  return table(oracle::random_unit_rows(rng, n, d).cast<float>(), labels, source);
}

// Hit rates from a full sort of the gallery for every query, ties broken by
// sample id.
std::vector<double> full_sort_hits(const EmbeddingTable& q, const EmbeddingTable& g,
                                   const std::vector<int>& ks) {
  std::vector<double> hits(ks.size(), 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<std::tuple<double, SampleId, int>> ranked;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g.ids[j] == q.ids[i]) continue;
      const double s = static_cast<double>(
          q.rows.row(static_cast<Eigen::Index>(i)).dot(g.rows.row(static_cast<Eigen::Index>(j))));
      ranked.emplace_back(-s, g.ids[j], g.labels[j]);
    }
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t k = 0; k < ks.size(); ++k) {
      for (int r = 0; r < ks[k]; ++r) {
        if (std::get<2>(ranked[static_cast<std::size_t>(r)]) == q.labels[i]) {
          hits[k] += 1.0;
          break;
        }
      }
    }
  }
  for (auto& h : hits) h /= static_cast<double>(q.size());
  return hits;
}

}  // namespace

TEST_CASE("retrieval examples") {
  MatrixF g(1, 2);
  g << 1, 0;
  MatrixF q(1, 2);
  q << 0, 1;
  const std::vector<int> one{1};
  CHECK(knn_retrieval(table(q, {3}, 1), table(g, {3}, 2), one).hit_rates[0] == 1.0);

  std::mt19937_64 rng(1);
  auto gal = random_table(rng, 40, 5, 4, 2);
  for (int c = 0; c < 4; ++c) gal.labels[static_cast<std::size_t>(c)] = c;
  const auto qry = random_table(rng, 20, 5, 4, 3);
  const std::vector<int> all{40};
  CHECK(knn_retrieval(qry, gal, all).hit_rates[0] == 1.0);

  const std::vector<int> too_many{41}, zero{0};
  CHECK_THROWS_AS(knn_retrieval(qry, gal, too_many), ParameterError);
  CHECK_THROWS_AS(knn_retrieval(qry, gal, zero), ParameterError);
  CHECK_THROWS_AS(knn_retrieval(qry, table(MatrixF(0, 5), {}), one), ParameterError);
}

TEST_CASE("retrieval excludes the identical sample and breaks ties by id") {
  MatrixF rows(3, 2);
  rows << 1, 0, 1, 0, 0, 1;
  const auto t = table(rows, {0, 1, 0});
  const std::vector<int> one{1};
  const auto r = knn_retrieval(t, t, one);
  // Row 0's nearest other row is row 1 (class 1): a miss at k = 1.
  CHECK(r.first_hit_rank[0] == 2);
  CHECK(r.first_hit_rank[1] == 0);

  MatrixF tie(2, 2);
  tie << 0, 1, 0, -1;
  MatrixF q(1, 2);
  q << 1, 0;
  auto gal = table(tie, {5, 6}, 9);
  CHECK(knn_retrieval(table(q, {6}, 1), gal, one).hit_rates[0] == 0.0);
  std::swap(gal.ids[0], gal.ids[1]);
  CHECK(knn_retrieval(table(q, {6}, 1), gal, one).hit_rates[0] == 1.0);
}

TEST_CASE("retrieval matches a full-sort oracle") {
  std::mt19937_64 rng(2);
  const std::vector<int> ks{1, 5, 10};
  for (int trial = 0; trial < 10; ++trial) {
    const auto gal = random_table(rng, 50, 8, 5, 100);
    const auto qry = random_table(rng, 8, 8, 5, 200);
    CHECK(knn_retrieval(qry, gal, ks).hit_rates == full_sort_hits(qry, gal, ks));
    // Gallery as its own query set exercises self-exclusion.
    CHECK(knn_retrieval(gal, gal, ks).hit_rates == full_sort_hits(gal, gal, ks));
  }
}

TEST_CASE("retrieval properties: monotone in k, rotation invariant") {
  std::mt19937_64 rng(3);
  const auto gal = random_table(rng, 80, 6, 6, 1);
  const auto qry = random_table(rng, 30, 6, 6, 2);
  std::vector<int> ks(80);
  std::iota(ks.begin(), ks.end(), 1);
  const auto r = knn_retrieval(qry, gal, ks);
  for (std::size_t i = 1; i < r.hit_rates.size(); ++i) CHECK(r.hit_rates[i] >= r.hit_rates[i - 1]);

  std::normal_distribution<double> normal;
  MatrixD a(6, 6);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  const MatrixD rot = qr.householderQ();
  auto rg = gal, rq = qry;
  rg.rows = (gal.rows.cast<double>() * rot).cast<float>();
  rq.rows = (qry.rows.cast<double>() * rot).cast<float>();
  const std::vector<int> small{1, 5, 10};
  CHECK(knn_retrieval(rq, rg, small).hit_rates == knn_retrieval(qry, gal, small).hit_rates);
}

TEST_CASE("linear probe examples") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.05);
  MatrixF rows(60, 3);
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    const int c = i % 2;
    Eigen::Vector3d v(c == 0 ? 1.0 : -1.0, noise(rng), noise(rng));
    rows.row(i) = v.normalized().cast<float>().transpose();
    labels.push_back(c);
  }
  const auto sep = table(rows, labels);
  CHECK(linear_probe(sep, sep) == 1.0);

  // Zero epochs: all logits zero, class 0 predicted everywhere.
  auto three = random_table(rng, 90, 4, 3, 0);
  const auto acc0 = linear_probe(three, three, {0, 0.1});
  const double prior0 =
      static_cast<double>(std::count(three.labels.begin(), three.labels.end(), 0)) / 90.0;
  CHECK(acc0 == prior0);

  auto single = three;
  std::fill(single.labels.begin(), single.labels.end(), 2);
  CHECK_THROWS_AS(linear_probe(single, three), ParameterError);
  CHECK_THROWS_AS(linear_probe(three, three, {-1, 0.1}), ParameterError);
  CHECK_THROWS_AS(linear_probe(table(MatrixF(0, 4), {}), three), ParameterError);

  const double again = linear_probe(three, three);
  CHECK(again == linear_probe(three, three));
  CHECK(again >= 0.0);
  CHECK(again <= 1.0);
}

TEST_CASE("linear probe on random labels stays at chance") {
  std::mt19937_64 rng(5);
  const auto train = random_table(rng, 2000, 16, 10, 1);
  const auto test = random_table(rng, 2000, 16, 10, 2);
  const double acc = linear_probe(train, test);
  const double sigma = std::sqrt(0.1 * 0.9 / 2000.0);
  CHECK(std::abs(acc - 0.1) <= 4 * sigma);
}

TEST_CASE("video-level tables") {
  MatrixF rows(4, 2);
  rows << 1, 0, 0, 1, 1, 0, 1, 0;
  auto t = table(rows, {1, 1, 2, 2});
  const auto v = video_level_table(t);
  REQUIRE(v.size() == 2);
  CHECK(v.labels == std::vector<int>{1, 2});
  CHECK(std::abs(v.rows(0, 0) - std::sqrt(0.5f)) <= 1e-6f);
  CHECK(v.rows.row(1) == rows.row(2));
  CHECK(v.ids[1].frame == 0);
}

TEST_CASE("embedding a dataset") {
  GenerateOptions o;
  o.num_videos = 6;
  o.height = o.width = 8;
  o.seed = 77;
  const auto data = generate(o);
  TrainConfig cfg;
  cfg.encoder.input_height = cfg.encoder.input_width = 8;
  cfg.encoder.hidden_widths = {16};
  cfg.encoder.embedding_dim = 12;
  cfg.encoder.projection_dim = 5;
  cfg.batch_size = 2;
  const auto ckpt = make_checkpoint(cfg, init_state(cfg));

  const auto bb = embed_dataset(ckpt, data.videos, data.labels, EmbeddingSpace::kBackbone);
  const auto vh = embed_dataset(ckpt, data.videos, data.labels, EmbeddingSpace::kVideoHead);
  CHECK(bb.size() == 24);
  CHECK(bb.rows.cols() == 12);
  CHECK(vh.rows.cols() == 5);
  CHECK(bb.rows == embed_dataset(ckpt, data.videos, data.labels, EmbeddingSpace::kBackbone).rows);
  for (Eigen::Index r = 0; r < bb.rows.rows(); ++r) {
    CHECK(std::abs(bb.rows.row(r).norm() - 1.0f) <= 1e-6f);
  }
  CHECK(bb.ids[5].video == 1);
  CHECK(bb.ids[5].frame == 1);
  CHECK(bb.ids[5].source == 77);
  CHECK(bb.labels[5] == data.labels.labels[1]);

  o.height = o.width = 16;
  const auto big = generate(o);
  CHECK_THROWS_AS(embed_dataset(ckpt, big.videos, big.labels, EmbeddingSpace::kBackbone), ConfigError);
  CHECK(parse_embedding_space("cycle_head") == EmbeddingSpace::kCycleHead);
  CHECK_THROWS_AS(parse_embedding_space("head"), ParameterError);
}

TEST_CASE("report files") {
  EvalReport rep;
  rep.mode = "retrieve";
  rep.space = "backbone";
  rep.num_queries = 4;
  rep.retrieval = RetrievalResult{{1, 5}, {0.25, 0.75}, {1, 0, 2, 5}};
  const auto text = format_report(rep);
  CHECK(text.find("hit_rate@1 = 0.25\n") != std::string::npos);
  CHECK(text.find("hit_rate@5 = 0.75\n") != std::string::npos);
  CHECK(text.find("probe_top1") == std::string::npos);

  const auto path = std::filesystem::temp_directory_path() / "cyclecl_test_report.txt";
  write_report(rep, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == text);
  CHECK_THROWS_AS(write_report(rep, "/nonexistent_dir/r.txt"), IoError);
}
