#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>
#include <set>

#include "cyclecl/memory_queue.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cyclecl;

namespace {

MatrixF unit_rows(std::mt19937_64& rng, int n, int d) {
  return oracle::random_unit_rows(rng, n, d).cast<float>();
}

// Unit rows at the given angles.
MatrixF tagged(std::initializer_list<float> tags) {
  MatrixF m = MatrixF::Zero(static_cast<Eigen::Index>(tags.size()), 2);
  Eigen::Index r = 0;
  for (float t : tags) {
    m(r, 0) = std::cos(t);
    m(r, 1) = std::sin(t);
    ++r;
  }
  return m;
}

struct Entry {
  MatrixF row;
  VideoId vid;
};

}  // namespace

TEST_CASE("FIFO example with K = 4") {
  MemoryQueue q(4, 2);
  std::vector<VideoId> ab{1, 2}, cd{3, 4}, ef{5, 6};
  q.enqueue_dequeue(tagged({0.1f, 0.2f}), ab);
  q.enqueue_dequeue(tagged({0.3f, 0.4f}), cd);
  q.enqueue_dequeue(tagged({0.5f, 0.6f}), ef);
  CHECK(q.fill() == 4);
  CHECK(q.write_ptr() == 2);
  const auto order = q.slots_oldest_first();
  std::vector<VideoId> vids;
  for (int s : order) vids.push_back(q.video_ids()[static_cast<std::size_t>(s)]);
  CHECK(vids == std::vector<VideoId>{3, 4, 5, 6});
  CHECK(q.buffer().row(order[0]) == tagged({0.3f}).row(0));
}

TEST_CASE("enqueue of zero rows is the identity") {
  std::mt19937_64 rng(1);
  MemoryQueue q(5, 3);
  std::vector<VideoId> ids{7, 8};
  q.enqueue_dequeue(unit_rows(rng, 2, 3), ids);
  const MemoryQueue before = q;
  q.enqueue_dequeue(MatrixF(0, 3), std::span<const VideoId>{});
  CHECK(q == before);
}

TEST_CASE("enqueue errors") {
  std::mt19937_64 rng(2);
  MemoryQueue q(3, 2);
  std::vector<VideoId> four{1, 2, 3, 4}, one{1};
  CHECK_THROWS_AS(q.enqueue_dequeue(unit_rows(rng, 4, 2), four), ParameterError);
  CHECK_THROWS_AS(q.enqueue_dequeue(unit_rows(rng, 2, 2), one), DimensionError);
  CHECK_THROWS_AS(q.enqueue_dequeue(MatrixF::Constant(1, 2, 1.0f), one), NumericError);
  CHECK_THROWS_AS(MemoryQueue(0, 2), ParameterError);
}

TEST_CASE("1000 random operations against a reference ring buffer") {
  std::mt19937_64 rng(3);
  const int capacity = 37, dim = 4;
  MemoryQueue q(capacity, dim);
  std::deque<Entry> ref;
  VideoId next_vid = 0;
  for (int op = 0; op < 1000; ++op) {
    const int n = static_cast<int>(rng() % 12);
    const MatrixF keys = unit_rows(rng, n, dim);
    std::vector<VideoId> vids;
    for (int i = 0; i < n; ++i) vids.push_back(next_vid++);
    q.enqueue_dequeue(keys, vids);
    for (int i = 0; i < n; ++i) {
      ref.push_back({keys.row(i), vids[static_cast<std::size_t>(i)]});
      if (static_cast<int>(ref.size()) > capacity) ref.pop_front();
    }

    REQUIRE(q.fill() == static_cast<int>(ref.size()));
    REQUIRE(q.write_ptr() >= 0);
    REQUIRE(q.write_ptr() < capacity);
    const auto order = q.slots_oldest_first();
    REQUIRE(order.size() == ref.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      REQUIRE(q.buffer().row(order[i]) == ref[i].row);
      REQUIRE(q.video_ids()[static_cast<std::size_t>(order[i])] == ref[i].vid);
      REQUIRE(std::abs(q.buffer().row(order[i]).norm() - 1.0f) <= 1e-6f);
    }
  }
}

TEST_CASE("from_state validates the ring") {
  CHECK_NOTHROW(MemoryQueue::from_state(4, 2, 2, 2, MatrixF::Zero(4, 2), std::vector<VideoId>(4, -1)));
  CHECK_THROWS_AS(MemoryQueue::from_state(4, 2, 1, 2, MatrixF::Zero(4, 2), std::vector<VideoId>(4, -1)),
                  ParameterError);
  CHECK_THROWS_AS(MemoryQueue::from_state(4, 2, 4, 4, MatrixF::Zero(4, 2), std::vector<VideoId>(4, -1)),
                  ParameterError);
  CHECK_THROWS_AS(MemoryQueue::from_state(4, 2, 0, 4, MatrixF::Zero(3, 2), std::vector<VideoId>(4, -1)),
                  ParameterError);
}

TEST_CASE("neighbor split: counting, exclusion, partition") {
  std::mt19937_64 rng(4);
  MemoryQueue q(40, 3);
  std::vector<VideoId> vids;
  for (int i = 0; i < 30; ++i) vids.push_back(i % 10);
  q.enqueue_dequeue(unit_rows(rng, 30, 3), vids);

  std::vector<VideoId> none;
  auto all = sample_neighbor_split(q, 29, none, 1);
  REQUIRE(all);
  CHECK(all->remainder.rows() == 1);
  CHECK(all->masked == 0);
  CHECK_FALSE(sample_neighbor_split(q, 30, none, 1));

  std::vector<VideoId> batch{3, 7};
  auto split = sample_neighbor_split(q, 10, batch, 2);
  REQUIRE(split);
  CHECK(split->masked == 6);
  CHECK(split->neighbors.rows() == 10);
  CHECK(split->remainder.rows() == 14);
  std::set<int> u(split->neighbor_slots.begin(), split->neighbor_slots.end());
  std::set<int> rest(split->remainder_slots.begin(), split->remainder_slots.end());
  std::vector<int> both;
  std::set_intersection(u.begin(), u.end(), rest.begin(), rest.end(), std::back_inserter(both));
  CHECK(both.empty());
  std::set<int> uni = u;
  uni.insert(rest.begin(), rest.end());
  const auto unmasked = q.unmasked_slots(batch);
  CHECK(uni == std::set<int>(unmasked.begin(), unmasked.end()));
  for (int s : uni) {
    const auto v = q.video_ids()[static_cast<std::size_t>(s)];
    CHECK(v != 3);
    CHECK(v != 7);
  }
  for (std::size_t i = 0; i < split->neighbor_slots.size(); ++i) {
    CHECK(split->neighbors.row(static_cast<Eigen::Index>(i)) ==
          q.buffer().row(split->neighbor_slots[i]));
  }
  CHECK_THROWS_AS(sample_neighbor_split(q, 0, batch, 2), ParameterError);

  auto again = sample_neighbor_split(q, 10, batch, 2);
  CHECK(again->neighbor_slots == split->neighbor_slots);
}

TEST_CASE("neighbor sampling is uniform over unmasked slots") {
  std::mt19937_64 rng(5);
  MemoryQueue q(120, 2);
  std::vector<VideoId> vids(100);
  std::iota(vids.begin(), vids.end(), 0);
  q.enqueue_dequeue(unit_rows(rng, 100, 2), vids);
  std::vector<int> count(100, 0);
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    const auto s = sample_neighbor_split(q, 10, std::span<const VideoId>{}, 1000 + t);
    for (int slot : s->neighbor_slots) ++count[static_cast<std::size_t>(slot)];
  }
  const double p = 0.1;
  const double sigma = std::sqrt(trials * p * (1 - p));
  int worst = 0;
  for (int c : count) worst = std::max(worst, static_cast<int>(std::abs(c - trials * p)));
  CHECK(worst <= 4 * sigma);
}

TEST_CASE("top-K examples") {
  NeighborSplit split;
  split.neighbors.resize(2, 2);
  split.neighbors << 0, 1, 1, 0;
  split.neighbor_slots = {0, 1};
  MatrixF query(1, 2);
  query << 1, 0;

  const auto one = top_k_filter(query, split, 1);
  CHECK_FALSE(one.keep(0, 0));
  CHECK(one.keep(0, 1));
  CHECK(top_k_filter(query, split, 2).keep.all());
  CHECK_THROWS_AS(top_k_filter(query, split, 3), ParameterError);
  CHECK_THROWS_AS(top_k_filter(query, split, 0), ParameterError);
}

TEST_CASE("top-K agrees with a full sort") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 25; ++trial) {
    MemoryQueue q(200, 8);
    std::vector<VideoId> vids(150);
    std::iota(vids.begin(), vids.end(), 0);
    q.enqueue_dequeue(unit_rows(rng, 150, 8), vids);
    const auto split = sample_neighbor_split(q, 60, std::span<const VideoId>{}, trial);
    const MatrixF queries = unit_rows(rng, 5, 8);
    const int k = 1 + static_cast<int>(rng() % 60);
    const auto sel = top_k_filter(queries, *split, k);
    for (Eigen::Index r = 0; r < queries.rows(); ++r) {
      std::vector<std::pair<double, int>> scored;
      for (Eigen::Index j = 0; j < split->neighbors.rows(); ++j) {
        double s = 0;
        for (Eigen::Index c = 0; c < 8; ++c) {
          s += static_cast<double>(queries(r, c) * split->neighbors(j, c));
        }
        scored.emplace_back(-s, static_cast<int>(j));
      }
      std::sort(scored.begin(), scored.end());
      std::set<int> expected;
      for (int i = 0; i < k; ++i) expected.insert(scored[static_cast<std::size_t>(i)].second);
      std::set<int> got;
      for (Eigen::Index j = 0; j < sel.keep.cols(); ++j) {
        if (sel.keep(r, j)) got.insert(static_cast<int>(j));
      }
      CHECK(got == expected);
    }
  }
}
