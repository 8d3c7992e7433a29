#include "cyclecl/gradient_suite.hpp"

#include <algorithm>
#include <random>

#include "cyclecl/losses.hpp"
#include "cyclecl/seeding.hpp"

namespace cyclecl {

namespace {

MatrixD gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// A keep mask with at least one kept entry per row.
KeepMask random_keep(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::bernoulli_distribution coin(0.6);
  KeepMask keep(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) keep(r, c) = coin(rng);
    keep(r, uniform_int(rng, 0, static_cast<int>(cols) - 1)) = true;
  }
  return keep;
}

}  // namespace

std::vector<std::pair<std::string, double>> GradientSuiteResult::worst_by_loss() const {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& c : cases) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == c.loss; });
    if (it == out.end()) out.emplace_back(c.loss, c.report.max_relative_error);
    else it->second = std::max(it->second, c.report.max_relative_error);
  }
  return out;
}

double GradientSuiteResult::worst() const {
  double w = 0.0;
  for (const auto& c : cases) w = std::max(w, c.report.max_relative_error);
  return w;
}

GradientSuiteResult run_gradient_suite(std::uint64_t base_seed, int trials, double step) {
  if (trials < 1) throw ParameterError("gradient suite needs at least one trial");
  GradientSuiteResult result;
  LossConfig cfg;
  for (int t = 0; t < trials; ++t) {
    const auto seed = derive_seed(base_seed, {static_cast<std::uint64_t>(t)});
    std::mt19937_64 rng(seed);
    const int n = uniform_int(rng, 1, 8);
    const int d = uniform_int(rng, 2, 16);
    const int m = uniform_int(rng, 1, 32);
    const int r = uniform_int(rng, 1, 32);

    for (const char* name : {"intra_image", "intra_video"}) {
      const bool image = std::string(name) == "intra_image";
      auto f = [&, image](auto&, const auto& x) {
        auto q = l2_normalize(x[0]);
        auto k = l2_normalize(x[1]);
        auto neg = l2_normalize(x[2]);
        return image ? intra_image_loss(q, k, neg, cfg) : intra_video_loss(q, k, neg, cfg);
      };
      result.cases.push_back(
          {name, seed,
           gradcheck_report(f, {gaussian(rng, n, d), gaussian(rng, n, d), gaussian(rng, r, d)},
                            step)});
    }

    // Odd trials exercise the per-row keep/discard masks.
    const bool masked = t % 2 == 1;
    const KeepMask keep = random_keep(rng, n, m);
    const KeepMask discard = !keep;
    auto cycle_term = [&, masked](const auto& qc, const auto& u, const auto& kj,
                                  const auto& rem) {
      if (!masked) {
        auto snn = soft_nearest_neighbor(qc, u, cfg);
        return cycle_loss(snn.q_hat, kj, rem, cfg);
      }
      auto snn = soft_nearest_neighbor(qc, u, cfg, &keep);
      return cycle_loss(snn.q_hat, kj, rem, u, discard, cfg);
    };

    {
      auto f = [&](auto&, const auto& x) {
        return cycle_term(l2_normalize(x[0]), l2_normalize(x[1]), l2_normalize(x[2]),
                          l2_normalize(x[3]));
      };
      result.cases.push_back(
          {"cycle", seed,
           gradcheck_report(f,
                            {gaussian(rng, n, d), gaussian(rng, m, d), gaussian(rng, n, d),
                             gaussian(rng, r, d)},
                            step)});
    }
    {
      LossConfig ccfg = cfg;
      ccfg.intra_image_weight = 0.5;
      auto f = [&, ccfg](auto&, const auto& x) {
        using Scalar = typename std::decay_t<decltype(x[0])>::scalar_type;
        LossParts<Scalar> parts;
        auto neg = l2_normalize(x[2]);
        parts.intra_video = intra_video_loss(l2_normalize(x[0]), l2_normalize(x[1]), neg, ccfg);
        parts.cycle = cycle_term(l2_normalize(x[3]), l2_normalize(x[4]), l2_normalize(x[5]),
                                 l2_normalize(x[6]));
        parts.intra_image = intra_image_loss(l2_normalize(x[0]), l2_normalize(x[7]), neg, ccfg);
        return combined_loss(parts, ccfg);
      };
      result.cases.push_back(
          {"combined", seed,
           gradcheck_report(f,
                            {gaussian(rng, n, d), gaussian(rng, n, d), gaussian(rng, r, d),
                             gaussian(rng, n, d), gaussian(rng, m, d), gaussian(rng, n, d),
                             gaussian(rng, r, d), gaussian(rng, n, d)},
                            step)});
    }
  }
  return result;
}

}  // namespace cyclecl
