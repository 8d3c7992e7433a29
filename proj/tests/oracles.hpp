#pragma once

// Direct scalar-loop formulas in 64-bit, written independently of the tape
// library. Matrices are passed as nested vectors.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cyclecl/tensor.hpp"

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const cyclecl::MatrixD& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> unit(std::vector<double> v) {
  const double n = std::sqrt(dot(v, v));
  for (auto& x : v) x /= n;
  return v;
}

inline double log_sum_exp(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0;
  for (double x : z) s += std::exp(x - m);
  return m + std::log(s);
}

// Mean over rows of -log( e^{q.pos/t} / (e^{q.pos/t} + sum_neg e^{q.n/t}) ).
inline double info_nce(const Rows& q, const Rows& pos, const Rows& neg, double t) {
  double total = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> z{dot(q[i], pos[i]) / t};
    for (const auto& n : neg) z.push_back(dot(q[i], n) / t);
    total += log_sum_exp(z) - z[0];
  }
  return total / static_cast<double>(q.size());
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  const double l = log_sum_exp(z);
  std::vector<double> p;
  for (double x : z) p.push_back(std::exp(x - l));
  return p;
}

// alpha rows and q_hat rows of the soft nearest neighbor.
inline std::pair<Rows, Rows> soft_nn(const Rows& q, const Rows& u, double t) {
  Rows alpha, qhat;
  for (const auto& qi : q) {
    std::vector<double> z;
    for (const auto& uj : u) z.push_back(dot(qi, uj) / t);
    auto a = softmax(z);
    std::vector<double> h(qi.size(), 0.0);
    for (std::size_t j = 0; j < u.size(); ++j)
      for (std::size_t k = 0; k < h.size(); ++k) h[k] += a[j] * u[j][k];
    alpha.push_back(a);
    qhat.push_back(h);
  }
  return {alpha, qhat};
}

inline double cycle(const Rows& q, const Rows& u, const Rows& kj, const Rows& neg, double t) {
  auto [alpha, qhat] = soft_nn(q, u, t);
  for (auto& h : qhat) h = unit(h);
  return info_nce(qhat, kj, neg, t);
}

inline cyclecl::MatrixD random_unit_rows(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d) {
  std::normal_distribution<double> g;
  cyclecl::MatrixD m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < n; ++i) m.row(i).normalize();
  return m;
}

}  // namespace oracle
