#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <type_traits>
#include <vector>

#include "cyclecl/tensor.hpp"

namespace cyclecl {

using ExtendedScalar = long double;

// Scalar-valued function of leaf tensors, rebuilt on a fresh tape for every
// evaluation. The analytic gradient is always taken at 64 bits.
using GradcheckFn =
    std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>;

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  Eigen::Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

namespace detail {

template <typename Scalar, typename F>
Scalar evaluate(const F& f, const std::vector<Matrix<Scalar>>& inputs) {
  Tape<Scalar> tape;
  std::vector<Tensor<Scalar>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in, false));
  const Scalar v = f(tape, leaves).item();
  if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite function value");
  return v;
}

template <typename F, typename Scalar>
inline constexpr bool kInvocableOn =
    std::is_invocable_v<const F&, Tape<Scalar>&, const std::vector<Tensor<Scalar>>&>;

}  // namespace detail

// Compares the reverse-mode gradient of f against central differences with
// one Richardson step, (4 D(h) - D(2h)) / 3. When f is generic over the tape
// scalar, the differences are taken in extended precision, which keeps their
// round-off far below gradients of order 1e-8. Per component the error is
// |a - n| / (max(|a|, |n|) + 1e-8); the worst one is reported.
template <typename F>
GradcheckReport gradcheck_report(const F& f, const std::vector<MatrixD>& inputs,
                                 double step = 1e-4) {
  if (!(step > 0.0)) throw ParameterError("gradcheck: step must be positive");
  using Numeric =
      std::conditional_t<detail::kInvocableOn<F, ExtendedScalar>, ExtendedScalar, double>;

  std::vector<MatrixD> analytic;
  {
    Tape<double> tape;
    std::vector<Tensor<double>> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in, true));
    auto out = f(tape, leaves);
    if (!std::isfinite(out.item())) throw NumericError("gradcheck: non-finite function value");
    tape.backward(out);
    for (const auto& l : leaves) analytic.push_back(l.grad());
  }

  std::vector<Matrix<Numeric>> x;
  for (const auto& in : inputs) x.push_back(in.template cast<Numeric>());
  GradcheckReport report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!analytic[i].allFinite()) throw NumericError("gradcheck: non-finite analytic gradient");
    for (Eigen::Index k = 0; k < x[i].size(); ++k) {
      Numeric& xi = x[i].data()[k];
      const Numeric x0 = xi;
      auto diff = [&](Numeric h) {
        xi = x0 + h;
        const Numeric fp = detail::evaluate<Numeric>(f, x);
        xi = x0 - h;
        const Numeric fm = detail::evaluate<Numeric>(f, x);
        xi = x0;
        return (fp - fm) / (2 * h);
      };
      const Numeric h = step;
      const double numeric = static_cast<double>((4 * diff(h) - diff(2 * h)) / 3);
      const double a = analytic[i].data()[k];
      const double err = std::abs(a - numeric) / (std::max(std::abs(a), std::abs(numeric)) + 1e-8);
      if (err > report.max_relative_error) {
        report = GradcheckReport{err, i, k, a, numeric};
      }
    }
  }
  return report;
}

template <typename F>
double gradcheck(const F& f, const std::vector<MatrixD>& inputs, double step = 1e-4) {
  return gradcheck_report(f, inputs, step).max_relative_error;
}

}  // namespace cyclecl
