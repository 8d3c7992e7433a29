#pragma once

// Contrastive objectives over unit-norm embeddings: intra-image and
// intra-video InfoNCE, the soft nearest neighbor forward step, the cycle-back
// classification loss, and their weighted combination.
//
// Keys, queue rows and neighbor sets enter as tape constants, so gradients
// reach only the query-side tensors.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cyclecl/tensor.hpp"

namespace cyclecl {

enum class BackwardNegatives {
  kRemainder,    // queue rows left over after sampling the neighbor set
  kNeighborSet,  // the neighbor set itself: denominator over {U, k_j}
};

struct LossConfig {
  double temperature = 0.07;
  double lambda = 0.1;
  bool include_self_view = false;
  BackwardNegatives backward_negatives = BackwardNegatives::kRemainder;
  std::optional<int> top_k;
  double intra_image_weight = 0.0;

  void validate() const {
    if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
    if (!(lambda >= 0.0)) throw ParameterError("lambda must be nonnegative");
    if (!(intra_image_weight >= 0.0)) throw ParameterError("intra_image_weight must be nonnegative");
    if (top_k && *top_k <= 0) throw ParameterError("top_k must be positive");
  }
};

inline constexpr double kUnitNormTolerance = 1e-4;

template <typename Derived>
void require_unit_rows(const Eigen::MatrixBase<Derived>& m, const char* what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = static_cast<double>(m.row(r).norm());
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      throw NumericError(std::string(what) + ": row " + std::to_string(r) + " has norm " +
                         std::to_string(norm) + ", expected unit rows");
    }
  }
}

namespace detail {

// -log softmax over [q.positive, q.negatives^T, extra] with the positive in
// column 0, averaged over rows.
template <typename Scalar>
Tensor<Scalar> info_nce(const Tensor<Scalar>& q, const Tensor<Scalar>& positive,
                        const Tensor<Scalar>& negatives, Scalar temperature,
                        const Tensor<Scalar>* extra_logits = nullptr) {
  if (positive.rows() != q.rows() || positive.cols() != q.cols()) {
    throw DimensionError("positive keys " + shape_string(positive.value()) +
                         " do not match queries " + shape_string(q.value()));
  }
  if (negatives.rows() > 0 && negatives.cols() != q.cols()) {
    throw DimensionError("negatives " + shape_string(negatives.value()) +
                         " do not match queries " + shape_string(q.value()));
  }
  std::vector<Tensor<Scalar>> parts{row_dot(q, positive)};
  if (negatives.rows() > 0) parts.push_back(matmul(q, transpose(negatives)));
  if (extra_logits != nullptr) parts.push_back(*extra_logits);
  auto logits = parts.size() == 1 ? parts[0] : concat_cols(std::span<const Tensor<Scalar>>(parts));
  const std::vector<int> targets(static_cast<std::size_t>(q.rows()), 0);
  return cross_entropy_from_logits(logits, targets, temperature);
}

}  // namespace detail

// Positive pair (q_i, k_i): two views of one image.
template <typename Scalar>
Tensor<Scalar> intra_image_loss(const Tensor<Scalar>& q, const Tensor<Scalar>& k_i,
                                const Tensor<Scalar>& negatives, const LossConfig& cfg) {
  require_unit_rows(q.value(), "intra_image_loss queries");
  require_unit_rows(k_i.value(), "intra_image_loss keys");
  require_unit_rows(negatives.value(), "intra_image_loss negatives");
  return detail::info_nce(q, k_i, negatives, static_cast<Scalar>(cfg.temperature));
}

// Same contract as intra_image_loss; k_j encodes a different frame of the
// query's video.
template <typename Scalar>
Tensor<Scalar> intra_video_loss(const Tensor<Scalar>& q, const Tensor<Scalar>& k_j,
                                const Tensor<Scalar>& negatives, const LossConfig& cfg) {
  require_unit_rows(q.value(), "intra_video_loss queries");
  require_unit_rows(k_j.value(), "intra_video_loss keys");
  require_unit_rows(negatives.value(), "intra_video_loss negatives");
  return detail::info_nce(q, k_j, negatives, static_cast<Scalar>(cfg.temperature));
}

template <typename Scalar>
struct SoftNeighborResult {
  Tensor<Scalar> q_hat;  // n x d, convex combinations of neighbor rows
  Tensor<Scalar> alpha;  // n x |U|, rows sum to one
};

using KeepMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Additive softmax mask from a keep pattern: 0 where kept, -inf elsewhere.
template <typename Scalar>
Matrix<Scalar> keep_mask_to_additive(const KeepMask& keep) {
  return keep.select(Matrix<Scalar>::Zero(keep.rows(), keep.cols()).array(),
                     -std::numeric_limits<Scalar>::infinity())
      .matrix();
}

// Forward step: alpha = softmax(q U^T / tau), q_hat = alpha U. An optional
// keep mask (n x |U|) restricts each row's neighbor set; every row must keep
// at least one neighbor.
template <typename Scalar>
SoftNeighborResult<Scalar> soft_nearest_neighbor(const Tensor<Scalar>& q_cycle,
                                                 const Tensor<Scalar>& neighbors,
                                                 const LossConfig& cfg,
                                                 const KeepMask* keep = nullptr) {
  if (neighbors.rows() < 1) throw ParameterError("soft_nearest_neighbor: empty neighbor set");
  if (neighbors.cols() != q_cycle.cols()) {
    throw DimensionError("soft_nearest_neighbor: neighbors " + shape_string(neighbors.value()) +
                         " vs queries " + shape_string(q_cycle.value()));
  }
  require_unit_rows(q_cycle.value(), "soft_nearest_neighbor queries");
  require_unit_rows(neighbors.value(), "soft_nearest_neighbor neighbors");
  auto sims = matmul(q_cycle, transpose(neighbors));
  if (keep != nullptr) {
    if (keep->rows() != sims.rows() || keep->cols() != sims.cols()) {
      throw DimensionError("soft_nearest_neighbor: keep mask does not match " +
                           shape_string(sims.value()));
    }
    for (Eigen::Index r = 0; r < keep->rows(); ++r) {
      if (!keep->row(r).any()) {
        throw ParameterError("soft_nearest_neighbor: row " + std::to_string(r) +
                             " keeps no neighbors");
      }
    }
    sims = add_constant(sims, keep_mask_to_additive<Scalar>(*keep));
  }
  auto alpha = softmax_rows(sims, static_cast<Scalar>(cfg.temperature));
  auto q_hat = matmul(alpha, neighbors);
  return {q_hat, alpha};
}

// Backward step: classify normalized q_hat against k_j among the negatives.
// q_hat is renormalized first.
template <typename Scalar>
Tensor<Scalar> cycle_loss(const Tensor<Scalar>& q_hat, const Tensor<Scalar>& k_j,
                          const Tensor<Scalar>& negatives, const LossConfig& cfg) {
  require_unit_rows(k_j.value(), "cycle_loss keys");
  require_unit_rows(negatives.value(), "cycle_loss negatives");
  auto q = l2_normalize(q_hat);
  return detail::info_nce(q, k_j, negatives, static_cast<Scalar>(cfg.temperature));
}

// Cycle loss where part of the neighbor set was dropped per row (top-K
// filtering): for row r, neighbor u joins the negatives iff discard(r, u).
template <typename Scalar>
Tensor<Scalar> cycle_loss(const Tensor<Scalar>& q_hat, const Tensor<Scalar>& k_j,
                          const Tensor<Scalar>& negatives, const Tensor<Scalar>& neighbors,
                          const KeepMask& discard, const LossConfig& cfg) {
  require_unit_rows(k_j.value(), "cycle_loss keys");
  require_unit_rows(negatives.value(), "cycle_loss negatives");
  auto q = l2_normalize(q_hat);
  auto sims = matmul(q, transpose(neighbors));
  if (discard.rows() != sims.rows() || discard.cols() != sims.cols()) {
    throw DimensionError("cycle_loss: discard mask does not match " + shape_string(sims.value()));
  }
  auto extra = add_constant(sims, keep_mask_to_additive<Scalar>(discard));
  return detail::info_nce(q, k_j, negatives, static_cast<Scalar>(cfg.temperature), &extra);
}

template <typename Scalar>
struct LossParts {
  std::optional<Tensor<Scalar>> intra_video;
  std::optional<Tensor<Scalar>> cycle;  // absent during queue warmup
  std::optional<Tensor<Scalar>> intra_image;
};

// L = L_intra-video + lambda L_cycle + w L_intra-image. Terms that are absent
// or carry a zero weight are left out of the graph entirely.
template <typename Scalar>
Tensor<Scalar> combined_loss(const LossParts<Scalar>& parts, const LossConfig& cfg) {
  std::optional<Tensor<Scalar>> total = parts.intra_video;
  auto add_term = [&](const std::optional<Tensor<Scalar>>& term, double weight) {
    if (!term || weight == 0.0) return;
    auto weighted = weight == 1.0 ? *term : scale(*term, static_cast<Scalar>(weight));
    total = total ? add(*total, weighted) : weighted;
  };
  add_term(parts.cycle, cfg.lambda);
  add_term(parts.intra_image, cfg.intra_image_weight);
  if (!total) throw ParameterError("combined_loss: no loss terms present");
  return *total;
}

template <typename Scalar>
struct DegeneracyValues {
  Scalar cycle;
  Scalar intra_video;
};

// With the neighbor set reduced to a second view k_pp of the query, alpha is
// identically one, q_hat = k_pp, and the cycle loss collapses to the
// intra-video loss evaluated at k_pp.
template <typename Scalar>
DegeneracyValues<Scalar> degeneracy_probe(const Matrix<Scalar>& q, const Matrix<Scalar>& k_pp,
                                          const Matrix<Scalar>& k_j,
                                          const Matrix<Scalar>& negatives,
                                          const LossConfig& cfg) {
  if (q.rows() != k_pp.rows()) throw DimensionError("degeneracy_probe: q and k_pp rows differ");
  Tape<Scalar> tape;
  auto kj = tape.constant(k_j);
  auto neg = tape.constant(negatives);
  Scalar cycle_total = 0;
  // Each row has its own one-element neighbor set {k_pp[r]}.
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    auto q_row = tape.constant(q.row(r));
    auto u = tape.constant(k_pp.row(r));
    auto snn = soft_nearest_neighbor(q_row, u, cfg);
    auto kj_row = tape.constant(k_j.row(r));
    cycle_total += cycle_loss(snn.q_hat, kj_row, neg, cfg).item();
  }
  auto kpp = tape.constant(k_pp);
  const Scalar intra = intra_video_loss(kpp, kj, neg, cfg).item();
  return {q.rows() > 0 ? cycle_total / Scalar(q.rows()) : Scalar(0), intra};
}

}  // namespace cyclecl
