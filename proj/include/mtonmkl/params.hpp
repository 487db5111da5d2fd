#pragma once

// Kernel-weight vector theta = [mu; lambda] and the neighborhood matrices.
//
// Layout of every (M + M*T)-vector in this library (theta, b, d, q, u):
//   [ mu^1 .. mu^M,  lambda_1^1 .. lambda_T^1,  lambda_1^2 .. lambda_T^2, ... ]
// i.e. the lambda region is grouped by base kernel, then by task.

#include <cstddef>
#include <optional>
#include <vector>

#include "mtonmkl/error.hpp"
#include "mtonmkl/linalg.hpp"

namespace mtonmkl {

struct ThetaLayout {
  std::size_t bases = 0;  // M
  std::size_t tasks = 0;  // T

  Eigen::Index size() const { return static_cast<Eigen::Index>(bases + bases * tasks); }
  Eigen::Index mu(std::size_t m) const { return static_cast<Eigen::Index>(m); }
  Eigen::Index lambda(std::size_t t, std::size_t m) const { return static_cast<Eigen::Index>(bases + m * tasks + t); }

  /// [B 1_T ; vec(B')] for an M x T matrix B.
  Vector stack(const Matrix& per_task) const {
    detail::require_dims(per_task.rows() == static_cast<Eigen::Index>(bases) &&
                             per_task.cols() == static_cast<Eigen::Index>(tasks),
                         "ThetaLayout::stack: expected an M x T matrix");
    Vector out(size());
    out.head(static_cast<Eigen::Index>(bases)) = per_task.rowwise().sum();
    for (std::size_t m = 0; m < bases; ++m)
      for (std::size_t t = 0; t < tasks; ++t)
        out[lambda(t, m)] = per_task(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t));
    return out;
  }

  /// Per-task combined coefficients: out(m, t) = v_mu^m + v_lambda,t^m.
  Matrix per_task(const Vector& v) const {
    detail::require_dims(v.size() == size(), "ThetaLayout::per_task: wrong vector length");
    Matrix out(static_cast<Eigen::Index>(bases), static_cast<Eigen::Index>(tasks));
    for (std::size_t m = 0; m < bases; ++m)
      for (std::size_t t = 0; t < tasks; ++t)
        out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) = v[mu(m)] + v[lambda(t, m)];
    return out;
  }

  /// The null direction e_mu^m - sum_t e_lambda,t^m; A, b, d, q all annihilate it.
  Vector null_direction(std::size_t m) const {
    Vector v = Vector::Zero(size());
    v[mu(m)] = 1.0;
    for (std::size_t t = 0; t < tasks; ++t) v[lambda(t, m)] = -1.0;
    return v;
  }
};

/// Shared weights mu and task-specific weights lambda_t, stored concatenated.
struct ThetaParams {
  ThetaLayout layout;
  Vector theta;

  ThetaParams() = default;
  ThetaParams(ThetaLayout l, Vector v) : layout(l), theta(std::move(v)) {
    detail::require_dims(theta.size() == layout.size(), "ThetaParams: vector length does not match layout");
  }

  /// mu = 1/M, lambda = 0.
  static ThetaParams uniform(ThetaLayout l) {
    Vector v = Vector::Zero(l.size());
    v.head(static_cast<Eigen::Index>(l.bases)).setConstant(1.0 / static_cast<double>(l.bases));
    return {l, std::move(v)};
  }

  Vector mu() const { return theta.head(static_cast<Eigen::Index>(layout.bases)); }

  Vector lambda(std::size_t t) const {
    Vector out(static_cast<Eigen::Index>(layout.bases));
    for (std::size_t m = 0; m < layout.bases; ++m) out[static_cast<Eigen::Index>(m)] = theta[layout.lambda(t, m)];
    return out;
  }

  /// theta_t = mu + lambda_t.
  Vector task_weights(std::size_t t) const { return mu() + lambda(t); }

  bool feasible() const { return theta.allFinite() && (theta.array() >= 0.0).all(); }
};

/// The T neighborhood-defining matrices. Not required to be PSD. When the
/// set comes from the closed-form update it also carries coefficients c
/// (M x T) with K_hat_t = sum_m c(m, t) K_t^m.
struct NeighborhoodSet {
  std::vector<Matrix> matrices;
  std::optional<Matrix> coefficients;

  std::size_t tasks() const { return matrices.size(); }
};

}  // namespace mtonmkl
