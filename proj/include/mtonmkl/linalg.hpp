#pragma once

// Dense linear-algebra substrate. Matrices and vectors are Eigen types; this
// header adds the ridge-regularized SPD factorization that stands in for every
// inverse of the (always rank-deficient) structure matrix A.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mtonmkl/error.hpp"

namespace mtonmkl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Ridge selection: eps = max(absolute, relative * trace(A) / dim).
struct RidgeOptions {
  double absolute = 1e-10;
  double relative = 1e-8;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline double ridge_for(const Matrix& a, const RidgeOptions& opts = {}) {
  const auto dim = static_cast<double>(std::max<Eigen::Index>(a.rows(), 1));
  return std::max(opts.absolute, opts.relative * a.trace() / dim);
}

/// Cholesky factorization of (A + ridge*I) for symmetric A.
///
/// Construction fails with NumericError when the shifted matrix is not
/// numerically positive definite; a pivot below dim * machine-epsilon times
/// the largest diagonal entry counts as a failure, so an exactly singular A
/// with ridge 0 is rejected rather than factored through round-off.
class SpdFactorization {
 public:
  SpdFactorization() = default;

  SpdFactorization(const Matrix& a, double ridge) : ridge_(ridge) {
    detail::require_dims(a.rows() == a.cols(), "SpdFactorization: matrix is not square");
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw DomainError("SpdFactorization: ridge must be finite and >= 0");
    if (!a.allFinite()) throw DomainError("SpdFactorization: non-finite matrix entry");
    shifted_ = a;
    shifted_.diagonal().array() += ridge;
    llt_.compute(shifted_);
    if (llt_.info() != Eigen::Success) {
      throw NumericError("SpdFactorization: matrix plus ridge " + std::to_string(ridge) + " is not positive definite");
    }
    const Eigen::Index n = a.rows();
    if (n > 0) {
      const double max_diag = shifted_.diagonal().cwiseAbs().maxCoeff();
      const Vector pivots = llt_.matrixLLT().diagonal();
      const double min_pivot_sq = pivots.cwiseAbs2().minCoeff();
      const double floor = static_cast<double>(n) * 4.0 * std::numeric_limits<double>::epsilon() * max_diag;
      if (!(min_pivot_sq > floor)) {
        throw NumericError("SpdFactorization: matrix plus ridge " + std::to_string(ridge) + " is numerically singular");
      }
    }
  }

  /// Factor A + eps*I with eps chosen by ridge_for.
  static SpdFactorization with_default_ridge(const Matrix& a, const RidgeOptions& opts = {}) {
    return SpdFactorization(a, ridge_for(a, opts));
  }

  Eigen::Index dimension() const { return shifted_.rows(); }
  double ridge() const { return ridge_; }

  /// Shifted matrix A + ridge*I.
  const Matrix& shifted() const { return shifted_; }

  Vector solve(const Vector& rhs) const {
    detail::require_dims(rhs.size() == dimension(), "solve_spd: rhs length " + std::to_string(rhs.size()) +
                                                        " != dimension " + std::to_string(dimension()));
    if (!rhs.allFinite()) throw DomainError("solve_spd: non-finite rhs");
    Vector x = llt_.solve(rhs);
    // One step of iterative refinement keeps the residual near machine precision
    // for the badly scaled matrices produced by small ridges.
    const Vector r = rhs - shifted_ * x;
    x += llt_.solve(r);
    return x;
  }

  Matrix solve(const Matrix& rhs) const {
    detail::require_dims(rhs.rows() == dimension(), "solve_spd: rhs rows mismatch");
    if (!rhs.allFinite()) throw DomainError("solve_spd: non-finite rhs");
    Matrix x = llt_.solve(rhs);
    const Matrix r = rhs - shifted_ * x;
    x += llt_.solve(r);
    return x;
  }

 private:
  double ridge_ = 0.0;
  Matrix shifted_;
  Eigen::LLT<Matrix> llt_;
};

inline Vector solve_spd(const SpdFactorization& fact, const Vector& rhs) { return fact.solve(rhs); }

/// x' M y.
inline double quadratic_form(const Matrix& m, const Vector& x, const Vector& y) {
  detail::require_dims(m.rows() == x.size() && m.cols() == y.size(),
                       "quadratic_form: " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                           " matrix vs vectors of length " + std::to_string(x.size()) + ", " +
                           std::to_string(y.size()));
  return x.dot(m * y);
}

/// Frobenius inner product <A, B>_F.
inline double frobenius_dot(const Matrix& a, const Matrix& b) {
  detail::require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "frobenius_dot: shape mismatch");
  return (a.array() * b.array()).sum();
}

inline double symmetry_defect(const Matrix& m) { return (m - m.transpose()).cwiseAbs().maxCoeff(); }

}  // namespace mtonmkl
