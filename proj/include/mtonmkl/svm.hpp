#pragma once

// Per-task dual solvers on a fixed combined kernel: soft-margin SVC and
// epsilon-SVR, both through one SMO core with maximal-violating-pair
// working-set selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mtonmkl/data.hpp"
#include "mtonmkl/error.hpp"
#include "mtonmkl/linalg.hpp"

namespace mtonmkl {

struct SvmOptions {
  double tol = 1e-3;                 // max KKT violation (m - M gap) at exit
  std::int64_t max_iterations = -1;  // -1: max(10^6, 100 * variables)
};

struct SvmSolution {
  TaskKind kind = TaskKind::classification;
  Vector alpha;       // n
  Vector alpha_star;  // n for regression, empty for classification
  Vector expansion;   // Y alpha (classification) or alpha - alpha* (regression)
  double bias = 0.0;
  double objective = 0.0;  // dual objective (maximization form)
  double kkt_violation = 0.0;
  std::int64_t iterations = 0;

  Eigen::Index size() const { return expansion.size(); }
};

namespace detail {

// min 1/2 z'Qz + p'z  s.t.  s'z = const, 0 <= z <= C, with
// Q(i, j) = s_i s_j K(r_i, r_j) and r_i = i mod n.
class SmoCore {
 public:
  SmoCore(const Matrix& k, Vector signs, Vector linear, double c)
      : k_(k), n_(k.rows()), s_(std::move(signs)), p_(std::move(linear)), c_(c) {}

  Eigen::Index vars() const { return s_.size(); }

  double q(Eigen::Index i, Eigen::Index j) const { return s_[i] * s_[j] * k_(i % n_, j % n_); }

  void run(Vector& z, const SvmOptions& opts, double& gap, std::int64_t& iterations, double& bias) {
    const Eigen::Index l = vars();
    Vector g = p_;
    for (Eigen::Index j = 0; j < l; ++j) {
      if (z[j] != 0.0)
        for (Eigen::Index i = 0; i < l; ++i) g[i] += q(i, j) * z[j];
    }
    const std::int64_t cap =
        opts.max_iterations > 0 ? opts.max_iterations : std::max<std::int64_t>(1000000, 100 * static_cast<std::int64_t>(l));
    iterations = 0;
    constexpr double tau = 1e-12;
    while (true) {
      Eigen::Index i = -1, j = -1;
      double gmax = -std::numeric_limits<double>::infinity();
      double gmin = std::numeric_limits<double>::infinity();
      for (Eigen::Index t = 0; t < l; ++t) {
        const double v = -s_[t] * g[t];
        if (in_up(t, z) && v > gmax) {
          gmax = v;
          i = t;
        }
        if (in_low(t, z) && v < gmin) {
          gmin = v;
          j = t;
        }
      }
      gap = (i < 0 || j < 0) ? 0.0 : gmax - gmin;
      if (gap <= opts.tol || iterations >= cap) break;
      ++iterations;

      const double old_i = z[i], old_j = z[j];
      const double qii = q(i, i), qjj = q(j, j), qij = q(i, j);
      if (s_[i] != s_[j]) {
        double quad = qii + qjj + 2.0 * qij;
        if (quad <= 0) quad = tau;
        const double delta = (-g[i] - g[j]) / quad;
        const double diff = z[i] - z[j];
        z[i] += delta;
        z[j] += delta;
        if (diff > 0) {
          if (z[j] < 0) {
            z[j] = 0;
            z[i] = diff;
          }
        } else if (z[i] < 0) {
          z[i] = 0;
          z[j] = -diff;
        }
        if (diff > 0) {
          if (z[i] > c_) {
            z[i] = c_;
            z[j] = c_ - diff;
          }
        } else if (z[j] > c_) {
          z[j] = c_;
          z[i] = c_ + diff;
        }
      } else {
        double quad = qii + qjj - 2.0 * qij;
        if (quad <= 0) quad = tau;
        const double delta = (g[i] - g[j]) / quad;
        const double sum = z[i] + z[j];
        z[i] -= delta;
        z[j] += delta;
        if (sum > c_) {
          if (z[i] > c_) {
            z[i] = c_;
            z[j] = sum - c_;
          }
        } else if (z[j] < 0) {
          z[j] = 0;
          z[i] = sum;
        }
        if (sum > c_) {
          if (z[j] > c_) {
            z[j] = c_;
            z[i] = sum - c_;
          }
        } else if (z[i] < 0) {
          z[i] = 0;
          z[j] = sum;
        }
      }
      const double di = z[i] - old_i, dj = z[j] - old_j;
      for (Eigen::Index t = 0; t < l; ++t) g[t] += q(t, i) * di + q(t, j) * dj;
    }
    bias = -rho(z, g);
  }

  double objective(const Vector& z) const {
    double quad = 0.0;
    for (Eigen::Index i = 0; i < vars(); ++i) {
      if (z[i] == 0.0) continue;
      for (Eigen::Index j = 0; j < vars(); ++j) quad += z[i] * q(i, j) * z[j];
    }
    return -(0.5 * quad + p_.dot(z));
  }

 private:
  bool in_up(Eigen::Index t, const Vector& z) const { return s_[t] > 0 ? z[t] < c_ : z[t] > 0; }
  bool in_low(Eigen::Index t, const Vector& z) const { return s_[t] > 0 ? z[t] > 0 : z[t] < c_; }

  // Average of s_i G_i over free variables; midpoint of the feasible interval otherwise.
  double rho(const Vector& z, const Vector& g) const {
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    int free = 0;
    for (Eigen::Index i = 0; i < vars(); ++i) {
      const double yg = s_[i] * g[i];
      if (z[i] >= c_) {
        if (s_[i] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
      } else if (z[i] <= 0) {
        if (s_[i] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
      } else {
        sum += yg;
        ++free;
      }
    }
    if (free > 0) return sum / free;
    if (std::isinf(ub) && std::isinf(lb)) return 0.0;
    if (std::isinf(ub)) return lb;
    if (std::isinf(lb)) return ub;
    return 0.5 * (ub + lb);
  }

  const Matrix& k_;
  Eigen::Index n_;
  Vector s_;
  Vector p_;
  double c_;
};

inline void check_svm_inputs(const Matrix& k, const Vector& y, double c) {
  detail::require_dims(k.rows() == k.cols(), "svm: kernel matrix is not square");
  detail::require_dims(k.rows() == y.size(), "svm: kernel size " + std::to_string(k.rows()) + " vs " +
                                                 std::to_string(y.size()) + " targets");
  if (!k.allFinite()) throw DomainError("svm: non-finite kernel entry");
  if (!y.allFinite()) throw DomainError("svm: non-finite target");
  if (!(c > 0.0) || !std::isfinite(c)) throw DomainError("svm: C must be positive");
  if (k.rows() == 0) throw DomainError("svm: empty training set");
}

}  // namespace detail

/// Maximizes 1'a - 1/2 a'YKYa over 0 <= a <= C, y'a = 0. `warm_start`, when
/// given, must be feasible.
inline SvmSolution solve_svc(const Matrix& k, const Vector& y, double c, const SvmOptions& opts = {},
                             const Vector* warm_start = nullptr) {
  detail::check_svm_inputs(k, y, c);
  bool pos = false, neg = false;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] == 1.0) pos = true;
    else if (y[i] == -1.0) neg = true;
    else throw DomainError("solve_svc: label at " + std::to_string(i) + " is not +-1");
  }
  if (!pos || !neg) throw DomainError("solve_svc: degenerate task, all labels are identical");

  detail::SmoCore core(k, y, Vector::Constant(y.size(), -1.0), c);
  Vector z = Vector::Zero(y.size());
  if (warm_start != nullptr) {
    detail::require_dims(warm_start->size() == y.size(), "solve_svc: warm start length mismatch");
    z = warm_start->cwiseMax(0.0).cwiseMin(c);
  }
  SvmSolution sol;
  sol.kind = TaskKind::classification;
  core.run(z, opts, sol.kkt_violation, sol.iterations, sol.bias);
  sol.alpha = z;
  sol.expansion = y.cwiseProduct(z);
  sol.objective = core.objective(z);
  return sol;
}

/// Maximizes -eps 1'(a + a*) + y'(a - a*) - 1/2 (a - a*)'K(a - a*) over
/// 0 <= a, a* <= C, 1'(a - a*) = 0.
inline SvmSolution solve_svr(const Matrix& k, const Vector& y, double c, double epsilon,
                             const SvmOptions& opts = {}, const SvmSolution* warm_start = nullptr) {
  detail::check_svm_inputs(k, y, c);
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw DomainError("solve_svr: epsilon must be >= 0");
  const Eigen::Index n = y.size();
  Vector s(2 * n), p(2 * n), z = Vector::Zero(2 * n);
  s.head(n).setOnes();
  s.tail(n).setConstant(-1.0);
  p.head(n) = epsilon - y.array();
  p.tail(n) = epsilon + y.array();
  if (warm_start != nullptr && warm_start->alpha.size() == n && warm_start->alpha_star.size() == n) {
    z.head(n) = warm_start->alpha.cwiseMax(0.0).cwiseMin(c);
    z.tail(n) = warm_start->alpha_star.cwiseMax(0.0).cwiseMin(c);
  }
  detail::SmoCore core(k, s, p, c);
  SvmSolution sol;
  sol.kind = TaskKind::regression;
  core.run(z, opts, sol.kkt_violation, sol.iterations, sol.bias);
  sol.alpha = z.head(n);
  sol.alpha_star = z.tail(n);
  sol.expansion = sol.alpha - sol.alpha_star;
  sol.objective = core.objective(z);
  return sol;
}

/// Decision value sum_i e_i k(x_i, x) + b for one query row of kernel values.
inline double predict(const SvmSolution& model, const Vector& k_row) {
  detail::require_dims(k_row.size() == model.size(), "predict: kernel row length " + std::to_string(k_row.size()) +
                                                         " != training size " + std::to_string(model.size()));
  return k_row.dot(model.expansion) + model.bias;
}

/// Decision values for a block of query rows (queries x training points).
inline Vector predict(const SvmSolution& model, const Matrix& k_rows) {
  detail::require_dims(k_rows.cols() == model.size(), "predict: kernel block width does not match training size");
  return (k_rows * model.expansion).array() + model.bias;
}

/// Sign with ties broken to +1.
inline double predict_label(double score) { return score >= 0.0 ? 1.0 : -1.0; }

/// Primal value 1/2 |w|^2 + C sum loss reconstructed from the dual expansion:
/// hinge loss for classification, epsilon-insensitive loss for regression.
inline double primal_objective(const SvmSolution& model, const Matrix& k, const Vector& y, double c,
                               double epsilon = 0.0) {
  const Vector ke = k * model.expansion;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double f = ke[i] + model.bias;
    loss += model.kind == TaskKind::classification ? std::max(0.0, 1.0 - y[i] * f)
                                                   : std::max(0.0, std::abs(y[i] - f) - epsilon);
  }
  return 0.5 * model.expansion.dot(ke) + c * loss;
}

}  // namespace mtonmkl
