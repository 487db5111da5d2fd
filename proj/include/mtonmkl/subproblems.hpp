#pragma once

// The two non-SVM blocks of the alternating scheme: the nonnegative QP in
// theta and the closed-form neighborhood update.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mtonmkl/blocks.hpp"
#include "mtonmkl/error.hpp"
#include "mtonmkl/kernels.hpp"
#include "mtonmkl/linalg.hpp"
#include "mtonmkl/params.hpp"

namespace mtonmkl {

struct HyperParams {
  double C = 1.0;
  double eta = 1.0;
  double beta = 0.1;
  double epsilon = 0.1;          // SVR tube width
  double theta_tol = 1e-8;       // projected-gradient stationarity, relative to max(1, |linear term|)
  int max_outer = 50;
  double relative_decrease = 1e-5;
  double svm_tol = 1e-6;

  void validate() const {
    if (!(C > 0.0) || !std::isfinite(C)) throw DomainError("hyperparameter C must be positive");
    if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("hyperparameter eta must be positive");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw DomainError("hyperparameter beta must be >= 0");
    if (!(eta > 4.0 * beta)) {
      throw DomainError("hyperparameters must satisfy eta > 4 beta (eta=" + detail::format_double(eta) +
                        ", beta=" + detail::format_double(beta) + ")");
    }
    if (!(epsilon >= 0.0)) throw DomainError("hyperparameter epsilon must be >= 0");
    if (max_outer < 1) throw DomainError("outer iteration cap must be >= 1");
  }
};

struct QpOptions {
  double tol = 1e-8;  // on |x - max(0, x - grad)|_inf, scaled by max(1, |r|_inf)
  int max_iterations = 10000;
};

struct QpResult {
  Vector x;
  double objective = 0.0;
  double stationarity = 0.0;  // |x - max(0, x - grad)|_inf at exit
  int iterations = 0;
  bool converged = false;
};

/// min 1/2 x'Hx - r'x over x >= 0 for symmetric PSD H.
///
/// Two-metric projected Newton: coordinates that sit at zero with a positive
/// gradient take a diagonally scaled gradient step, the rest take a Newton
/// step on their block of H, and the combined step is projected and
/// backtracked (Armijo). A plain projected-gradient step is the fallback
/// when backtracking fails.
inline QpResult solve_nonneg_qp(const Matrix& h, const Vector& r, const Vector& start, const QpOptions& opts = {}) {
  detail::require_dims(h.rows() == h.cols() && h.rows() == r.size() && start.size() == r.size(),
                       "solve_nonneg_qp: dimension mismatch");
  if (!h.allFinite() || !r.allFinite() || !start.allFinite()) throw DomainError("solve_nonneg_qp: non-finite input");
  const Eigen::Index n = r.size();
  const auto f = [&](const Vector& x) { return 0.5 * x.dot(h * x) - r.dot(x); };
  const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
  const double tol = opts.tol * scale;
  const double max_diag = n > 0 ? std::max(h.diagonal().cwiseAbs().maxCoeff(), 1e-300) : 1.0;
  const double lipschitz = std::max(h.norm(), 1e-300);

  QpResult res;
  Vector x = start.cwiseMax(0.0);
  double fx = f(x);
  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    const Vector g = h * x - r;
    const Vector pg = x - (x - g).cwiseMax(0.0);
    res.stationarity = n > 0 ? pg.cwiseAbs().maxCoeff() : 0.0;
    if (res.stationarity <= tol) {
      res.converged = true;
      break;
    }
    const double eps_active = std::min(res.stationarity, 1e-6 * std::max(1.0, x.cwiseAbs().maxCoeff()));
    std::vector<Eigen::Index> free, bound;
    for (Eigen::Index i = 0; i < n; ++i) (x[i] <= eps_active && g[i] > 0 ? bound : free).push_back(i);

    Vector d = Vector::Zero(n);
    for (auto i : bound) d[i] = -g[i] / std::max(h(i, i), 1e-12 * max_diag);
    if (!free.empty()) {
      const auto nf = static_cast<Eigen::Index>(free.size());
      Matrix hff(nf, nf);
      Vector gf(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf[a] = g[free[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < nf; ++b) hff(a, b) = h(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      }
      hff.diagonal().array() += 1e-13 * max_diag;
      const Vector df = -hff.ldlt().solve(gf);
      for (Eigen::Index a = 0; a < nf; ++a) d[free[static_cast<std::size_t>(a)]] = df[a];
    }

    bool accepted = false;
    Vector x_new;
    double f_new = fx;
    if (d.allFinite()) {
      for (double step = 1.0; step > 1e-12; step *= 0.5) {
        x_new = (x + step * d).cwiseMax(0.0);
        const double decrease = g.dot(x_new - x);
        f_new = f(x_new);
        if (decrease < 0 && f_new <= fx + 1e-4 * decrease) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      x_new = (x - g / lipschitz).cwiseMax(0.0);
      f_new = f(x_new);
      if (!(f_new <= fx)) break;  // no representable progress left
    }
    const double moved = (x_new - x).cwiseAbs().maxCoeff();
    x = std::move(x_new);
    fx = f_new;
    if (moved <= 1e-15 * std::max(1.0, x.cwiseAbs().maxCoeff()) && !accepted) break;
  }
  if (!res.converged) {
    const Vector g = h * x - r;
    res.stationarity = n > 0 ? (x - (x - g).cwiseMax(0.0)).cwiseAbs().maxCoeff() : 0.0;
    res.converged = res.stationarity <= tol;
  }
  res.x = std::move(x);
  res.objective = f(res.x);
  return res;
}

/// Quadratic and linear terms of the theta objective
///   (eta/2) theta'A theta - theta'((eta/2) b + q)
/// or, with `printed_form`, theta'A theta - theta'(b + q).
struct ThetaProblem {
  Matrix hessian;
  Vector linear;
};

inline ThetaProblem theta_problem(const StructureCache& cache, const Vector& b, const Vector& q, double eta,
                                  bool printed_form = false) {
  detail::require_dims(b.size() == cache.layout.size() && q.size() == cache.layout.size(),
                       "theta problem: b and q must have length M + M T");
  if (!(eta > 0.0)) throw DomainError("theta problem: eta must be positive");
  if (printed_form) return {2.0 * cache.A, b + q};
  return {eta * cache.A, 0.5 * eta * b + q};
}

inline double theta_objective(const StructureCache& cache, const Vector& b, const Vector& q, double eta,
                              const Vector& theta, bool printed_form = false) {
  const auto p = theta_problem(cache, b, q, eta, printed_form);
  return 0.5 * theta.dot(p.hessian * theta) - p.linear.dot(theta);
}

struct ThetaSolve {
  ThetaParams params;
  QpResult qp;
};

inline ThetaSolve solve_theta(const StructureCache& cache, const Vector& b, const Vector& q, double eta,
                              const QpOptions& opts = {}, const Vector* start = nullptr,
                              bool printed_form = false) {
  if (!b.allFinite() || !q.allFinite()) throw DomainError("solve_theta: non-finite input");
  const auto p = theta_problem(cache, b, q, eta, printed_form);
  const Vector x0 = start != nullptr ? *start : Vector(Vector::Zero(cache.layout.size()));
  auto qp = solve_nonneg_qp(p.hessian, p.linear, x0, opts);
  ThetaParams params(cache.layout, qp.x);
  return {std::move(params), std::move(qp)};
}

/// K_t(theta) = sum_m theta_t^m K_t^m.
inline Matrix combined_kernel(const KernelBank& bank, const ThetaParams& theta, std::size_t task) {
  if (task >= bank.tasks()) throw DomainError("combined_kernel: task index out of range");
  detail::require_dims(theta.layout.bases == bank.bases() && theta.layout.tasks == bank.tasks(),
                       "combined_kernel: theta layout does not match bank");
  const Vector w = theta.task_weights(task);
  Matrix k = Matrix::Zero(bank.task_size(task), bank.task_size(task));
  for (std::size_t m = 0; m < bank.bases(); ++m) k += w[static_cast<Eigen::Index>(m)] * bank.gram(task, m);
  return k;
}

/// Expands per-task coefficients (M x T) into matrices sum_m c(m,t) K_t^m.
inline NeighborhoodSet neighborhood_from_coefficients(const KernelBank& bank, const Matrix& coefficients) {
  detail::require_dims(coefficients.rows() == static_cast<Eigen::Index>(bank.bases()) &&
                           coefficients.cols() == static_cast<Eigen::Index>(bank.tasks()),
                       "neighborhood coefficients must be M x T");
  NeighborhoodSet out;
  out.coefficients = coefficients;
  for (std::size_t t = 0; t < bank.tasks(); ++t) {
    Matrix k = Matrix::Zero(bank.task_size(t), bank.task_size(t));
    for (std::size_t m = 0; m < bank.bases(); ++m)
      k += coefficients(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) * bank.gram(t, m);
    out.matrices.push_back(std::move(k));
  }
  return out;
}

/// Neighborhood update in closed form. The minimizer v = Sigma^-1 a with
/// a = 1/2 (eta V theta - beta V g), g = A^+ d, lies in range(V) where
/// Sigma = (eta - 4 beta) I + (beta/2) V V^+ acts as (eta - 4 beta + beta/2), so
///   K_hat_t = [eta K_t(theta) - beta sum_m g_t^m K_t^m] / (2 eta - 7 beta).
/// g uses the range-space solve; a plain ridge solve would leave an
/// O(eps / sigma_min) error in the scalar action of Sigma.
inline NeighborhoodSet solve_neighborhood(const KernelBank& bank, const StructureCache& cache,
                                          const ThetaParams& theta, double eta, double beta) {
  if (!(eta > 0.0) || !(beta >= 0.0)) throw DomainError("solve_neighborhood: need eta > 0 and beta >= 0");
  if (!(eta > 4.0 * beta)) {
    throw DomainError("solve_neighborhood: eta <= 4 beta is the nonconvex regime (eta=" +
                      detail::format_double(eta) + ", beta=" + detail::format_double(beta) + ")");
  }
  detail::require_dims(theta.theta.size() == cache.layout.size(), "solve_neighborhood: theta length mismatch");
  const double denom = 2.0 * eta - 7.0 * beta;
  Vector coef = (eta / denom) * theta.theta;
  if (beta > 0.0) coef -= (beta / denom) * cache.solve_range(cache.d);
  return neighborhood_from_coefficients(bank, cache.layout.per_task(coef));
}

}  // namespace mtonmkl
