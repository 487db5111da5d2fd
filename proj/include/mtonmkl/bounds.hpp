#pragma once

// Complexity-side quantities: the neighborhood regularizer Omega, the
// Rademacher upper bound, the Rademacher fourth-moment identity, and a
// Monte-Carlo estimate of the intermediate (pre-Jensen) bound.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "mtonmkl/blocks.hpp"
#include "mtonmkl/error.hpp"
#include "mtonmkl/linalg.hpp"
#include "mtonmkl/subproblems.hpp"

namespace mtonmkl {

/// Omega = d'A^-1 b + 1/2 b'A^-1 b - 4c, with A^-1 the ridge-regularized inverse.
inline double omega(const StructureCache& cache, const Vector& b, double c) {
  detail::require_dims(b.size() == cache.layout.size(), "omega: b has wrong length");
  const Vector ainv_b = cache.solve(b);
  return cache.d.dot(ainv_b) + 0.5 * b.dot(ainv_b) - 4.0 * c;
}

/// dOmega / dK_hat_t for every task, treating each matrix entry as independent.
inline std::vector<Matrix> omega_gradient(const KernelBank& bank, const StructureCache& cache,
                                          const NeighborhoodSet& nbhd) {
  const Vector b = build_b(bank, nbhd);
  const Vector h = cache.solve(cache.d + b);
  const auto& L = cache.layout;
  std::vector<Matrix> out;
  for (std::size_t t = 0; t < bank.tasks(); ++t) {
    Matrix g = -8.0 * nbhd.matrices[t].transpose();
    for (std::size_t m = 0; m < bank.bases(); ++m) g += (h[L.mu(m)] + h[L.lambda(t, m)]) * bank.gram(t, m).transpose();
    out.push_back(std::move(g));
  }
  return out;
}

/// trace(V (A + eps I)^-1 V') evaluated as trace((A + eps I)^-1 A).
inline double trace_term(const StructureCache& cache) { return cache.factorization.solve(cache.A).trace(); }

struct BoundInputs {
  double R = 1.0;    // budget on sum_t |w_t|^2
  double rho = 1.0;  // radius of the neighborhood ball
  double n = 1.0;    // samples per task
  const StructureCache* cache = nullptr;
  Vector b;
  double c = 0.0;
};

/// Radicand of the bound:
///   d'A^-1 b + 1/2 [(d'A^-1 d + 2 tr(V A^-1 V')) + (b'A^-1 b + 4(rho - c))].
inline double rademacher_radicand(const BoundInputs& in) {
  if (in.cache == nullptr) throw DomainError("rademacher_bound: missing structure cache");
  const auto& cache = *in.cache;
  detail::require_dims(in.b.size() == cache.layout.size(), "rademacher_bound: b has wrong length");
  const Vector ainv_b = cache.solve(in.b);
  const Vector ainv_d = cache.solve(cache.d);
  return cache.d.dot(ainv_b) +
         0.5 * ((cache.d.dot(ainv_d) + 2.0 * trace_term(cache)) + (in.b.dot(ainv_b) + 4.0 * (in.rho - in.c)));
}

/// (1/n) sqrt(R / 2T) sqrt(radicand). A negative radicand is an error.
inline double rademacher_bound(const BoundInputs& in) {
  if (!(in.R > 0.0)) throw DomainError("rademacher_bound: R must be positive");
  if (!(in.rho >= 0.0)) throw DomainError("rademacher_bound: rho must be >= 0");
  if (!(in.n > 0.0)) throw DomainError("rademacher_bound: n must be positive");
  const double radicand = rademacher_radicand(in);
  if (!(radicand >= 0.0)) {
    throw NumericError("rademacher_bound: negative radicand " + detail::format_double(radicand));
  }
  const double tasks = static_cast<double>(in.cache->layout.tasks);
  return std::sqrt(in.R / (2.0 * tasks)) * std::sqrt(radicand) / in.n;
}

/// E[(s'As)(s'Bs)] for independent Rademacher s:
///   tr(A) tr(B) + 2 (tr(AB) - tr(A o B)).
/// Inputs are symmetrized first (s'As only sees the symmetric part).
inline double rademacher_quartic_expectation(const Matrix& a, const Matrix& b) {
  detail::require_dims(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows(),
                       "rademacher_quartic_expectation: need square matrices of equal size");
  const Matrix as = 0.5 * (a + a.transpose());
  const Matrix bs = 0.5 * (b + b.transpose());
  const double hadamard_trace = as.diagonal().dot(bs.diagonal());
  return as.trace() * bs.trace() + 2.0 * ((as * bs).trace() - hadamard_trace);
}

/// sup theta'u over {theta >= 0, theta'A theta - theta'b + c <= rho}.
///
/// The maximizer solves min_{theta >= 0} theta'A theta - theta'(b + w u) for
/// the multiplier w > 0 at which the constraint is active; w is found by
/// bisection in log space. Returns 0 when u vanishes.
inline double sup_linear_over_ball(const StructureCache& cache, const Vector& b, double c, double rho,
                                   const Vector& u, const QpOptions& qp = {}) {
  if (u.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  const Matrix h = 2.0 * cache.A;
  Vector warm = Vector::Zero(u.size());
  auto at = [&](double w, Vector& theta) {
    theta = solve_nonneg_qp(h, b + w * u, warm, qp).x;
    warm = theta;
    return theta.dot(cache.A * theta) - theta.dot(b) + c - rho;
  };
  Vector theta;
  double lo = 0.0;  // w with slack (constraint satisfied)
  double hi = 1.0;
  if (at(0.0, theta) > 0.0) {
    throw DomainError("sup_linear_over_ball: constraint set is empty for rho=" + detail::format_double(rho));
  }
  while (at(hi, theta) <= 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw NumericError("sup_linear_over_ball: supremum is unbounded");
  }
  Vector best;
  at(lo, best);
  for (int iter = 0; iter < 100 && hi - lo > 1e-12 * hi; ++iter) {
    const double mid = lo > 0.0 ? std::sqrt(lo * hi) : 0.5 * hi;
    if (at(mid, theta) <= 0.0) {
      lo = mid;
      best = theta;
    } else {
      hi = mid;
    }
  }
  return std::max(0.0, best.dot(u));
}

struct MonteCarloOptions {
  int draws = 5000;
  std::uint64_t seed = 7;
};

/// (1/n) sqrt(R/T) E_sigma[ sqrt(sup_{theta in Psi} theta'u(sigma)) ] estimated
/// by sampling sign vectors; u = [U 1_T; vec(U')], U(m, t) = s_t'K_t^m s_t.
/// Each draw uses its own counter-seeded generator.
inline double montecarlo_complexity(const KernelBank& bank, const StructureCache& cache, const Vector& b, double c,
                                    double R, double rho, const MonteCarloOptions& opts = {}) {
  if (opts.draws <= 0) throw DomainError("montecarlo_complexity: draws must be positive");
  const auto& L = cache.layout;
  const double n = static_cast<double>(bank.task_size(0));
  double total = 0.0;
  for (int draw = 0; draw < opts.draws; ++draw) {
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(draw)};
    std::mt19937_64 rng(seq);
    std::bernoulli_distribution coin(0.5);
    Matrix U(static_cast<Eigen::Index>(L.bases), static_cast<Eigen::Index>(L.tasks));
    for (std::size_t t = 0; t < L.tasks; ++t) {
      Vector s(bank.task_size(t));
      for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = coin(rng) ? 1.0 : -1.0;
      for (std::size_t m = 0; m < L.bases; ++m)
        U(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) = s.dot(bank.gram(t, m) * s);
    }
    total += std::sqrt(sup_linear_over_ball(cache, b, c, rho, L.stack(U)));
  }
  return std::sqrt(R / static_cast<double>(L.tasks)) * (total / opts.draws) / n;
}

}  // namespace mtonmkl
