#pragma once

// Structure objects A, b, c, d, q built from Gram traces, plus an explicit V
// for small instances.
//
// With V_t = [Vt_t, Vt_t (x) e_t'] and Vt_t = [vec K_t^1 .. vec K_t^M], the
// trace formulas below satisfy A = V'V, b = V'v_hat, c = v_hat'v_hat and
// d = V' vec-stack(I). V itself has T n^2 rows and is never formed outside
// materialize_V.

#include <cstddef>
#include <string>
#include <vector>

#include "mtonmkl/error.hpp"
#include "mtonmkl/kernels.hpp"
#include "mtonmkl/linalg.hpp"
#include "mtonmkl/params.hpp"

namespace mtonmkl {

struct StructureCache {
  ThetaLayout layout;
  Matrix A;
  Vector d;
  SpdFactorization factorization;  // of A + eps*I

  /// (A + eps I)^-1 v.
  Vector solve(const Vector& v) const { return factorization.solve(v); }
  double ridge() const { return factorization.ridge(); }

  /// A^+ v for v in range(A), by iterated Tikhonov on the ridge factor:
  /// x <- x + (A + eps I)^-1 (v - A x). The range error shrinks by
  /// eps / (sigma + eps) per sweep; null components of v are not removed.
  Vector solve_range(const Vector& v, int sweeps = 3) const {
    Vector x = factorization.solve(v);
    for (int k = 0; k < sweeps; ++k) x += factorization.solve(Vector(v - A * x));
    return x;
  }
};

/// Per-task trace matrices tr(K_t^m1 K_t^m2) (= Frobenius products, Grams are symmetric).
inline std::vector<Matrix> task_trace_products(const KernelBank& bank) {
  const auto M = bank.bases();
  std::vector<Matrix> out(bank.tasks(), Matrix(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M)));
  for (std::size_t t = 0; t < bank.tasks(); ++t)
    for (std::size_t m1 = 0; m1 < M; ++m1)
      for (std::size_t m2 = 0; m2 <= m1; ++m2) {
        const double v = frobenius_dot(bank.gram(t, m1), bank.gram(t, m2));
        out[t](static_cast<Eigen::Index>(m1), static_cast<Eigen::Index>(m2)) = v;
        out[t](static_cast<Eigen::Index>(m2), static_cast<Eigen::Index>(m1)) = v;
      }
  return out;
}

/// A = [[A1, A3], [A3', A2]] and d = [D 1_T; vec(D')], D(m, t) = tr(K_t^m).
inline StructureCache build_A(const KernelBank& bank, const RidgeOptions& ridge = {}) {
  if (bank.tasks() == 0 || bank.bases() == 0) throw DomainError("build_A: empty kernel bank");
  StructureCache cache;
  cache.layout = ThetaLayout{bank.bases(), bank.tasks()};
  const auto& L = cache.layout;
  const auto traces = task_trace_products(bank);
  cache.A = Matrix::Zero(L.size(), L.size());
  for (std::size_t m1 = 0; m1 < L.bases; ++m1) {
    for (std::size_t m2 = 0; m2 < L.bases; ++m2) {
      double a1 = 0.0;
      for (std::size_t t = 0; t < L.tasks; ++t) {
        const double a = traces[t](static_cast<Eigen::Index>(m1), static_cast<Eigen::Index>(m2));
        a1 += a;
        cache.A(L.mu(m1), L.lambda(t, m2)) = a;          // A3
        cache.A(L.lambda(t, m2), L.mu(m1)) = a;          // A3'
        cache.A(L.lambda(t, m1), L.lambda(t, m2)) = a;   // A2, diagonal T x T blocks
      }
      cache.A(L.mu(m1), L.mu(m2)) = a1;  // A1
    }
  }
  Matrix D(static_cast<Eigen::Index>(L.bases), static_cast<Eigen::Index>(L.tasks));
  for (std::size_t m = 0; m < L.bases; ++m)
    for (std::size_t t = 0; t < L.tasks; ++t)
      D(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) = bank.gram(t, m).trace();
  cache.d = L.stack(D);
  cache.factorization = SpdFactorization::with_default_ridge(cache.A, ridge);
  return cache;
}

inline void check_neighborhood(const KernelBank& bank, const NeighborhoodSet& nbhd) {
  detail::require_dims(nbhd.tasks() == bank.tasks(), "neighborhood set has " + std::to_string(nbhd.tasks()) +
                                                         " matrices for " + std::to_string(bank.tasks()) + " tasks");
  for (std::size_t t = 0; t < bank.tasks(); ++t) {
    const auto n = bank.task_size(t);
    detail::require_dims(nbhd.matrices[t].rows() == n && nbhd.matrices[t].cols() == n,
                         "neighborhood matrix for task " + std::to_string(t) + " does not match task size");
  }
}

/// b = [B 1_T; vec(B')] with B(m, t) = tr(K_t^m K_hat_t).
inline Vector build_b(const KernelBank& bank, const NeighborhoodSet& nbhd) {
  check_neighborhood(bank, nbhd);
  const ThetaLayout L{bank.bases(), bank.tasks()};
  Matrix B(static_cast<Eigen::Index>(L.bases), static_cast<Eigen::Index>(L.tasks));
  for (std::size_t m = 0; m < L.bases; ++m)
    for (std::size_t t = 0; t < L.tasks; ++t)
      B(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) =
          frobenius_dot(bank.gram(t, m), nbhd.matrices[t].transpose());
  return L.stack(B);
}

/// c = sum_t tr(K_hat_t K_hat_t).
inline double build_c(const NeighborhoodSet& nbhd) {
  double c = 0.0;
  for (const auto& k : nbhd.matrices) c += frobenius_dot(k, k.transpose());
  return c;
}

/// q = [Q 1_T; vec(Q')] with Q(m, t) = 1/2 e_t' K_t^m e_t, where e_t is the
/// task's signed dual expansion (Y alpha for classification, alpha - alpha*
/// for regression).
inline Vector build_q(const KernelBank& bank, const std::vector<Vector>& expansions) {
  detail::require_dims(expansions.size() == bank.tasks(), "build_q: one expansion per task required");
  const ThetaLayout L{bank.bases(), bank.tasks()};
  Matrix Q(static_cast<Eigen::Index>(L.bases), static_cast<Eigen::Index>(L.tasks));
  for (std::size_t t = 0; t < L.tasks; ++t) {
    detail::require_dims(expansions[t].size() == bank.task_size(t),
                         "build_q: expansion length for task " + std::to_string(t) + " does not match task size");
    for (std::size_t m = 0; m < L.bases; ++m)
      Q(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) =
          0.5 * expansions[t].dot(bank.gram(t, m) * expansions[t]);
  }
  return L.stack(Q);
}

/// Explicit V (sum_t n_t^2 rows). Refuses to build more than `row_cap` rows.
inline Matrix materialize_V(const KernelBank& bank, Eigen::Index row_cap = 10000) {
  const ThetaLayout L{bank.bases(), bank.tasks()};
  Eigen::Index rows = 0;
  for (std::size_t t = 0; t < L.tasks; ++t) rows += bank.task_size(t) * bank.task_size(t);
  if (rows > row_cap) {
    throw DomainError("materialize_V: " + std::to_string(rows) + " rows exceeds cap " + std::to_string(row_cap));
  }
  Matrix V = Matrix::Zero(rows, L.size());
  Eigen::Index offset = 0;
  for (std::size_t t = 0; t < L.tasks; ++t) {
    const auto n2 = bank.task_size(t) * bank.task_size(t);
    for (std::size_t m = 0; m < L.bases; ++m) {
      const auto vec = bank.gram(t, m).reshaped();  // column stacking
      V.block(offset, L.mu(m), n2, 1) = vec;
      V.block(offset, L.lambda(t, m), n2, 1) = vec;
    }
    offset += n2;
  }
  return V;
}

/// Column-stacked vec of the neighborhood matrices, task after task.
inline Vector stack_neighborhood(const NeighborhoodSet& nbhd) {
  Eigen::Index rows = 0;
  for (const auto& k : nbhd.matrices) rows += k.size();
  Vector v(rows);
  Eigen::Index offset = 0;
  for (const auto& k : nbhd.matrices) {
    v.segment(offset, k.size()) = k.reshaped();
    offset += k.size();
  }
  return v;
}

}  // namespace mtonmkl
