#pragma once

// Seeded random instances shared by the unit tests and the acceptance suite.

#include <random>
#include <vector>

#include "mtonmkl/kernels.hpp"
#include "mtonmkl/params.hpp"
#include "oracles.hpp"

namespace fixtures {

using mtonmkl::KernelBank;
using mtonmkl::KernelSpec;
using mtonmkl::Matrix;
using mtonmkl::Vector;

// Bank of random full-rank PSD Grams; specs are placeholders.
inline KernelBank random_bank(std::mt19937_64& rng, std::size_t T, std::size_t M, Eigen::Index n) {
  std::vector<KernelSpec> specs;
  for (std::size_t m = 0; m < M; ++m) specs.push_back(KernelSpec::gaussian(static_cast<double>(m + 1)));
  std::vector<std::vector<Matrix>> grams(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t m = 0; m < M; ++m) grams[t].push_back(oracle::random_psd(rng, n));
  return KernelBank(specs, grams);
}

// Bank built from actual kernels on random points, so Grams are normalized.
inline KernelBank kernel_bank(std::mt19937_64& rng, std::size_t T, const std::vector<KernelSpec>& specs,
                              Eigen::Index n, Eigen::Index p = 3) {
  std::vector<std::vector<Matrix>> grams(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Matrix x = oracle::random_matrix(rng, n, p);
    for (const auto& s : specs) grams[t].push_back(mtonmkl::normalize_gram(mtonmkl::raw_gram(s, x)));
  }
  return KernelBank(specs, grams);
}

inline std::vector<Matrix> random_neighborhood(std::mt19937_64& rng, const KernelBank& bank) {
  std::vector<Matrix> out;
  for (std::size_t t = 0; t < bank.tasks(); ++t) out.push_back(oracle::random_symmetric(rng, bank.task_size(t)));
  return out;
}

inline Vector random_nonneg(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline Vector random_labels(std::mt19937_64& rng, Eigen::Index n) {
  std::bernoulli_distribution coin(0.5);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = coin(rng) ? 1.0 : -1.0;
  y[0] = 1.0;
  y[n - 1] = -1.0;
  return y;
}

}  // namespace fixtures
