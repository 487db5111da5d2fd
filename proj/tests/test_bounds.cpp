#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "mtonmkl/bounds.hpp"

using namespace mtonmkl;

namespace {

BoundInputs inputs(const StructureCache& cache, const Vector& b, double c, double rho, double R = 1.0) {
  BoundInputs in;
  in.cache = &cache;
  in.b = b;
  in.c = c;
  in.rho = rho;
  in.R = R;
  in.n = 10.0;
  return in;
}

}  // namespace

TEST(Omega, ZeroNeighborhood) {
  std::mt19937_64 rng(71);
  const auto bank = fixtures::random_bank(rng, 2, 2, 4);
  const auto cache = build_A(bank);
  EXPECT_EQ(omega(cache, Vector::Zero(cache.layout.size()), 0.0), 0.0);
}

TEST(Omega, QuadraticScalingLaw) {
  std::mt19937_64 rng(72);
  const auto bank = fixtures::random_bank(rng, 2, 2, 4);
  const auto cache = build_A(bank);
  NeighborhoodSet n{fixtures::random_neighborhood(rng, bank), std::nullopt};
  const Vector b = build_b(bank, n);
  const double c = build_c(n);
  const Vector ainv_b = cache.solve(b);
  for (double s : {0.5, 2.0, -3.0}) {
    NeighborhoodSet scaled = n;
    for (auto& m : scaled.matrices) m *= s;
    const double want = s * cache.d.dot(ainv_b) + s * s * (0.5 * b.dot(ainv_b) - 4.0 * c);
    const double got = omega(cache, build_b(bank, scaled), build_c(scaled));
    EXPECT_LE(oracle::relative_error(got, want), 1e-9);
  }
}

TEST(Omega, MatchesDenseEvaluation) {
  std::mt19937_64 rng(73);
  const auto bank = fixtures::random_bank(rng, 2, 2, 3);
  const auto cache = build_A(bank);
  NeighborhoodSet n{fixtures::random_neighborhood(rng, bank), std::nullopt};
  std::vector<std::vector<Matrix>> grams(2);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t m = 0; m < 2; ++m) grams[t].push_back(bank.gram(t, m));
  const Matrix V = oracle::explicit_V(grams);
  const Matrix Vt = oracle::transpose(V);
  const Vector v = oracle::stacked_vec(n.matrices);
  std::vector<Matrix> eyes(2, Matrix::Identity(3, 3));
  const Vector d = oracle::matvec(Vt, oracle::stacked_vec(eyes));
  const Vector b = oracle::matvec(Vt, v);
  Matrix shifted = oracle::matmul(Vt, V);
  shifted.diagonal().array() += cache.ridge();
  const auto ainv = oracle::inverse(shifted);
  ASSERT_TRUE(ainv.has_value());
  const double want = oracle::quadratic_form(*ainv, d, b) + 0.5 * oracle::quadratic_form(*ainv, b, b) -
                      4.0 * oracle::dot(v, v);
  EXPECT_LE(oracle::relative_error(omega(cache, build_b(bank, n), build_c(n)), want), 1e-9);
}

TEST(Omega, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(74);
  const auto bank = fixtures::random_bank(rng, 2, 2, 3);
  const auto cache = build_A(bank);
  NeighborhoodSet n{fixtures::random_neighborhood(rng, bank), std::nullopt};
  const auto grad = omega_gradient(bank, cache, n);
  const double h = 1e-5;
  for (std::size_t t = 0; t < 2; ++t)
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) {
        NeighborhoodSet up = n, down = n;
        up.matrices[t](i, j) += h;
        down.matrices[t](i, j) -= h;
        const double fd = (omega(cache, build_b(bank, up), build_c(up)) -
                           omega(cache, build_b(bank, down), build_c(down))) / (2.0 * h);
        EXPECT_NEAR(grad[t](i, j), fd, 1e-5 * std::max(1.0, std::abs(fd)));
      }
}

TEST(RademacherBound, MonotoneInRhoAndSqrtR) {
  std::mt19937_64 rng(75);
  const auto bank = fixtures::kernel_bank(rng, 2, {KernelSpec::linear(), KernelSpec::gaussian(1.0)}, 5);
  const auto cache = build_A(bank);
  NeighborhoodSet n{{0.5 * bank.gram(0, 0), 0.5 * bank.gram(1, 1)}, std::nullopt};
  const Vector b = build_b(bank, n);
  const double c = build_c(n);
  double previous = 0.0;
  for (double rho : {c, c + 0.5, c + 2.0, c + 10.0}) {
    const double now = rademacher_bound(inputs(cache, b, c, rho));
    EXPECT_GE(now, previous);
    previous = now;
  }
  const double r1 = rademacher_bound(inputs(cache, b, c, c + 1.0, 1.0));
  const double r4 = rademacher_bound(inputs(cache, b, c, c + 1.0, 4.0));
  EXPECT_LE(oracle::relative_error(r4, 2.0 * r1), 1e-14);
}

TEST(RademacherBound, TraceTermIsRankInSmallRidgeLimit) {
  std::mt19937_64 rng(76);
  const auto bank = fixtures::random_bank(rng, 3, 2, 4);
  RidgeOptions tiny;
  tiny.absolute = 0.0;
  tiny.relative = 1e-9;
  const auto cache = build_A(bank, tiny);
  Eigen::JacobiSVD<Matrix> svd(materialize_V(bank));
  svd.setThreshold(1e-10);
  EXPECT_NEAR(trace_term(cache), static_cast<double>(svd.rank()), 1e-5);
}

TEST(RademacherBound, InvalidInputs) {
  std::mt19937_64 rng(77);
  const auto bank = fixtures::random_bank(rng, 1, 1, 3);
  const auto cache = build_A(bank);
  auto in = inputs(cache, Vector::Zero(2), 0.0, 1.0);
  in.R = 0.0;
  EXPECT_THROW(rademacher_bound(in), DomainError);
  in = inputs(cache, Vector::Zero(2), 0.0, 1.0);
  in.cache = nullptr;
  EXPECT_THROW(rademacher_bound(in), DomainError);
}

TEST(QuarticExpectation, HandExamples) {
  EXPECT_DOUBLE_EQ(rademacher_quartic_expectation(Matrix::Identity(2, 2), Matrix::Identity(2, 2)), 4.0);
  const Matrix swap{{0.0, 1.0}, {1.0, 0.0}};
  EXPECT_DOUBLE_EQ(rademacher_quartic_expectation(swap, swap), 4.0);
}

TEST(QuarticExpectation, MatchesEnumeration) {
  std::mt19937_64 rng(78);
  for (Eigen::Index n = 2; n <= 8; ++n)
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix a = oracle::random_matrix(rng, n, n);
      const Matrix b = oracle::random_matrix(rng, n, n);
      EXPECT_LE(oracle::relative_error(rademacher_quartic_expectation(a, b), oracle::exhaustive_quartic(a, b)), 1e-10);
    }
}

TEST(SupLinear, ZeroDirectionAndScaling) {
  std::mt19937_64 rng(79);
  const auto bank = fixtures::kernel_bank(rng, 2, {KernelSpec::linear(), KernelSpec::gaussian(1.0)}, 4);
  const auto cache = build_A(bank);
  const Vector b = Vector::Zero(cache.layout.size());
  EXPECT_EQ(sup_linear_over_ball(cache, b, 0.0, 1.0, Vector::Zero(cache.layout.size())), 0.0);
  const Vector u = fixtures::random_nonneg(rng, cache.layout.size());
  const double s1 = sup_linear_over_ball(cache, b, 0.0, 1.0, u);
  const double s2 = sup_linear_over_ball(cache, b, 0.0, 1.0, 3.0 * u);
  EXPECT_LE(oracle::relative_error(s2, 3.0 * s1), 1e-6);
  EXPECT_GE(sup_linear_over_ball(cache, b, 0.0, 4.0, u), s1);
}

TEST(MonteCarlo, BelowBoundAndDeterministic) {
  std::mt19937_64 rng(80);
  const auto bank = fixtures::kernel_bank(rng, 2, {KernelSpec::linear(), KernelSpec::gaussian(1.0)}, 5);
  const auto cache = build_A(bank);
  NeighborhoodSet n{{0.5 * bank.gram(0, 1), 0.5 * bank.gram(1, 1)}, std::nullopt};
  const Vector b = build_b(bank, n);
  const double c = build_c(n);
  MonteCarloOptions mc;
  mc.draws = 500;
  const double est = montecarlo_complexity(bank, cache, b, c, 1.0, c + 1.0, mc);
  EXPECT_EQ(est, montecarlo_complexity(bank, cache, b, c, 1.0, c + 1.0, mc));
  auto in = inputs(cache, b, c, c + 1.0);
  in.n = 5.0;
  EXPECT_LE(est, rademacher_bound(in));
  EXPECT_GT(est, 0.0);
}
