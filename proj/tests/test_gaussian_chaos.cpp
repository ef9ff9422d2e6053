#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ubu/gaussian_chaos.hpp"
#include "ubu/models.hpp"
#include "ubu/random.hpp"

using ubu::Tensor3;

TEST(ChaosMean, ZeroScalarAndDiagonal) {
  EXPECT_DOUBLE_EQ(ubu::chaos_mean_exact(Tensor3(3)), 0.0);
  Tensor3 s(1);
  s(0, 0, 0) = 1.7;
  EXPECT_NEAR(ubu::chaos_mean_exact(s), 3 * 1.7 * 1.7, 1e-14);
  const std::vector<double> a{1, 2, 3};
  EXPECT_DOUBLE_EQ(ubu::chaos_mean_exact(Tensor3::diagonal(a)), 42.0);
  EXPECT_DOUBLE_EQ(ubu::chaos_bound(Tensor3::diagonal(a)), 81.0);
}

TEST(ChaosMean, MatchesGaussHermiteQuadrature) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Tensor3 a = ubu::random_tensor(1 + seed % 5, seed);
    const double q = oracle::chaos_mean_quadrature(a);
    EXPECT_NEAR(ubu::chaos_mean_exact(a), q, 1e-10 * std::max(1.0, q));
  }
}

TEST(ChaosMean, MonteCarloAgreesWithin4SE) {
  const Tensor3 a = ubu::random_tensor(2, 21);
  const auto mc = ubu::chaos_mean_mc(a, 1000000, 5);
  EXPECT_NEAR(mc.mean, ubu::chaos_mean_exact(a), 4 * mc.std_error);

  const std::vector<double> ones{1, 1, 1};
  const auto mc_diag = ubu::chaos_mean_mc(Tensor3::diagonal(ones), 1000000, 6);
  EXPECT_NEAR(mc_diag.mean, 9.0, 4 * mc_diag.std_error);
}

TEST(ChaosMean, MonteCarloZeroAndDeterminism) {
  const auto z = ubu::chaos_mean_mc(Tensor3(2), 1000, 1);
  EXPECT_DOUBLE_EQ(z.mean, 0.0);
  EXPECT_DOUBLE_EQ(z.std_error, 0.0);
  const Tensor3 a = ubu::random_tensor(3, 2);
  const auto r1 = ubu::chaos_mean_mc(a, 200000, 3);
  const auto r2 = ubu::chaos_mean_mc(a, 200000, 3);
  EXPECT_EQ(r1.mean, r2.mean);
  EXPECT_EQ(r1.std_error, r2.std_error);
}

TEST(ChaosMean, MonteCarloIndependentOfWorkerCount) {
  const Tensor3 a = ubu::random_tensor(3, 4);
  setenv("UBU_THREADS", "1", 1);
  const auto one = ubu::chaos_mean_mc(a, 300000, 9);
  setenv("UBU_THREADS", "4", 1);
  const auto four = ubu::chaos_mean_mc(a, 300000, 9);
  unsetenv("UBU_THREADS");
  EXPECT_EQ(one.mean, four.mean);
  EXPECT_EQ(one.std_error, four.std_error);
}

TEST(ChaosBound, DominatesExactOnRandomTensors) {
  EXPECT_DOUBLE_EQ(ubu::chaos_bound(Tensor3(2)), 0.0);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Tensor3 a = ubu::random_tensor(1 + seed % 6, seed + 5000);
    EXPECT_LE(ubu::chaos_mean_exact(a), ubu::chaos_bound(a) * (1 + 1e-12));
  }
}

TEST(V4Moment, ClosedFormAndMonteCarlo) {
  EXPECT_DOUBLE_EQ(ubu::v4_moment(1, 1), 3.0);
  EXPECT_DOUBLE_EQ(ubu::v4_moment(2, 10), 480.0);
  const auto mc = ubu::v4_moment_mc(1, 50, 1000000, 8);
  EXPECT_NEAR(mc.mean, 2600.0, 4 * mc.std_error);
}

TEST(ErroneousBound, FailsBeyondDimensionOne) {
  EXPECT_DOUBLE_EQ(ubu::erroneous_bound(1, 1, 1), 3.0);
  EXPECT_DOUBLE_EQ(ubu::erroneous_bound(1, 1, 1), ubu::v4_moment(1, 1));
  EXPECT_DOUBLE_EQ(ubu::erroneous_bound(1, 1, 10), 30.0);
  EXPECT_LT(ubu::erroneous_bound(1, 1, 10), ubu::v4_moment(1, 10));
  EXPECT_DOUBLE_EQ(ubu::erroneous_bound(0, 1, 5), 0.0);
}

TEST(HessianTermBound, FormulaAndProductTargetMonteCarlo) {
  EXPECT_DOUBLE_EQ(ubu::hessian_term_bound(0, 1, 4), 0.0);
  EXPECT_DOUBLE_EQ(ubu::hessian_term_bound(1, 1, 4), 12.0);

  const int d = 4;
  const double c = 1.0 / 3.0;
  const auto model = ubu::make_product(ubu::ProductPhi::quadratic_logcosh, 1, 1, d);
  const auto& product = dynamic_cast<const ubu::ProductModel&>(*model);
  auto engine = ubu::make_engine(3, 0);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  double sum = 0.0;
  const int n = 20000;
  for (int s = 0; s < n; ++s) {
    ubu::Vec x(d), v(d);
    for (int i = 0; i < d; ++i) {
      v[i] = std::sqrt(c) * normal(engine);
      for (;;) {  // exp(-phi) by rejection from N(0, 1)
        const double t = normal(engine);
        if (uniform(engine) <= std::exp(-(product.phi(t) - 0.5 * t * t))) {
          x[i] = t;
          break;
        }
      }
    }
    sum += model->third_bilinear(x, v, v)->squaredNorm();
  }
  EXPECT_LE(sum / n, ubu::hessian_term_bound(model->constants().L1s, c, d));
}
