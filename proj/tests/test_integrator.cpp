#include <gtest/gtest.h>

#include <array>
#include <limits>

#include <boost/numeric/odeint.hpp>

#include "oracles.hpp"
#include "ubu/errors.hpp"
#include "ubu/integrator.hpp"
#include "ubu/metrics.hpp"

using ubu::Vec;

namespace {

// f = 0, or a gradient that is always NaN.
class FlatModel final : public ubu::PotentialModel {
 public:
  explicit FlatModel(int d, bool broken = false) : d_(d), broken_(broken) {}
  int dim() const override { return d_; }
  std::string name() const override { return "flat"; }
  double value(const Vec&) const override { return 0.0; }
  Vec gradient(const Vec& x) const override {
    return broken_ ? Vec::Constant(x.size(), std::numeric_limits<double>::quiet_NaN()) : Vec::Zero(x.size());
  }
  Vec hessian_vec(const Vec& x, const Vec&) const override { return Vec::Zero(x.size()); }
  ubu::SmoothnessConstants constants() const override { return {}; }

 private:
  int d_;
  bool broken_;
};

ubu::QuadraticSpec spectrum(std::initializer_list<double> l) {
  ubu::QuadraticSpec s;
  s.eigenvalues.resize(static_cast<Eigen::Index>(l.size()));
  Eigen::Index i = 0;
  for (double x : l) s.eigenvalues[i++] = x;
  return s;
}

// Stationary covariance of the UBU recursion for one Gaussian mode, from
// the update formulas written out by hand.
Eigen::Matrix2d ubu_mode_stationary(double gamma, double c, double h, double lambda) {
  const double E = std::exp(-gamma * h), F = -std::expm1(-gamma * h) / gamma;
  const double Et = std::exp(-gamma * h / 2), Ft = -std::expm1(-gamma * h / 2) / gamma;
  const double k = h * c * lambda;
  Eigen::Matrix2d A;
  A << E - k * Et * Ft, -k * Et, F - k * Ft * Ft, 1 - k * Ft;
  Eigen::Matrix<double, 2, 3> G;
  G << 1, 0, -k * Et, 0, 1, -k * Ft;
  const Eigen::Matrix2d Q = 2 * gamma * c * G * oracle::noise_cov_quadrature(gamma, h) * G.transpose();
  // Discrete Lyapunov S = A S A^T + Q via vec(S) = (I - A (x) A)^{-1} vec(Q).
  Eigen::Matrix4d K = Eigen::Matrix4d::Identity();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) K.block<2, 2>(2 * i, 2 * j) -= A(i, j) * A;
  const Eigen::Vector4d q(Q(0, 0), Q(0, 1), Q(1, 0), Q(1, 1));
  const Eigen::Vector4d s = K.partialPivLu().solve(q);
  Eigen::Matrix2d S;
  S << s[0], s[1], s[2], s[3];
  return S;
}

}  // namespace

TEST(EFCoeffs, Values) {
  auto a = ubu::ef_coeffs(2, 0);
  EXPECT_DOUBLE_EQ(a.E, 1.0);
  EXPECT_DOUBLE_EQ(a.F, 0.0);
  auto b = ubu::ef_coeffs(1, 1);
  EXPECT_NEAR(b.E, std::exp(-1.0), 1e-16);
  EXPECT_NEAR(b.F, 1 - std::exp(-1.0), 1e-16);
  const double t = 1e-9;
  EXPECT_NEAR(ubu::ef_coeffs(2, t).F, t - t * t, 1e-9 * t);
}

TEST(NoiseCov, MatchesQuadrature) {
  EXPECT_NEAR(ubu::noise_cov(2, 1)(0, 0), (1 - std::exp(-4.0)) / 4, 1e-15);
  EXPECT_NEAR(ubu::noise_cov(2, 1)(0, 0), 0.2454211, 1e-7);
  for (double gamma : {0.3, 1.0, 2.0, 7.0}) {
    for (double h : {1e-4, 3e-3, 0.05, 0.24, 0.26, 0.7, 1.5, 3.0}) {
      const Eigen::Matrix3d c = ubu::noise_cov(gamma, h);
      const Eigen::Matrix3d q = oracle::noise_cov_quadrature(gamma, h);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          EXPECT_NEAR(c(i, j), q(i, j), 1e-10);
          EXPECT_NEAR(c(i, j), q(i, j), 1e-9 * std::abs(q(i, j))) << gamma << " " << h << " " << i << j;
        }
    }
  }
}

TEST(NoiseCov, SmallStepLimits) {
  const double h = 1e-6;
  const auto c = ubu::noise_cov(2, h);
  EXPECT_NEAR(c(0, 0) / h, 1.0, 1e-5);
  EXPECT_NEAR(c(1, 1) / (h * h * h), 1.0 / 3.0, 1e-5);
  EXPECT_TRUE(c.isApprox(c.transpose()));
}

TEST(NoiseFactor, ReproducesCovariance) {
  for (double h : {1e-5, 0.01, 0.5, 2.0}) {
    const Eigen::Matrix3d l = ubu::noise_factor(2, h);
    const Eigen::Matrix3d c = ubu::noise_cov(2, h);
    EXPECT_LE((l * l.transpose() - c).norm(), 1e-12 * c.norm());
  }
}

TEST(SampleNoise, DeterministicAndCorrectCovariance) {
  const ubu::UBUParams p{2.0, 1.0, 0.4};
  auto e1 = ubu::make_engine(5, 2), e2 = ubu::make_engine(5, 2);
  const auto a = ubu::sample_noise(e1, p, 3), b = ubu::sample_noise(e2, p, 3);
  EXPECT_EQ(a.xi1, b.xi1);
  EXPECT_EQ(a.xi2, b.xi2);
  EXPECT_EQ(a.xi3, b.xi3);

  const ubu::NoiseSampler sampler(p);
  auto engine = ubu::make_engine(11, 0);
  oracle::ZeroMeanCovariance acc(6);
  for (int n = 0; n < 400000; ++n) {
    const auto t = sampler.draw(engine, 2);
    Eigen::VectorXd z(6);
    z << t.xi1[0], t.xi2[0], t.xi3[0], t.xi1[1], t.xi2[1], t.xi3[1];
    acc.add(z);
  }
  const auto est = acc.result();
  const Eigen::Matrix3d c = ubu::noise_cov(p.gamma, p.h);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      const double truth = (i / 3 == j / 3) ? c(i % 3, j % 3) : 0.0;
      EXPECT_NEAR(est.mean(i, j), truth, 4 * est.std_error(i, j)) << i << "," << j;
    }
}

TEST(RefineNoise, ZeroAndCovariance) {
  const ubu::UBUParams p{2.0, 1.0, 0.8};
  const auto zero = ubu::zero_noise(p.with_step(0.4), 2);
  const auto coarse = ubu::refine_noise(zero, zero, p);
  EXPECT_TRUE(coarse.xi1.isZero(0.0) && coarse.xi2.isZero(0.0) && coarse.xi3.isZero(0.0));
  EXPECT_DOUBLE_EQ(coarse.h, 0.8);
  EXPECT_THROW(ubu::refine_noise(zero, zero, p.with_step(0.5)), ubu::ValidationError);

  const ubu::NoiseSampler half(p.with_step(0.4));
  auto engine = ubu::make_engine(12, 0);
  oracle::ZeroMeanCovariance acc(3);
  for (int n = 0; n < 400000; ++n) {
    const auto a = half.draw(engine, 1), b = half.draw(engine, 1);
    const auto t = ubu::refine_noise(a, b, p);
    acc.add(Eigen::Vector3d(t.xi1[0], t.xi2[0], t.xi3[0]));
  }
  const auto est = acc.result();
  const Eigen::Matrix3d c = ubu::noise_cov(p.gamma, p.h);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(est.mean(i, j), c(i, j), 4 * est.std_error(i, j));
}

TEST(RefineNoise, FreeFlowTwoLevelConsistency) {
  const FlatModel flat(3);
  const ubu::UBUParams coarse{1.3, 0.7, 0.5};
  const ubu::UBUParams fine = coarse.with_step(0.25);
  auto engine = ubu::make_engine(1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = ubu::sample_noise(engine, fine, 3), b = ubu::sample_noise(engine, fine, 3);
    ubu::ChainState s{Vec::Random(3), Vec::Random(3)};
    const auto one = ubu::ubu_step(s, flat, coarse, ubu::refine_noise(a, b, coarse));
    const auto two = ubu::ubu_step(ubu::ubu_step(s, flat, fine, a), flat, fine, b);
    EXPECT_LE((one.x - two.x).norm(), 1e-12);
    EXPECT_LE((one.v - two.v).norm(), 1e-12);
  }
  // coarsen pairs consecutive triples the same way.
  std::vector<ubu::NoiseTriple> fines{ubu::sample_noise(engine, fine, 2), ubu::sample_noise(engine, fine, 2)};
  const auto c = ubu::coarsen(fines, coarse.gamma);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].xi2, ubu::refine_noise(fines[0], fines[1], coarse).xi2);
}

TEST(UBUStep, FreeFlowAndHandOracle) {
  const FlatModel flat(2);
  const ubu::UBUParams p{2.0, 1.0, 0.3};
  ubu::ChainState s{Vec::Constant(2, 0.5), Vec::Constant(2, -1.0)};
  const auto out = ubu::ubu_step(s, flat, p, ubu::zero_noise(p, 2));
  const auto ef = ubu::ef_coeffs(2.0, 0.3);
  EXPECT_TRUE(out.v.isApprox(ef.E * s.v, 1e-15));
  EXPECT_TRUE(out.x.isApprox(s.x + ef.F * s.v, 1e-15));

  ubu::QuadraticSpec q;
  q.eigenvalues = Vec::Ones(1);
  const auto model = ubu::make_gaussian(q);
  const ubu::UBUParams hp{2.0, 1.0, 0.5};
  const auto r = ubu::ubu_step({Vec::Ones(1), Vec::Zero(1)}, *model, hp, ubu::zero_noise(hp, 1));
  EXPECT_NEAR(r.v[0], -0.5 * std::exp(-0.5), 1e-15);
  EXPECT_NEAR(r.x[0], 1 - 0.5 * (1 - std::exp(-0.5)) / 2, 1e-15);
}

TEST(UBUStep, OneGradientPerStepAndNaNDiagnostics) {
  ubu::QuadraticSpec q;
  q.eigenvalues = Vec::Ones(2);
  ubu::CountingModel counted(ubu::make_gaussian(q));
  const ubu::UBUParams p{2, 1, 0.1};
  ubu::UBUStepper stepper(p);
  ubu::ChainState s{Vec::Ones(2), Vec::Zero(2)};
  for (int i = 0; i < 7; ++i) stepper.step_in_place(s, counted, ubu::zero_noise(p, 2));
  EXPECT_EQ(counted.gradient_calls(), 7);

  const FlatModel broken(2, true);
  EXPECT_THROW(stepper.step(s, broken, ubu::zero_noise(p, 2)), ubu::NumericalError);
  EXPECT_THROW(stepper.step(s, counted, ubu::zero_noise(p, 3)), ubu::ValidationError);
  EXPECT_THROW((ubu::UBUParams{2, 1, 0}.validate()), ubu::ValidationError);
  EXPECT_THROW((ubu::UBUParams{-1, 1, 0.1}.validate()), ubu::ValidationError);
}

TEST(UBUStep, StationaryBiasIsSecondOrder) {
  // Exact stationary covariance of the UBU recursion vs. the target law.
  const double gamma = 2, lambda = 3, c = 0.25;
  double prev = 0.0;
  for (double h : {0.2, 0.1, 0.05, 0.025}) {
    const Eigen::Matrix2d s = ubu_mode_stationary(gamma, c, h, lambda);
    const double err = std::hypot(s(0, 0) - c, s(1, 1) - 1 / lambda);
    if (prev > 0) {
      EXPECT_GT(prev / err, 3.5);
      EXPECT_LT(prev / err, 4.5);
    }
    prev = err;
  }
}

TEST(RunCoupled, IdenticalStartsAndContraction) {
  const auto model = ubu::make_gaussian(spectrum({1, 4}));
  const double c = ubu::default_c(model->constants());
  const ubu::UBUParams p{2.0, c, 0.1};
  ubu::ChainState a{Vec::Constant(2, 1.0), Vec::Zero(2)};
  const auto same = ubu::run_coupled(a, a, *model, p, 50, 3);
  for (double dist : same.distance) EXPECT_DOUBLE_EQ(dist, 0.0);

  ubu::ChainState b{Vec::Constant(2, -1.0), Vec::Constant(2, 0.5)};
  const auto run = ubu::run_coupled(a, b, *model, p, 300, 3, true);
  ASSERT_EQ(run.distance.size(), 301u);
  ASSERT_EQ(run.path_a.size(), 301u);
  for (std::size_t n = 0; n + 1 < run.distance.size(); ++n) EXPECT_LT(run.distance[n + 1], run.distance[n]);
  EXPECT_NEAR(run.distance.back(),
              std::sqrt(ubu::p_norm_sq(run.final_a.v - run.final_b.v, run.final_a.x - run.final_b.x)),
              1e-14);
}

TEST(ExactPropagator, IdentityAtZeroAndStationaryInvariance) {
  auto spec = spectrum({0.5, 2, 9});
  const ubu::UBUParams p{2.0, 0.3, 0.1};
  const auto id = ubu::exact_gaussian_propagator(spec, p, 0.0);
  EXPECT_TRUE(id.mean_map.isApprox(Eigen::MatrixXd::Identity(6, 6)));
  EXPECT_LE(id.covariance.norm(), 1e-15);

  const Eigen::MatrixXd s = ubu::stationary_covariance(spec, p.c);
  EXPECT_TRUE(s.topLeftCorner(3, 3).isApprox(p.c * Eigen::MatrixXd::Identity(3, 3), 1e-12));
  for (double t : {0.1, 1.0, 7.0}) {
    const auto prop = ubu::exact_gaussian_propagator(spec, p, t);
    const auto [m, cov] = prop.apply(Eigen::VectorXd::Zero(6), s);
    EXPECT_LE((cov - s).norm(), 1e-12);
  }
  // Started from a point, the covariance approaches the stationary law.
  const auto far = ubu::exact_gaussian_propagator(spec, p, 400.0);
  EXPECT_LE((far.covariance - s).norm(), 1e-12);

  // Continuous Lyapunov equation M S + S M^T + B B^T = 0 per mode.
  for (double lambda : {0.5, 2.0, 9.0}) {
    Eigen::Matrix2d M, S, BBt;
    M << -p.gamma, -p.c * lambda, 1, 0;
    S << p.c, 0, 0, 1 / lambda;
    BBt << 2 * p.gamma * p.c, 0, 0, 0;
    EXPECT_LE((M * S + S * M.transpose() + BBt).norm(), 1e-14);
  }
}

TEST(ExactPropagator, SemigroupAndRotation) {
  auto spec = spectrum({1, 3});
  Eigen::Matrix2d q;
  q << std::cos(0.3), -std::sin(0.3), std::sin(0.3), std::cos(0.3);
  spec.rotation = Eigen::MatrixXd(q);
  const ubu::UBUParams p{2.0, 0.5, 0.1};
  const auto a = ubu::exact_gaussian_propagator(spec, p, 0.4);
  const auto b = ubu::exact_gaussian_propagator(spec, p, 0.9);
  const auto ab = ubu::exact_gaussian_propagator(spec, p, 1.3);
  EXPECT_LE((b.mean_map * a.mean_map - ab.mean_map).norm(), 1e-12);
  const Eigen::MatrixXd composed = b.mean_map * a.covariance * b.mean_map.transpose() + b.covariance;
  EXPECT_LE((composed - ab.covariance).norm(), 1e-12);
}

TEST(ExactPropagator, MeanMapMatchesOdeSolver) {
  using State = std::array<double, 2>;
  namespace odeint = boost::numeric::odeint;
  const double t = 1.7;
  // Under-, critically and over-damped modes.
  for (double lambda : {0.4, 1.0, 2.0, 16.0}) {
    auto spec = spectrum({lambda});
    const ubu::UBUParams p{2.0, 1.0, 0.1};
    const auto prop = ubu::exact_gaussian_propagator(spec, p, t);
    for (int col = 0; col < 2; ++col) {
      State y{col == 0 ? 1.0 : 0.0, col == 1 ? 1.0 : 0.0};  // (v, x)
      auto rhs = [&](const State& s, State& ds, double) {
        ds[0] = -p.gamma * s[0] - p.c * lambda * s[1];
        ds[1] = s[0];
      };
      odeint::integrate_adaptive(odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(1e-14, 1e-14),
                                 rhs, y, 0.0, t, 1e-3);
      EXPECT_NEAR(prop.mean_map(0, col), y[0], 1e-10) << lambda;
      EXPECT_NEAR(prop.mean_map(1, col), y[1], 1e-10) << lambda;
    }
  }
}

TEST(StationarySampling, MomentsMatch) {
  auto spec = spectrum({1, 4});
  auto engine = ubu::make_engine(4, 0);
  oracle::ZeroMeanCovariance acc(4);
  for (int n = 0; n < 200000; ++n) acc.add(ubu::stack(ubu::sample_stationary(spec, 0.2, engine)));
  const auto est = acc.result();
  const Eigen::MatrixXd s = ubu::stationary_covariance(spec, 0.2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(est.mean(i, j), s(i, j), 4 * est.std_error(i, j));
}
