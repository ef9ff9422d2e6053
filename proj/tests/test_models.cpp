#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <boost/math/tools/minima.hpp>

#include "ubu/errors.hpp"
#include "ubu/models.hpp"

using ubu::Vec;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Vec fd_gradient(const ubu::PotentialModel& m, const Vec& x) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * (1 + std::abs(x[i]));
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (m.value(a) - m.value(b)) / (2 * h);
  }
  return g;
}

Vec fd_hessian_vec(const ubu::PotentialModel& m, const Vec& x, const Vec& w) {
  const double h = 1e-5;
  return (m.gradient(x + h * w) - m.gradient(x - h * w)) / (2 * h);
}

Vec fd_third(const ubu::PotentialModel& m, const Vec& x, const Vec& w1, const Vec& w2) {
  const double h = 1e-4;
  return (m.hessian_vec(x + h * w1, w2) - m.hessian_vec(x - h * w1, w2)) / (2 * h);
}

Vec random_vec(std::mt19937_64& rng, int d, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vec v(d);
  for (auto& x : v) x = normal(rng);
  return v;
}

std::vector<ubu::ModelPtr> sample_models() {
  ubu::QuadraticSpec spec;
  spec.eigenvalues = vec({1, 2, 5});
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(3, 3)).householderQ();
  spec.rotation = q;
  ubu::RegressionData data;
  data.design = Eigen::MatrixXd::Random(12, 3);
  data.labels = Vec::Ones(12);
  for (int i = 0; i < 12; i += 2) data.labels[i] = -1;
  data.ridge = 0.7;
  return {ubu::make_gaussian(spec), ubu::make_product(ubu::ProductPhi::quadratic_logcosh, 1.5, 0.8, 3),
          ubu::make_logistic(data)};
}

}  // namespace

TEST(GaussianModel, HandValues) {
  ubu::QuadraticSpec a;
  a.eigenvalues = vec({1, 1});
  const auto ga = ubu::make_gaussian(a);
  EXPECT_DOUBLE_EQ(ga->value(vec({1, 2})), 2.5);
  EXPECT_TRUE(ga->gradient(vec({1, 2})).isApprox(vec({1, 2})));

  ubu::QuadraticSpec b;
  b.eigenvalues = vec({1, 4});
  b.rotation = Eigen::MatrixXd::Identity(2, 2);
  const auto gb = ubu::make_gaussian(b);
  EXPECT_DOUBLE_EQ(gb->value(vec({1, 1})), 2.5);
  EXPECT_TRUE(gb->gradient(vec({1, 1})).isApprox(vec({1, 4})));
  EXPECT_DOUBLE_EQ(gb->constants().m, 1.0);
  EXPECT_DOUBLE_EQ(gb->constants().L, 4.0);
  EXPECT_DOUBLE_EQ(gb->constants().L1s, 0.0);
}

TEST(GaussianModel, RejectsBadSpecs) {
  ubu::QuadraticSpec neg;
  neg.eigenvalues = vec({1, -1});
  EXPECT_THROW(ubu::make_gaussian(neg), ubu::ValidationError);
  ubu::QuadraticSpec rot;
  rot.eigenvalues = vec({1, 2});
  rot.rotation = Eigen::MatrixXd::Ones(2, 2);
  EXPECT_THROW(ubu::make_gaussian(rot), ubu::ValidationError);
}

TEST(ProductModel, Constants) {
  const auto g = ubu::make_product(ubu::ProductPhi::quadratic_logcosh, 0.0, 1.0, 3);
  EXPECT_DOUBLE_EQ(g->constants().L1, 0.0);
  EXPECT_DOUBLE_EQ(g->constants().L, 1.0);

  const auto p = ubu::make_product(ubu::ProductPhi::quadratic_logcosh, 1.0, 1.0, 3);
  const auto k = p->constants();
  EXPECT_DOUBLE_EQ(k.m, 1.0);
  EXPECT_DOUBLE_EQ(k.L, 2.0);
  EXPECT_NEAR(k.L1s, 4 / (3 * std::sqrt(3.0)), 1e-12);
  EXPECT_NEAR(k.L1s, 0.7698, 1e-4);

  // 1-D oracle: maximize |phi'''| numerically.
  const auto& prod = dynamic_cast<const ubu::ProductModel&>(*p);
  const auto best = boost::math::tools::brent_find_minima(
      [&](double t) { return -std::abs(prod.d3phi(t)); }, 0.01, 3.0, 50);
  EXPECT_NEAR(-best.second, k.L1s, 1e-10);
  EXPECT_TRUE(p->gradient(Vec::Zero(3)).isZero(0.0));
}

TEST(LogisticModel, EmptyDataIsGaussian) {
  ubu::RegressionData data;
  data.design = Eigen::MatrixXd(0, 2);
  data.labels = Vec(0);
  data.ridge = 1.0;
  const auto m = ubu::make_logistic(data);
  EXPECT_DOUBLE_EQ(m->constants().m, 1.0);
  EXPECT_DOUBLE_EQ(m->constants().L, 1.0);
  EXPECT_TRUE(m->gradient(vec({1, -2})).isApprox(vec({1, -2})));
  EXPECT_TRUE(m->hessian_vec(vec({1, -2}), vec({3, 4})).isApprox(vec({3, 4})));
}

TEST(LogisticModel, HandValues) {
  ubu::RegressionData data;
  data.design = Eigen::MatrixXd(1, 2);
  data.design << 1, 0;
  data.labels = vec({1});
  data.ridge = 1.0;
  const auto m = ubu::make_logistic(data);
  EXPECT_NEAR(m->value(Vec::Zero(2)), std::log(2.0), 1e-15);
  EXPECT_TRUE(m->gradient(Vec::Zero(2)).isApprox(vec({-0.5, 0})));
}

TEST(LogisticModel, StableAtExtremeMargins) {
  ubu::RegressionData data;
  data.design = Eigen::MatrixXd(2, 1);
  data.design << 1, -1;
  data.labels = vec({1, 1});
  data.ridge = 1.0;
  const auto m = ubu::make_logistic(data);
  for (double x : {-800.0, 800.0}) {
    EXPECT_TRUE(std::isfinite(m->value(vec({x}))));
    EXPECT_TRUE(m->gradient(vec({x})).allFinite());
  }
  EXPECT_NEAR(m->value(vec({800})), 800 + 0.5 * 800 * 800, 1e-6);
}

TEST(Models, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(17);
  for (const auto& m : sample_models()) {
    for (int trial = 0; trial < 20; ++trial) {
      const Vec x = random_vec(rng, m->dim(), 1.5);
      const Vec w1 = random_vec(rng, m->dim());
      const Vec w2 = random_vec(rng, m->dim());
      const Vec g = m->gradient(x);
      EXPECT_LE((g - fd_gradient(*m, x)).norm(), 1e-5 * std::max(1.0, g.norm())) << m->name();
      const Vec hv = m->hessian_vec(x, w1);
      EXPECT_LE((hv - fd_hessian_vec(*m, x, w1)).norm(), 1e-6 * std::max(1.0, hv.norm())) << m->name();
      const Vec t = *m->third_bilinear(x, w1, w2);
      EXPECT_LE((t - fd_third(*m, x, w1, w2)).norm(), 1e-5 * std::max(1.0, t.norm())) << m->name();
    }
  }
}

TEST(Models, ThirdDerivativeRespectsL1) {
  // ||H'(x)[w, w]|| <= L1 ||w||^2 for sampled x and w.
  std::mt19937_64 rng(5);
  for (const auto& m : sample_models()) {
    const double l1 = m->constants().L1;
    for (int trial = 0; trial < 200; ++trial) {
      const Vec x = random_vec(rng, m->dim(), 2.0);
      const Vec w = random_vec(rng, m->dim());
      EXPECT_LE(m->third_bilinear(x, w, w)->norm(), l1 * w.squaredNorm() * (1 + 1e-12) + 1e-14)
          << m->name();
    }
  }
}

TEST(Models, ConstantsBracketHessianSpectrum) {
  std::mt19937_64 rng(8);
  for (const auto& m : sample_models()) {
    const auto k = m->constants();
    for (int trial = 0; trial < 20; ++trial) {
      const Vec x = random_vec(rng, m->dim(), 2.0);
      Eigen::MatrixXd h(m->dim(), m->dim());
      for (int j = 0; j < m->dim(); ++j) h.col(j) = m->hessian_vec(x, Vec::Unit(m->dim(), j));
      const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (h + h.transpose())).eigenvalues();
      EXPECT_GE(ev.minCoeff(), k.m - 1e-12) << m->name();
      EXPECT_LE(ev.maxCoeff(), k.L + 1e-12) << m->name();
    }
  }
}

TEST(HessianTensor, GaussianProductAndFiniteDifference) {
  ubu::QuadraticSpec spec;
  spec.eigenvalues = vec({1, 3});
  const ubu::Tensor3 zero = ubu::hessian_tensor(*ubu::make_gaussian(spec), vec({0.3, -1}));
  for (double v : zero.values()) EXPECT_DOUBLE_EQ(v, 0.0);

  const auto p2 = ubu::make_product(ubu::ProductPhi::quadratic_logcosh, 1, 1, 2);
  const ubu::Tensor3 at0 = ubu::hessian_tensor(*p2, Vec::Zero(2));
  EXPECT_NEAR(at0(0, 0, 0), 0.0, 1e-15);
  EXPECT_NEAR(at0(1, 1, 1), 0.0, 1e-15);

  const auto p1 = ubu::make_product(ubu::ProductPhi::quadratic_logcosh, 1, 1, 1);
  const auto& prod = dynamic_cast<const ubu::ProductModel&>(*p1);
  const double h = 1e-4;
  const double fd = (prod.d2phi(0.5 + h) - prod.d2phi(0.5 - h)) / (2 * h);
  EXPECT_NEAR(ubu::hessian_tensor(*p1, vec({0.5}))(0, 0, 0), fd, 1e-7);
  EXPECT_NEAR(ubu::hessian_tensor(*p1, vec({0.5}), true)(0, 0, 0), fd, 1e-6);

  // Finite-difference path agrees with the analytic tensor for logistic.
  const auto models = sample_models();
  const Vec x = vec({0.2, -0.4, 0.9});
  const ubu::Tensor3 exact = ubu::hessian_tensor(*models[2], x);
  const ubu::Tensor3 approx = ubu::hessian_tensor(*models[2], x, true);
  for (std::size_t n = 0; n < 27; ++n) EXPECT_NEAR(exact.values()[n], approx.values()[n], 1e-6);
  EXPECT_LE(ubu::norm_12_3(exact), models[2]->constants().L1s * (1 + 1e-12));
}

TEST(RegressionCsv, ParsesAndReportsLineNumbers) {
  const auto dir = std::filesystem::temp_directory_path() / "ubu_models_test";
  std::filesystem::create_directories(dir);
  const auto good = dir / "good.csv";
  std::ofstream(good) << "label,x1,x2\n1,0.5,1\n0,-1,2\n";
  const auto data = ubu::read_regression_csv(good.string(), ',', 2.0);
  EXPECT_EQ(data.design.rows(), 2);
  EXPECT_EQ(data.design.cols(), 2);
  EXPECT_DOUBLE_EQ(data.labels[1], -1.0);
  EXPECT_DOUBLE_EQ(data.ridge, 2.0);

  const auto bad = dir / "bad.csv";
  std::ofstream(bad) << "label,x1,x2\n1,0.5,1\n1,abc,2\n";
  try {
    ubu::read_regression_csv(bad.string(), ',', 1.0);
    FAIL() << "expected ValidationError";
  } catch (const ubu::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.csv:3:"), std::string::npos) << e.what();
  }
  const auto ragged = dir / "ragged.csv";
  std::ofstream(ragged) << "label,x1,x2\n1,0.5\n";
  EXPECT_THROW(ubu::read_regression_csv(ragged.string(), ',', 1.0), ubu::ValidationError);
  EXPECT_THROW(ubu::read_regression_csv((dir / "missing.csv").string(), ',', 1.0), ubu::ValidationError);
}

TEST(CountingModel, CountsGradients) {
  ubu::CountingModel m(ubu::make_product(ubu::ProductPhi::quadratic_logcosh, 1, 1, 2));
  m.gradient(Vec::Zero(2));
  m.gradient(Vec::Ones(2));
  EXPECT_EQ(m.gradient_calls(), 2);
}
