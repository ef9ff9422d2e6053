#include "ubu/integrator.hpp"

#include <cmath>
#include <sstream>

#include "ubu/errors.hpp"
#include "ubu/metrics.hpp"

namespace ubu {

namespace {

// Sum_{n >= first} (-1)^n coeff(n) z^n / n!, truncated when terms vanish.
template <typename Coeff>
double alternating_series(double z, int first, Coeff coeff) {
  double power_over_fact = 1.0;
  for (int n = 1; n <= first; ++n) power_over_fact *= z / n;
  double sum = 0.0;
  for (int n = first; n < first + 60; ++n) {
    const double term = ((n % 2 == 0) ? 1.0 : -1.0) * coeff(n) * power_over_fact;
    sum += term;
    if (std::abs(term) <= 1e-18 * std::abs(sum)) break;
    power_over_fact *= z / (n + 1);
  }
  return sum;
}

constexpr double kSeriesCutoff = 0.5;

// z - 2 (1 - e^{-z}) + (1 - e^{-2z}) / 2 = gamma^3 int_0^h F^2.
double q3(double z) {
  if (z < kSeriesCutoff) {
    return alternating_series(z, 3, [](int n) { return 2.0 - std::ldexp(1.0, n - 1); });
  }
  return z + 2.0 * std::expm1(-z) - 0.5 * std::expm1(-2.0 * z);
}

// (1 - e^{-z}) - (1 - e^{-2z}) / 2 = gamma^2 int_0^h E F.
double p2(double z) {
  if (z < kSeriesCutoff) {
    return alternating_series(z, 2, [](int n) { return std::ldexp(1.0, n - 1) - 1.0; });
  }
  return -std::expm1(-z) + 0.5 * std::expm1(-2.0 * z);
}

// z - (1 - e^{-z}) = gamma^2 int_0^h F.
double r2(double z) {
  if (z < kSeriesCutoff) return alternating_series(z, 2, [](int) { return 1.0; });
  return z + std::expm1(-z);
}

void check_finite(const Vec& v, const char* what, const ChainState& state) {
  if (v.allFinite()) return;
  std::ostringstream msg;
  msg << "UBU step produced a non-finite " << what << "; state x = [" << state.x.transpose()
      << "], v = [" << state.v.transpose() << "]";
  throw NumericalError(msg.str());
}

// e^{Mt} for M = [[-gamma, -kappa], [1, 0]].
Eigen::Matrix2d mode_exp(double gamma, double kappa, double t) {
  const double mu = -0.5 * gamma;
  const double disc = 0.25 * gamma * gamma - kappa;
  double ch = 1.0;
  double sh_over = t;  // sinh(delta t) / delta, continuous at delta = 0
  if (disc > 0.0) {
    const double delta = std::sqrt(disc);
    ch = std::cosh(delta * t);
    sh_over = delta * t < 1e-8 ? t * (1.0 + disc * t * t / 6.0) : std::sinh(delta * t) / delta;
  } else if (disc < 0.0) {
    const double omega = std::sqrt(-disc);
    ch = std::cos(omega * t);
    sh_over = omega * t < 1e-8 ? t * (1.0 + disc * t * t / 6.0) : std::sin(omega * t) / omega;
  }
  Eigen::Matrix2d shifted;
  shifted << -gamma - mu, -kappa, 1.0, -mu;
  return std::exp(mu * t) * (ch * Eigen::Matrix2d::Identity() + sh_over * shifted);
}

}  // namespace

void UBUParams::validate() const {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!positive(gamma)) throw ValidationError("gamma must be positive");
  if (!positive(c)) throw ValidationError("c must be positive");
  if (!positive(h)) throw ValidationError("step size h must be positive");
}

double default_c(const SmoothnessConstants& k, double c_bar) {
  if (!(c_bar > 0.0)) throw ValidationError("c_bar must be positive");
  return c_bar / (k.L + k.m);
}

EFCoeffs ef_coeffs(double gamma, double t) {
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
  if (!(t >= 0.0)) throw ValidationError("t must be nonnegative");
  const double z = gamma * t;
  EFCoeffs out;
  out.E = std::exp(-z);
  // expm1 keeps F accurate as gamma t -> 0; the explicit series covers the
  // tiny-argument range where F = t (1 - z/2 + z^2/6).
  out.F = z < 1e-6 ? t * (1.0 - 0.5 * z + z * z / 6.0) : -std::expm1(-z) / gamma;
  return out;
}

Eigen::Matrix3d noise_cov(double gamma, double h) {
  UBUParams{gamma, 1.0, h}.validate();
  const double z = gamma * h;
  const double tau = 0.5 * h;
  const double zt = gamma * tau;
  const double g2 = gamma * gamma;
  const double g3 = g2 * gamma;
  const EFCoeffs half = ef_coeffs(gamma, tau);

  Eigen::Matrix3d cov;
  cov(0, 0) = -std::expm1(-2.0 * z) / (2.0 * gamma);
  cov(1, 1) = q3(z) / g3;
  cov(2, 2) = q3(zt) / g3;
  cov(0, 1) = p2(z) / g2;
  cov(0, 2) = half.E * p2(zt) / g2;
  cov(1, 2) = half.F * r2(zt) / g2 + half.E * q3(zt) / g3;
  cov(1, 0) = cov(0, 1);
  cov(2, 0) = cov(0, 2);
  cov(2, 1) = cov(1, 2);
  return cov;
}

Eigen::Matrix3d noise_factor(double gamma, double h) {
  const Eigen::Matrix3d cov = noise_cov(gamma, h);
  const Eigen::Vector3d scale = cov.diagonal().cwiseSqrt();
  Eigen::Matrix3d corr = scale.cwiseInverse().asDiagonal() * cov * scale.cwiseInverse().asDiagonal();
  corr = 0.5 * (corr + corr.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(corr);
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < -1e-13) {
    std::ostringstream msg;
    msg << "noise covariance for gamma=" << gamma << ", h=" << h
        << " is not positive semidefinite (min correlation eigenvalue " << min_eig << ")";
    throw NumericalError(msg.str());
  }
  if (min_eig < 1e-15) {
    corr = eig.eigenvectors() * eig.eigenvalues().cwiseMax(1e-15).asDiagonal() *
           eig.eigenvectors().transpose();
  }
  Eigen::LLT<Eigen::Matrix3d> llt(corr);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Cholesky factorization of the noise correlation failed");
  }
  return scale.asDiagonal() * Eigen::Matrix3d(llt.matrixL());
}

NoiseTriple zero_noise(const UBUParams& params, int d) {
  params.validate();
  NoiseTriple n;
  n.xi1 = Vec::Zero(d);
  n.xi2 = Vec::Zero(d);
  n.xi3 = Vec::Zero(d);
  n.h = params.h;
  n.cov = noise_cov(params.gamma, params.h);
  return n;
}

NoiseSampler::NoiseSampler(const UBUParams& params)
    : h_(params.h), cov_(noise_cov(params.gamma, params.h)), factor_(noise_factor(params.gamma, params.h)) {}

NoiseTriple NoiseSampler::draw(Engine& engine, int d) const {
  std::normal_distribution<double> normal;
  NoiseTriple n;
  n.xi1.resize(d);
  n.xi2.resize(d);
  n.xi3.resize(d);
  n.h = h_;
  n.cov = cov_;
  for (int i = 0; i < d; ++i) {
    Eigen::Vector3d z;
    z << normal(engine), normal(engine), normal(engine);
    const Eigen::Vector3d xi = factor_ * z;
    n.xi1[i] = xi[0];
    n.xi2[i] = xi[1];
    n.xi3[i] = xi[2];
  }
  return n;
}

NoiseTriple sample_noise(Engine& engine, const UBUParams& params, int d) {
  return NoiseSampler(params).draw(engine, d);
}

NoiseTriple refine_noise(const NoiseTriple& first, const NoiseTriple& second,
                         const UBUParams& params) {
  params.validate();
  const double half = 0.5 * params.h;
  auto matches = [half](double h) { return std::abs(h - half) <= 1e-12 * half; };
  if (!matches(first.h) || !matches(second.h)) {
    std::ostringstream msg;
    msg << "refine_noise: sub-steps " << first.h << " and " << second.h
        << " do not both equal h/2 = " << half;
    throw ValidationError(msg.str());
  }
  if (first.dim() != second.dim()) throw ValidationError("refine_noise: dimension mismatch");
  const EFCoeffs ef = ef_coeffs(params.gamma, half);
  NoiseTriple out;
  out.xi1 = ef.E * first.xi1 + second.xi1;
  out.xi2 = first.xi2 + ef.F * first.xi1 + second.xi2;
  out.xi3 = first.xi2;
  out.h = params.h;
  out.cov = noise_cov(params.gamma, params.h);
  return out;
}

std::vector<NoiseTriple> coarsen(const std::vector<NoiseTriple>& fine, double gamma) {
  if (fine.size() % 2 != 0) throw ValidationError("coarsen: odd number of fine triples");
  std::vector<NoiseTriple> out;
  out.reserve(fine.size() / 2);
  if (fine.empty()) return out;
  const UBUParams coarse{gamma, 1.0, 2.0 * fine.front().h};
  for (std::size_t i = 0; i < fine.size(); i += 2) {
    out.push_back(refine_noise(fine[i], fine[i + 1], coarse));
  }
  return out;
}

UBUStepper::UBUStepper(const UBUParams& params)
    : params_(params),
      full_(ef_coeffs(params.gamma, params.h)),
      half_(ef_coeffs(params.gamma, 0.5 * params.h)),
      noise_scale_(std::sqrt(2.0 * params.gamma * params.c)) {
  params.validate();
}

void UBUStepper::step_in_place(ChainState& state, const PotentialModel& model,
                               const NoiseTriple& noise) const {
  const int d = model.dim();
  if (state.x.size() != d || state.v.size() != d || noise.dim() != d) {
    throw ValidationError("UBU step: state, noise and model dimensions differ");
  }
  const double h = params_.h;
  const double c = params_.c;
  const Vec y = state.x + half_.F * state.v + noise_scale_ * noise.xi3;
  const Vec grad = model.gradient(y);
  check_finite(grad, "gradient", state);
  const Vec v_old = state.v;
  state.v = full_.E * v_old - (h * half_.E * c) * grad + noise_scale_ * noise.xi1;
  state.x += full_.F * v_old - (h * half_.F * c) * grad + noise_scale_ * noise.xi2;
}

ChainState UBUStepper::step(const ChainState& state, const PotentialModel& model,
                            const NoiseTriple& noise) const {
  ChainState out = state;
  step_in_place(out, model, noise);
  return out;
}

ChainState ubu_step(const ChainState& state, const PotentialModel& model, const UBUParams& params,
                    const NoiseTriple& noise) {
  return UBUStepper(params).step(state, model, noise);
}

CoupledRun run_coupled(const ChainState& a, const ChainState& b, const PotentialModel& model,
                       const UBUParams& params, long n_steps, std::uint64_t seed,
                       bool record_paths) {
  if (n_steps < 0) throw ValidationError("run_coupled: negative step count");
  if (a.x.size() != b.x.size() || a.v.size() != b.v.size()) {
    throw ValidationError("run_coupled: chains have different dimensions");
  }
  const UBUStepper stepper(params);
  const NoiseSampler sampler(params);
  auto engine = make_engine(seed, 0);
  CoupledRun run;
  run.final_a = a;
  run.final_b = b;
  run.distance.reserve(static_cast<std::size_t>(n_steps) + 1);
  auto record = [&] {
    run.distance.push_back(
        std::sqrt(p_norm_sq(run.final_a.v - run.final_b.v, run.final_a.x - run.final_b.x)));
    if (record_paths) {
      run.path_a.push_back(run.final_a);
      run.path_b.push_back(run.final_b);
    }
  };
  record();
  for (long n = 0; n < n_steps; ++n) {
    const NoiseTriple noise = sampler.draw(engine, model.dim());
    stepper.step_in_place(run.final_a, model, noise);
    stepper.step_in_place(run.final_b, model, noise);
    record();
  }
  return run;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> GaussianPropagator::apply(
    const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) const {
  return {mean_map * mean, mean_map * cov * mean_map.transpose() + covariance};
}

GaussianPropagator exact_gaussian_propagator(const QuadraticSpec& spec, const UBUParams& params,
                                             double t) {
  params.validate();
  if (!(t >= 0.0)) throw ValidationError("propagation time must be nonnegative");
  const auto d = spec.eigenvalues.size();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(spec.eigenvalues[i] > 0.0)) throw ValidationError("propagator: nonpositive eigenvalue");
  }
  const Eigen::MatrixXd q =
      spec.rotation ? *spec.rotation : Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d));

  // Mode-wise blocks in the eigenbasis, (v, x) ordering.
  Eigen::VectorXd a_vv(d), a_vx(d), a_xv(d), a_xx(d), s_vv(d), s_vx(d), s_xx(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lambda = spec.eigenvalues[i];
    const Eigen::Matrix2d e = mode_exp(params.gamma, params.c * lambda, t);
    Eigen::Matrix2d s_inf = Eigen::Matrix2d::Zero();
    s_inf(0, 0) = params.c;
    s_inf(1, 1) = 1.0 / lambda;
    Eigen::Matrix2d added = s_inf - e * s_inf * e.transpose();
    if (t == 0.0) added.setZero();
    a_vv[i] = e(0, 0);
    a_vx[i] = e(0, 1);
    a_xv[i] = e(1, 0);
    a_xx[i] = e(1, 1);
    s_vv[i] = added(0, 0);
    s_vx[i] = 0.5 * (added(0, 1) + added(1, 0));
    s_xx[i] = added(1, 1);
  }
  auto rotate = [&q](const Eigen::VectorXd& diag) -> Eigen::MatrixXd {
    return q * diag.asDiagonal() * q.transpose();
  };
  GaussianPropagator out;
  out.mean_map.resize(2 * d, 2 * d);
  out.covariance.resize(2 * d, 2 * d);
  out.mean_map << rotate(a_vv), rotate(a_vx), rotate(a_xv), rotate(a_xx);
  const Eigen::MatrixXd cross = rotate(s_vx);
  out.covariance << rotate(s_vv), cross, cross.transpose(), rotate(s_xx);
  return out;
}

Eigen::MatrixXd stationary_covariance(const QuadraticSpec& spec, double c) {
  const auto d = spec.eigenvalues.size();
  const Eigen::MatrixXd q =
      spec.rotation ? *spec.rotation : Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  out.topLeftCorner(d, d) = c * Eigen::MatrixXd::Identity(d, d);
  out.bottomRightCorner(d, d) =
      q * spec.eigenvalues.cwiseInverse().asDiagonal() * q.transpose();
  return out;
}

ChainState sample_stationary(const QuadraticSpec& spec, double c, Engine& engine) {
  const auto d = spec.eigenvalues.size();
  std::normal_distribution<double> normal;
  ChainState s;
  s.v.resize(d);
  Vec z(d);
  for (Eigen::Index i = 0; i < d; ++i) s.v[i] = std::sqrt(c) * normal(engine);
  for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(engine) / std::sqrt(spec.eigenvalues[i]);
  s.x = spec.rotation ? Vec(*spec.rotation * z) : z;
  return s;
}

Eigen::VectorXd stack(const ChainState& s) {
  Eigen::VectorXd out(s.v.size() + s.x.size());
  out << s.v, s.x;
  return out;
}

}  // namespace ubu
