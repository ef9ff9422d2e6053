#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "ubu/models.hpp"
#include "ubu/random.hpp"

namespace ubu {

/// Friction gamma, scale c and step h of
///   dv = -gamma v dt - c grad f(x) dt + sqrt(2 gamma c) dW,   dx = v dt.
struct UBUParams {
  double gamma = 2.0;
  double c = 1.0;
  double h = 0.1;

  /// Throws ValidationError unless all three are positive and finite.
  void validate() const;
  UBUParams with_step(double step) const { return {gamma, c, step}; }
};

/// c = c_bar / (L + m), the default friction-scaled choice of c.
double default_c(const SmoothnessConstants& k, double c_bar = 1.0);

struct ChainState {
  Vec x;
  Vec v;
};

struct EFCoeffs {
  double E = 1.0;
  double F = 0.0;
};

/// E(t) = exp(-gamma t), F(t) = (1 - exp(-gamma t)) / gamma.
EFCoeffs ef_coeffs(double gamma, double t);

/// Per-dimension Gaussian integrals of one UBU step over [0, h]:
///   xi1 = int_0^h E(h - s) dW,  xi2 = int_0^h F(h - s) dW,
///   xi3 = int_0^{h/2} F(h/2 - s) dW.
struct NoiseTriple {
  Vec xi1;
  Vec xi2;
  Vec xi3;
  double h = 0.0;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();

  int dim() const { return static_cast<int>(xi1.size()); }
};

/// Exact covariance of (xi1, xi2, xi3) for one coordinate.
Eigen::Matrix3d noise_cov(double gamma, double h);

/// Lower-triangular L with L L^T = noise_cov(gamma, h). Round-off negative
/// eigenvalues above -1e-13 (relative to the correlation matrix) are
/// clipped; anything worse throws NumericalError.
Eigen::Matrix3d noise_factor(double gamma, double h);

NoiseTriple zero_noise(const UBUParams& params, int d);

/// Draws NoiseTriples for fixed (gamma, h) with a cached factor.
class NoiseSampler {
 public:
  explicit NoiseSampler(const UBUParams& params);
  NoiseTriple draw(Engine& engine, int d) const;

 private:
  double h_;
  Eigen::Matrix3d cov_;
  Eigen::Matrix3d factor_;
};

NoiseTriple sample_noise(Engine& engine, const UBUParams& params, int d);

/// Assembles the step-h triple from the triples of [0, h/2] and [h/2, h]
/// (both drawn for step params.h / 2). The result has law noise_cov(gamma, h).
NoiseTriple refine_noise(const NoiseTriple& first, const NoiseTriple& second,
                         const UBUParams& params);

/// Pairs up 2^k fine triples (step h_fine) into 2^(k-1) triples of step 2 h_fine.
std::vector<NoiseTriple> coarsen(const std::vector<NoiseTriple>& fine, double gamma);

/// One UBU step with cached exponential coefficients.
class UBUStepper {
 public:
  explicit UBUStepper(const UBUParams& params);

  /// Exactly one gradient evaluation. Throws NumericalError if the gradient
  /// is not finite.
  ChainState step(const ChainState& state, const PotentialModel& model,
                  const NoiseTriple& noise) const;
  void step_in_place(ChainState& state, const PotentialModel& model,
                     const NoiseTriple& noise) const;

  const UBUParams& params() const { return params_; }

 private:
  UBUParams params_;
  EFCoeffs full_;
  EFCoeffs half_;
  double noise_scale_;
};

ChainState ubu_step(const ChainState& state, const PotentialModel& model,
                    const UBUParams& params, const NoiseTriple& noise);

/// Two chains advanced with identical noise.
struct CoupledRun {
  /// distance[n] = ||xi_a(n) - xi_b(n)||_P for n = 0..n_steps.
  std::vector<double> distance;
  ChainState final_a;
  ChainState final_b;
  /// Filled only when requested.
  std::vector<ChainState> path_a;
  std::vector<ChainState> path_b;
};

CoupledRun run_coupled(const ChainState& a, const ChainState& b, const PotentialModel& model,
                       const UBUParams& params, long n_steps, std::uint64_t seed,
                       bool record_paths = false);

/// Exact transition of a linear (Gaussian-target) Langevin system over time
/// t, in (v, x) ordering: xi(t) ~ N(mean_map * xi(0), covariance).
struct GaussianPropagator {
  Eigen::MatrixXd mean_map;
  Eigen::MatrixXd covariance;

  /// Pushes N(mean, cov) forward.
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> apply(const Eigen::VectorXd& mean,
                                                    const Eigen::MatrixXd& cov) const;
};

/// Per-mode closed form: for Hessian eigenvalue lambda the mode system
/// matrix is [[-gamma, -c lambda], [1, 0]]; the added covariance is
/// S_inf - e^{Mt} S_inf e^{M^T t} with S_inf = diag(c, 1 / lambda).
GaussianPropagator exact_gaussian_propagator(const QuadraticSpec& spec, const UBUParams& params,
                                             double t);

/// Stationary law N(0, blockdiag(c I, H^{-1})) in (v, x) ordering; the
/// invariant density is proportional to exp(-f(x) - ||v||^2 / (2c)).
Eigen::MatrixXd stationary_covariance(const QuadraticSpec& spec, double c);

/// Exact draw from the stationary law of a quadratic target.
ChainState sample_stationary(const QuadraticSpec& spec, double c, Engine& engine);

/// Stacks (v, x) into one 2d vector.
Eigen::VectorXd stack(const ChainState& s);

}  // namespace ubu
