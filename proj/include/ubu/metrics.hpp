#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ubu {

struct ChainState;

/// P-hat = [[1, 1], [1, 2]]; acts blockwise on (v, x) as P-hat (x) I_d.
Eigen::Matrix2d p_hat();

/// ||v||^2 + 2 <v, x> + 2 ||x||^2.
double p_norm_sq(const Eigen::VectorXd& v, const Eigen::VectorXd& x);

/// lower ||(v,x)|| <= ||(v,x)||_P <= upper ||(v,x)||, with lower^2 and
/// upper^2 the eigenvalues (3 -+ sqrt 5) / 2 of P-hat.
struct NormEquivalence {
  double lower;
  double upper;
  /// sqrt(4 / (3 - sqrt 5)) = sqrt(2) / lower.
  double k0;
};
NormEquivalence norm_equivalence_constants();

/// Symmetric PSD square root; eigenvalues in [-1e-12 scale, 0) are clipped
/// to zero, more negative ones throw ValidationError.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a);

/// Wasserstein-2 distance between N(mean1, cov1) and N(mean2, cov2) (Bures).
double w2_gaussian(const Eigen::VectorXd& mean1, const Eigen::MatrixXd& cov1,
                   const Eigen::VectorXd& mean2, const Eigen::MatrixXd& cov2);

/// Same distance with ground cost ||.||_P on (v, x)-stacked 2d vectors.
double w2_gaussian_p(const Eigen::VectorXd& mean1, const Eigen::MatrixXd& cov1,
                     const Eigen::VectorXd& mean2, const Eigen::MatrixXd& cov2);

/// Exact empirical W2 on the line: RMS difference of the sorted samples.
double w2_empirical_1d(std::span<const double> a, std::span<const double> b);

struct DistanceEstimate {
  /// sqrt of the replica mean of ||xi_a - xi_b||_P^2.
  double distance = 0.0;
  double std_error = 0.0;
  double mean_sq = 0.0;
  double mean_sq_std_error = 0.0;
};

/// Streaming per-step accumulator of squared P-distances over replicas.
/// Replicas must be added in a fixed order for bitwise reproducibility.
class DistanceAccumulator {
 public:
  explicit DistanceAccumulator(std::size_t n_steps);
  void add(std::size_t step, double sq_distance);
  void merge(const DistanceAccumulator& other);
  std::vector<DistanceEstimate> result() const;
  std::size_t steps() const { return sum_.size(); }

 private:
  std::vector<double> count_;
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
};

/// Per-step coupling distance between two ensembles shaped [replica][step].
std::vector<DistanceEstimate> coupling_distance(
    const std::vector<std::vector<ChainState>>& traj_a,
    const std::vector<std::vector<ChainState>>& traj_b);

}  // namespace ubu
