#include "ubu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include "ubu/errors.hpp"
#include "ubu/integrator.hpp"

namespace ubu {

Eigen::Matrix2d p_hat() {
  Eigen::Matrix2d p;
  p << 1.0, 1.0, 1.0, 2.0;
  return p;
}

double p_norm_sq(const Eigen::VectorXd& v, const Eigen::VectorXd& x) {
  if (v.size() != x.size()) throw ValidationError("p_norm_sq: v and x dimensions differ");
  return v.squaredNorm() + 2.0 * v.dot(x) + 2.0 * x.squaredNorm();
}

NormEquivalence norm_equivalence_constants() {
  const double s5 = std::sqrt(5.0);
  NormEquivalence k;
  k.lower = std::sqrt((3.0 - s5) / 2.0);
  k.upper = std::sqrt((3.0 + s5) / 2.0);
  k.k0 = std::sqrt(4.0 / (3.0 - s5));
  return k;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw ValidationError("psd_sqrt: matrix is not square");
  if (a.size() == 0) return a;
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericalError("psd_sqrt: eigensolver failed");
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  Eigen::VectorXd roots(eig.eigenvalues().size());
  for (Eigen::Index i = 0; i < roots.size(); ++i) {
    const double lam = eig.eigenvalues()[i];
    if (lam < -1e-12 * scale) {
      std::ostringstream msg;
      msg << "covariance is indefinite (eigenvalue " << lam << ")";
      throw ValidationError(msg.str());
    }
    roots[i] = std::sqrt(std::max(lam, 0.0));
  }
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

double w2_gaussian(const Eigen::VectorXd& mean1, const Eigen::MatrixXd& cov1,
                   const Eigen::VectorXd& mean2, const Eigen::MatrixXd& cov2) {
  const auto d = mean1.size();
  if (mean2.size() != d || cov1.rows() != d || cov1.cols() != d || cov2.rows() != d ||
      cov2.cols() != d) {
    throw ValidationError("w2_gaussian: shape mismatch");
  }
  const Eigen::MatrixXd root2 = psd_sqrt(cov2);
  psd_sqrt(cov1);  // validates cov1
  const Eigen::MatrixXd cross = psd_sqrt(root2 * cov1 * root2);
  const double sq = (mean1 - mean2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * cross.trace();
  return std::sqrt(std::max(sq, 0.0));
}

double w2_gaussian_p(const Eigen::VectorXd& mean1, const Eigen::MatrixXd& cov1,
                     const Eigen::VectorXd& mean2, const Eigen::MatrixXd& cov2) {
  if (mean1.size() % 2 != 0) throw ValidationError("w2_gaussian_p: expected (v, x) stacked vectors");
  const auto d = mean1.size() / 2;
  const Eigen::MatrixXd root =
      Eigen::kroneckerProduct(psd_sqrt(p_hat()), Eigen::MatrixXd::Identity(d, d));
  return w2_gaussian(root * mean1, root * cov1 * root, root * mean2, root * cov2 * root);
}

double w2_empirical_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("w2_empirical_1d: empty sample set");
  if (a.size() != b.size()) throw ValidationError("w2_empirical_1d: sample counts differ");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) sum += (sa[i] - sb[i]) * (sa[i] - sb[i]);
  return std::sqrt(sum / static_cast<double>(sa.size()));
}

DistanceAccumulator::DistanceAccumulator(std::size_t n_steps)
    : count_(n_steps, 0.0), sum_(n_steps, 0.0), sum_sq_(n_steps, 0.0) {}

void DistanceAccumulator::add(std::size_t step, double sq_distance) {
  count_.at(step) += 1.0;
  sum_[step] += sq_distance;
  sum_sq_[step] += sq_distance * sq_distance;
}

void DistanceAccumulator::merge(const DistanceAccumulator& other) {
  if (other.steps() != steps()) throw ValidationError("DistanceAccumulator: step counts differ");
  for (std::size_t n = 0; n < steps(); ++n) {
    count_[n] += other.count_[n];
    sum_[n] += other.sum_[n];
    sum_sq_[n] += other.sum_sq_[n];
  }
}

std::vector<DistanceEstimate> DistanceAccumulator::result() const {
  std::vector<DistanceEstimate> out(steps());
  for (std::size_t n = 0; n < steps(); ++n) {
    const double k = count_[n];
    if (k == 0.0) continue;
    DistanceEstimate& e = out[n];
    e.mean_sq = sum_[n] / k;
    const double var = k > 1.0 ? std::max(0.0, (sum_sq_[n] - k * e.mean_sq * e.mean_sq) / (k - 1.0)) : 0.0;
    e.mean_sq_std_error = std::sqrt(var / k);
    e.distance = std::sqrt(e.mean_sq);
    // Delta method for the square root.
    e.std_error = e.distance > 0.0 ? e.mean_sq_std_error / (2.0 * e.distance) : 0.0;
  }
  return out;
}

std::vector<DistanceEstimate> coupling_distance(
    const std::vector<std::vector<ChainState>>& traj_a,
    const std::vector<std::vector<ChainState>>& traj_b) {
  if (traj_a.size() != traj_b.size() || traj_a.empty()) {
    throw ValidationError("coupling_distance: replica counts differ or are zero");
  }
  const std::size_t steps = traj_a.front().size();
  DistanceAccumulator acc(steps);
  for (std::size_t r = 0; r < traj_a.size(); ++r) {
    if (traj_a[r].size() != steps || traj_b[r].size() != steps) {
      throw ValidationError("coupling_distance: trajectories of replica " + std::to_string(r) +
                            " have mismatched lengths");
    }
    for (std::size_t n = 0; n < steps; ++n) {
      const auto& a = traj_a[r][n];
      const auto& b = traj_b[r][n];
      acc.add(n, p_norm_sq(a.v - b.v, a.x - b.x));
    }
  }
  return acc.result();
}

}  // namespace ubu
