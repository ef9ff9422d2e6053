#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ubu {

/// Dense d x d x d real tensor, row-major with the first index slowest, so
/// the mode-1 slice A(i, ., .) is a contiguous d x d row-major block.
class Tensor3 {
 public:
  /// Zero tensor of dimension d (d >= 1).
  explicit Tensor3(std::size_t d);
  /// Takes ownership of d^3 values in row-major order. Throws
  /// ValidationError on a size mismatch or non-finite entry.
  Tensor3(std::size_t d, std::vector<double> values);

  static Tensor3 diagonal(std::span<const double> diag);
  static Tensor3 rank_one(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                          const Eigen::VectorXd& w);

  std::size_t dim() const { return dim_; }
  std::span<const double> values() const { return values_; }

  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[(i * dim_ + j) * dim_ + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return values_[(i * dim_ + j) * dim_ + k];
  }

  /// Mode-1 slice S_i with (S_i)_{jk} = A_{ijk}.
  Eigen::MatrixXd slice(std::size_t i) const;

  /// Mode permutation: result(a0, a1, a2) = A(a[perm[0]], a[perm[1]], a[perm[2]]).
  /// {1, 0, 2} swaps the first two modes.
  Tensor3 permuted(const std::array<int, 3>& perm) const;

  Tensor3 scaled(double s) const;

  /// Sum_{ijk} A_ijk x_i y_j z_k.
  double trilinear(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                   const Eigen::VectorXd& z) const;
  /// Vector with k-th entry Sum_{ij} A_ijk x_i y_j.
  Eigen::VectorXd contract12(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;

 private:
  std::size_t dim_;
  std::vector<double> values_;
};

/// Reads `d` followed by d^3 whitespace-separated reals (row-major).
Tensor3 read_tensor(std::istream& in);
Tensor3 load_tensor(const std::string& path);
void write_tensor(std::ostream& out, const Tensor3& a);

/// Tensor with i.i.d. standard normal entries.
Tensor3 random_tensor(std::size_t d, std::uint64_t seed);

struct NormEstimate {
  enum class Method { exact, power_iteration, brute_force, relation_bound };
  double lower = 0.0;
  double upper = 0.0;
  Method lower_method = Method::power_iteration;
  Method upper_method = Method::relation_bound;
};

struct PowerIterationOptions {
  int restarts = 20;
  int sweeps = 200;
  double tolerance = 1e-10;
  std::uint64_t seed = 0;
};

/// G = Sum_i S_i^T S_i over the mode-1 slices.
Eigen::MatrixXd gram_matrix(const Tensor3& a);

/// Largest eigenvalue of a symmetric PSD matrix: full eigendecomposition
/// for d <= 512, otherwise power iteration to 1e-12. Throws NumericalError
/// with the residual on non-convergence.
double largest_eigenvalue_psd(const Eigen::MatrixXd& g);

/// Exact ||A||_{{1,2}{3}}: square root of the top eigenvalue of the Gram matrix.
double norm_12_3(const Tensor3& a);

/// Exact norm for the pairing that keeps mode `single` (0, 1 or 2) apart and
/// flattens the other two; pair_single_norm(a, 2) == norm_12_3(a).
double pair_single_norm(const Tensor3& a, int single);

/// Certified bracket for ||A||_{{1}{2}{3}}. The lower end is the best value
/// found by alternating rank-one power iteration; the upper end is the
/// smallest of the three exact pair-single norms.
NormEstimate norm_123_bounds(const Tensor3& a, const PowerIterationOptions& opts = {});

/// Spectral norm of every mode-1 slice.
std::vector<double> slice_spectral_norms(const Tensor3& a);

}  // namespace ubu
