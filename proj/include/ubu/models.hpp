#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "ubu/tensor3.hpp"

namespace ubu {

using Vec = Eigen::VectorXd;

/// Smoothness constants of a strongly convex potential:
///   m I <= H(x) <= L I,
///   ||H'(x)[w1, w2]|| <= L1 ||w1|| ||w2||,
///   ||H'(x)||_{{1,2}{3}} <= L1s.
struct SmoothnessConstants {
  double m = 1.0;
  double L = 1.0;
  double L1 = 0.0;
  double L1s = 0.0;
  /// L1s was taken as sqrt(d) * L1 rather than derived for the model.
  bool l1s_fallback = false;
  /// L1s is a valid but loose bound (e.g. logistic regression).
  bool conservative = false;
};

/// Target potential f on R^d.
class PotentialModel {
 public:
  virtual ~PotentialModel() = default;

  virtual int dim() const = 0;
  virtual std::string name() const = 0;
  virtual double value(const Vec& x) const = 0;
  virtual Vec gradient(const Vec& x) const = 0;
  virtual Vec hessian_vec(const Vec& x, const Vec& w) const = 0;
  /// H'(x)[w1, w2]; nullopt when not analytically available.
  virtual std::optional<Vec> third_bilinear(const Vec& x, const Vec& w1, const Vec& w2) const {
    (void)x, (void)w1, (void)w2;
    return std::nullopt;
  }
  virtual SmoothnessConstants constants() const = 0;
};

using ModelPtr = std::shared_ptr<const PotentialModel>;

struct QuadraticSpec {
  Vec eigenvalues;
  /// Orthogonal Q with H = Q diag(eigenvalues) Q^T; identity when empty.
  std::optional<Eigen::MatrixXd> rotation;

  Eigen::MatrixXd hessian() const;
};

/// f(x) = x^T H x / 2.
class GaussianModel final : public PotentialModel {
 public:
  explicit GaussianModel(QuadraticSpec spec);

  int dim() const override { return static_cast<int>(spec_.eigenvalues.size()); }
  std::string name() const override { return "gaussian"; }
  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  Vec hessian_vec(const Vec& x, const Vec& w) const override;
  std::optional<Vec> third_bilinear(const Vec& x, const Vec& w1, const Vec& w2) const override;
  SmoothnessConstants constants() const override;

  const QuadraticSpec& spec() const { return spec_; }
  const Eigen::MatrixXd& hessian() const { return hessian_; }

 private:
  QuadraticSpec spec_;
  Eigen::MatrixXd hessian_;
};

enum class ProductPhi { quadratic_logcosh };

/// f(x) = Sum_i phi(x_i) with phi(t) = t^2/2 + a log cosh(b t).
class ProductModel final : public PotentialModel {
 public:
  ProductModel(ProductPhi phi, double a, double b, int d);

  int dim() const override { return d_; }
  std::string name() const override { return "product"; }
  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  Vec hessian_vec(const Vec& x, const Vec& w) const override;
  std::optional<Vec> third_bilinear(const Vec& x, const Vec& w1, const Vec& w2) const override;
  SmoothnessConstants constants() const override;

  double phi(double t) const;
  double dphi(double t) const;
  double d2phi(double t) const;
  double d3phi(double t) const;

 private:
  double a_;
  double b_;
  int d_;
};

/// Binary logistic regression data: rows a_i of `design`, labels y_i in
/// {-1, +1}, ridge strength lambda > 0. Zero rows is allowed.
struct RegressionData {
  Eigen::MatrixXd design;
  Vec labels;
  double ridge = 1.0;
};

/// f(x) = Sum_i log(1 + exp(-y_i a_i^T x)) + lambda ||x||^2 / 2.
class LogisticModel final : public PotentialModel {
 public:
  explicit LogisticModel(RegressionData data);

  int dim() const override { return static_cast<int>(data_.design.cols()); }
  std::string name() const override { return "logistic"; }
  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  Vec hessian_vec(const Vec& x, const Vec& w) const override;
  std::optional<Vec> third_bilinear(const Vec& x, const Vec& w1, const Vec& w2) const override;
  SmoothnessConstants constants() const override { return constants_; }

 private:
  RegressionData data_;
  SmoothnessConstants constants_;
};

ModelPtr make_gaussian(QuadraticSpec spec);
ModelPtr make_product(ProductPhi phi, double a, double b, int d);
ModelPtr make_logistic(RegressionData data);

/// Reads `label, x1..xd` rows after a header line. Labels 0/1 map to -1/+1;
/// -1/+1 are accepted as is. Malformed rows throw ValidationError naming the
/// line number.
RegressionData read_regression_csv(const std::string& path, char delimiter, double ridge);

/// Materializes H'(x) as a dense tensor with entries A_ijk = H'(x)[e_i, e_j]_k.
/// Uses third_bilinear when available (unless force_finite_difference), else
/// central differences of hessian_vec with step cbrt(eps) (1 + ||x||). d <= 64.
Tensor3 hessian_tensor(const PotentialModel& model, const Vec& x,
                       bool force_finite_difference = false);

/// Forwards to a wrapped model and counts gradient evaluations.
class CountingModel final : public PotentialModel {
 public:
  explicit CountingModel(ModelPtr inner) : inner_(std::move(inner)) {}

  int dim() const override { return inner_->dim(); }
  std::string name() const override { return inner_->name(); }
  double value(const Vec& x) const override { return inner_->value(x); }
  Vec gradient(const Vec& x) const override {
    ++gradient_calls_;
    return inner_->gradient(x);
  }
  Vec hessian_vec(const Vec& x, const Vec& w) const override { return inner_->hessian_vec(x, w); }
  std::optional<Vec> third_bilinear(const Vec& x, const Vec& w1, const Vec& w2) const override {
    return inner_->third_bilinear(x, w1, w2);
  }
  SmoothnessConstants constants() const override { return inner_->constants(); }

  long gradient_calls() const { return gradient_calls_.load(); }

 private:
  ModelPtr inner_;
  mutable std::atomic<long> gradient_calls_{0};
};

}  // namespace ubu
