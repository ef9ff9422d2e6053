#include "ubu/models.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "ubu/errors.hpp"

namespace ubu {

namespace {

constexpr int kMaxTensorDim = 64;

void check_dim(const PotentialModel& model, const Vec& x) {
  if (x.size() != model.dim()) {
    throw ValidationError("point has dimension " + std::to_string(x.size()) + ", model has " +
                          std::to_string(model.dim()));
  }
}

// log(1 + exp(t)) without overflow.
double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double log_cosh(double t) {
  const double u = std::abs(t);
  return u + std::log1p(std::exp(-2.0 * u)) - std::log(2.0);
}

}  // namespace

Eigen::MatrixXd QuadraticSpec::hessian() const {
  if (!rotation) return eigenvalues.asDiagonal();
  return *rotation * eigenvalues.asDiagonal() * rotation->transpose();
}

// ---------------------------------------------------------------------------

GaussianModel::GaussianModel(QuadraticSpec spec) : spec_(std::move(spec)) {
  const auto d = spec_.eigenvalues.size();
  if (d == 0) throw ValidationError("gaussian model: empty spectrum");
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lam = spec_.eigenvalues[i];
    if (!(lam > 0.0) || !std::isfinite(lam)) {
      throw ValidationError("gaussian model: eigenvalue " + std::to_string(i) +
                            " is not a positive finite number");
    }
  }
  if (spec_.rotation) {
    const auto& q = *spec_.rotation;
    if (q.rows() != d || q.cols() != d) throw ValidationError("gaussian model: rotation shape");
    const double err = (q.transpose() * q - Eigen::MatrixXd::Identity(d, d)).norm();
    if (err > 1e-10) throw ValidationError("gaussian model: rotation is not orthogonal");
  }
  hessian_ = spec_.hessian();
}

double GaussianModel::value(const Vec& x) const {
  check_dim(*this, x);
  return 0.5 * x.dot(hessian_ * x);
}

Vec GaussianModel::gradient(const Vec& x) const {
  check_dim(*this, x);
  return hessian_ * x;
}

Vec GaussianModel::hessian_vec(const Vec& x, const Vec& w) const {
  check_dim(*this, x);
  return hessian_ * w;
}

std::optional<Vec> GaussianModel::third_bilinear(const Vec& x, const Vec&, const Vec&) const {
  check_dim(*this, x);
  return Vec::Zero(dim());
}

SmoothnessConstants GaussianModel::constants() const {
  SmoothnessConstants c;
  c.m = spec_.eigenvalues.minCoeff();
  c.L = spec_.eigenvalues.maxCoeff();
  c.L1 = 0.0;
  c.L1s = 0.0;
  return c;
}

// ---------------------------------------------------------------------------

ProductModel::ProductModel(ProductPhi, double a, double b, int d) : a_(a), b_(b), d_(d) {
  if (!(a >= 0.0) || !std::isfinite(a)) throw ValidationError("product model: a must be >= 0");
  if (!(b > 0.0) || !std::isfinite(b)) throw ValidationError("product model: b must be > 0");
  if (d < 1) throw ValidationError("product model: d must be >= 1");
}

double ProductModel::phi(double t) const { return 0.5 * t * t + a_ * log_cosh(b_ * t); }
double ProductModel::dphi(double t) const { return t + a_ * b_ * std::tanh(b_ * t); }

double ProductModel::d2phi(double t) const {
  const double th = std::tanh(b_ * t);
  return 1.0 + a_ * b_ * b_ * (1.0 - th * th);
}

double ProductModel::d3phi(double t) const {
  const double th = std::tanh(b_ * t);
  return -2.0 * a_ * b_ * b_ * b_ * (1.0 - th * th) * th;
}

double ProductModel::value(const Vec& x) const {
  check_dim(*this, x);
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += phi(x[i]);
  return s;
}

Vec ProductModel::gradient(const Vec& x) const {
  check_dim(*this, x);
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) g[i] = dphi(x[i]);
  return g;
}

Vec ProductModel::hessian_vec(const Vec& x, const Vec& w) const {
  check_dim(*this, x);
  Vec out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = d2phi(x[i]) * w[i];
  return out;
}

std::optional<Vec> ProductModel::third_bilinear(const Vec& x, const Vec& w1, const Vec& w2) const {
  check_dim(*this, x);
  Vec out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = d3phi(x[i]) * w1[i] * w2[i];
  return out;
}

SmoothnessConstants ProductModel::constants() const {
  SmoothnessConstants c;
  c.m = 1.0;
  c.L = 1.0 + a_ * b_ * b_;
  // max_s sech^2(s) |tanh(s)| = 2 / (3 sqrt 3), attained at tanh^2 = 1/3.
  c.L1 = 4.0 * a_ * b_ * b_ * b_ / (3.0 * std::sqrt(3.0));
  // Diagonal third-derivative tensor: both norms equal max_i |phi'''(x_i)|.
  c.L1s = c.L1;
  return c;
}

// ---------------------------------------------------------------------------

LogisticModel::LogisticModel(RegressionData data) : data_(std::move(data)) {
  const auto n = data_.design.rows();
  const auto d = data_.design.cols();
  if (d == 0) throw ValidationError("logistic model: design matrix has no columns");
  if (data_.labels.size() != n) throw ValidationError("logistic model: label count mismatch");
  if (!(data_.ridge > 0.0) || !std::isfinite(data_.ridge)) {
    throw ValidationError("logistic model: ridge strength must be positive");
  }
  if (!data_.design.allFinite()) throw ValidationError("logistic model: non-finite design entry");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (data_.labels[i] != 1.0 && data_.labels[i] != -1.0) {
      throw ValidationError("logistic model: label on row " + std::to_string(i) +
                            " is not -1 or +1");
    }
  }
  const Eigen::MatrixXd scatter = data_.design.transpose() * data_.design;
  double scatter_norm = 0.0;
  if (n > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scatter, Eigen::EigenvaluesOnly);
    scatter_norm = std::max(0.0, eig.eigenvalues().maxCoeff());
  }
  const double max_row = n > 0 ? data_.design.rowwise().norm().maxCoeff() : 0.0;
  // max_t |l'''(t)| for l(t) = log(1 + e^{-t}).
  const double third_max = 1.0 / (6.0 * std::sqrt(3.0));
  constants_.m = data_.ridge;
  constants_.L = data_.ridge + 0.25 * scatter_norm;
  constants_.L1s = third_max * max_row * scatter_norm;
  constants_.L1 = constants_.L1s;
  constants_.conservative = true;
}

double LogisticModel::value(const Vec& x) const {
  check_dim(*this, x);
  const Vec margins = data_.labels.cwiseProduct(data_.design * x);
  double s = 0.5 * data_.ridge * x.squaredNorm();
  for (Eigen::Index i = 0; i < margins.size(); ++i) s += softplus(-margins[i]);
  return s;
}

Vec LogisticModel::gradient(const Vec& x) const {
  check_dim(*this, x);
  const Vec margins = data_.labels.cwiseProduct(data_.design * x);
  Vec weights(margins.size());
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    weights[i] = data_.labels[i] * (sigmoid(margins[i]) - 1.0);
  }
  return data_.design.transpose() * weights + data_.ridge * x;
}

Vec LogisticModel::hessian_vec(const Vec& x, const Vec& w) const {
  check_dim(*this, x);
  const Vec margins = data_.labels.cwiseProduct(data_.design * x);
  const Vec aw = data_.design * w;
  Vec weights(margins.size());
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    const double s = sigmoid(margins[i]);
    weights[i] = s * (1.0 - s) * aw[i];
  }
  return data_.design.transpose() * weights + data_.ridge * w;
}

std::optional<Vec> LogisticModel::third_bilinear(const Vec& x, const Vec& w1, const Vec& w2) const {
  check_dim(*this, x);
  const Vec margins = data_.labels.cwiseProduct(data_.design * x);
  const Vec a1 = data_.design * w1;
  const Vec a2 = data_.design * w2;
  Vec weights(margins.size());
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    const double s = sigmoid(margins[i]);
    weights[i] = data_.labels[i] * s * (1.0 - s) * (1.0 - 2.0 * s) * a1[i] * a2[i];
  }
  return data_.design.transpose() * weights;
}

// ---------------------------------------------------------------------------

ModelPtr make_gaussian(QuadraticSpec spec) { return std::make_shared<GaussianModel>(std::move(spec)); }

ModelPtr make_product(ProductPhi phi, double a, double b, int d) {
  return std::make_shared<ProductModel>(phi, a, b, d);
}

ModelPtr make_logistic(RegressionData data) { return std::make_shared<LogisticModel>(std::move(data)); }

RegressionData read_regression_csv(const std::string& path, char delimiter, double ridge) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open regression file " + path);
  auto split = [delimiter](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, delimiter)) out.push_back(cell);
    if (!line.empty() && line.back() == delimiter) out.emplace_back();
    return out;
  };
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };

  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ": missing header row");
  const auto header = split(line);
  if (header.size() < 2 || trim(header[0]) != "label") {
    throw ValidationError(path + ": header must be 'label' followed by feature columns");
  }
  const std::size_t d = header.size() - 1;

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != d + 1) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(d + 1) + " columns, got " + std::to_string(cells.size()));
    }
    std::vector<double> values(d + 1);
    for (std::size_t c = 0; c <= d; ++c) {
      const std::string cell = trim(cells[c]);
      try {
        std::size_t used = 0;
        values[c] = std::stod(cell, &used);
        if (used != cell.size() || !std::isfinite(values[c])) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ValidationError(path + ":" + std::to_string(line_no) + ": bad number '" + cell +
                              "' in column " + std::to_string(c + 1));
      }
    }
    double label = values[0];
    if (label == 0.0) label = -1.0;
    if (label != 1.0 && label != -1.0) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": label must be 0/1 or -1/+1");
    }
    labels.push_back(label);
    values.erase(values.begin());
    rows.push_back(std::move(values));
  }

  RegressionData data;
  data.ridge = ridge;
  data.design.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  data.labels.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    data.labels[static_cast<Eigen::Index>(r)] = labels[r];
    for (std::size_t c = 0; c < d; ++c) {
      data.design(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return data;
}

Tensor3 hessian_tensor(const PotentialModel& model, const Vec& x, bool force_finite_difference) {
  const int d = model.dim();
  if (d > kMaxTensorDim) {
    throw ValidationError("hessian_tensor: dimension " + std::to_string(d) +
                          " exceeds the dense limit of " + std::to_string(kMaxTensorDim));
  }
  check_dim(model, x);
  const auto n = static_cast<std::size_t>(d);
  Tensor3 out(n);
  const Vec zero = Vec::Zero(d);
  if (!force_finite_difference && model.third_bilinear(x, zero, zero)) {
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j <= i; ++j) {
        const Vec col = *model.third_bilinear(x, Vec::Unit(d, i), Vec::Unit(d, j));
        for (int k = 0; k < d; ++k) {
          out(i, j, k) = col[k];
          out(j, i, k) = col[k];
        }
      }
    }
    return out;
  }
  const double step = std::cbrt(std::numeric_limits<double>::epsilon()) * (1.0 + x.norm());
  for (int k = 0; k < d; ++k) {
    const Vec plus = x + step * Vec::Unit(d, k);
    const Vec minus = x - step * Vec::Unit(d, k);
    for (int j = 0; j < d; ++j) {
      const Vec diff =
          (model.hessian_vec(plus, Vec::Unit(d, j)) - model.hessian_vec(minus, Vec::Unit(d, j))) /
          (2.0 * step);
      for (int i = 0; i < d; ++i) out(i, j, k) = diff[i];
    }
  }
  for (int k = 0; k < d; ++k) {
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < i; ++j) {
        const double avg = 0.5 * (out(i, j, k) + out(j, i, k));
        out(i, j, k) = avg;
        out(j, i, k) = avg;
      }
    }
  }
  return out;
}

}  // namespace ubu
