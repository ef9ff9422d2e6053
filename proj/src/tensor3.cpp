#include "ubu/tensor3.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "ubu/errors.hpp"
#include "ubu/random.hpp"

namespace ubu {

namespace {

constexpr std::size_t kDenseEigenLimit = 512;

std::size_t checked_cube(std::size_t d) {
  if (d == 0) throw ValidationError("tensor dimension must be >= 1");
  return d * d * d;
}

}  // namespace

Tensor3::Tensor3(std::size_t d) : dim_(d), values_(checked_cube(d), 0.0) {}

Tensor3::Tensor3(std::size_t d, std::vector<double> values)
    : dim_(d), values_(std::move(values)) {
  if (values_.size() != checked_cube(d)) {
    throw ValidationError("tensor of dimension " + std::to_string(d) + " needs " +
                          std::to_string(checked_cube(d)) + " entries, got " +
                          std::to_string(values_.size()));
  }
  for (std::size_t n = 0; n < values_.size(); ++n) {
    if (!std::isfinite(values_[n])) {
      throw ValidationError("non-finite tensor entry at flat index " + std::to_string(n));
    }
  }
}

Tensor3 Tensor3::diagonal(std::span<const double> diag) {
  Tensor3 a(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) a(i, i, i) = diag[i];
  return a;
}

Tensor3 Tensor3::rank_one(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                          const Eigen::VectorXd& w) {
  const auto d = static_cast<std::size_t>(u.size());
  if (v.size() != u.size() || w.size() != u.size()) {
    throw ValidationError("rank_one: factor dimensions differ");
  }
  Tensor3 a(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) a(i, j, k) = u[i] * v[j] * w[k];
  return a;
}

Eigen::MatrixXd Tensor3::slice(std::size_t i) const {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto d = static_cast<Eigen::Index>(dim_);
  return Eigen::Map<const RowMajor>(values_.data() + i * dim_ * dim_, d, d);
}

Tensor3 Tensor3::permuted(const std::array<int, 3>& perm) const {
  Tensor3 out(dim_);
  std::array<std::size_t, 3> idx{};
  for (idx[0] = 0; idx[0] < dim_; ++idx[0])
    for (idx[1] = 0; idx[1] < dim_; ++idx[1])
      for (idx[2] = 0; idx[2] < dim_; ++idx[2])
        out(idx[0], idx[1], idx[2]) = (*this)(idx[perm[0]], idx[perm[1]], idx[perm[2]]);
  return out;
}

Tensor3 Tensor3::scaled(double s) const {
  std::vector<double> v(values_);
  for (double& x : v) x *= s;
  return Tensor3(dim_, std::move(v));
}

double Tensor3::trilinear(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& z) const {
  return contract12(x, y).dot(z);
}

Eigen::VectorXd Tensor3::contract12(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
  const auto d = static_cast<Eigen::Index>(dim_);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (x[i] == 0.0) continue;
    out.noalias() += x[i] * (slice(static_cast<std::size_t>(i)).transpose() * y);
  }
  return out;
}

Tensor3 read_tensor(std::istream& in) {
  long long d = 0;
  if (!(in >> d) || d < 1) throw ValidationError("tensor file: first token must be d >= 1");
  const auto n = static_cast<std::size_t>(d) * static_cast<std::size_t>(d) * static_cast<std::size_t>(d);
  std::vector<double> values;
  values.reserve(n);
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ValidationError("tensor file: bad number '" + token + "' at entry " +
                            std::to_string(values.size()));
    }
  }
  return Tensor3(static_cast<std::size_t>(d), std::move(values));
}

Tensor3 load_tensor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open tensor file " + path);
  return read_tensor(in);
}

void write_tensor(std::ostream& out, const Tensor3& a) {
  out << a.dim() << '\n';
  out.precision(17);
  const auto d = a.dim();
  for (std::size_t n = 0; n < a.values().size(); ++n) {
    out << a.values()[n] << ((n + 1) % d == 0 ? '\n' : ' ');
  }
}

Tensor3 random_tensor(std::size_t d, std::uint64_t seed) {
  auto engine = make_engine(seed, 0);
  std::normal_distribution<double> normal;
  std::vector<double> v(checked_cube(d));
  for (double& x : v) x = normal(engine);
  return Tensor3(d, std::move(v));
}

Eigen::MatrixXd gram_matrix(const Tensor3& a) {
  const auto d = static_cast<Eigen::Index>(a.dim());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const Eigen::MatrixXd s = a.slice(i);
    g.selfadjointView<Eigen::Lower>().rankUpdate(s.transpose());
  }
  return g.selfadjointView<Eigen::Lower>();
}

double largest_eigenvalue_psd(const Eigen::MatrixXd& g) {
  const auto d = g.rows();
  if (d == 0) return 0.0;
  if (static_cast<std::size_t>(d) <= kDenseEigenLimit) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) {
      throw NumericalError("symmetric eigensolver did not converge");
    }
    return std::max(0.0, eig.eigenvalues()[d - 1]);
  }
  Eigen::VectorXd q = Eigen::VectorXd::Ones(d) / std::sqrt(static_cast<double>(d));
  double lambda = 0.0;
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 100000; ++it) {
    Eigen::VectorXd next = g * q;
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    next /= norm;
    const double updated = next.dot(g * next);
    residual = (g * next - updated * next).norm();
    const bool converged = std::abs(updated - lambda) <= 1e-12 * std::max(1.0, updated);
    lambda = updated;
    q = next;
    if (converged) return std::max(0.0, lambda);
  }
  throw NumericalError("power iteration on Gram matrix did not converge; residual " +
                       std::to_string(residual));
}

double pair_single_norm(const Tensor3& a, int single) {
  if (single < 0 || single > 2) throw ValidationError("pair_single_norm: mode must be 0, 1 or 2");
  if (single == 2) return std::sqrt(largest_eigenvalue_psd(gram_matrix(a)));
  // Move the separated mode to the last position and reuse the slice Gram.
  const std::array<int, 3> perm = single == 0 ? std::array<int, 3>{1, 2, 0}
                                               : std::array<int, 3>{0, 2, 1};
  return std::sqrt(largest_eigenvalue_psd(gram_matrix(a.permuted(perm))));
}

double norm_12_3(const Tensor3& a) { return pair_single_norm(a, 2); }

NormEstimate norm_123_bounds(const Tensor3& a, const PowerIterationOptions& opts) {
  const auto d = static_cast<Eigen::Index>(a.dim());
  NormEstimate est;
  est.upper = std::min({pair_single_norm(a, 0), pair_single_norm(a, 1), pair_single_norm(a, 2)});
  est.upper_method = NormEstimate::Method::relation_bound;
  est.lower_method = NormEstimate::Method::power_iteration;
  if (est.upper == 0.0) {
    est.lower = 0.0;
    return est;
  }

  // Contractions leaving one mode free.
  auto free_first = [&](const Eigen::VectorXd& y, const Eigen::VectorXd& z) {
    Eigen::VectorXd out(d);
    for (Eigen::Index i = 0; i < d; ++i) out[i] = y.dot(a.slice(static_cast<std::size_t>(i)) * z);
    return out;
  };
  auto free_second = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& z) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i = 0; i < d; ++i) out.noalias() += x[i] * (a.slice(static_cast<std::size_t>(i)) * z);
    return out;
  };

  double best = 0.0;
  for (int restart = 0; restart < opts.restarts; ++restart) {
    auto engine = make_engine(opts.seed, static_cast<std::uint64_t>(restart));
    std::normal_distribution<double> normal;
    Eigen::VectorXd x(d), y(d), z(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      x[i] = normal(engine);
      y[i] = normal(engine);
      z[i] = normal(engine);
    }
    x.normalize();
    y.normalize();
    z.normalize();
    double objective = -1.0;
    bool ok = true;
    for (int sweep = 0; sweep < opts.sweeps; ++sweep) {
      Eigen::VectorXd nx = free_first(y, z);
      if (nx.norm() == 0.0) break;
      x = nx.normalized();
      Eigen::VectorXd ny = free_second(x, z);
      if (ny.norm() == 0.0) break;
      y = ny.normalized();
      Eigen::VectorXd nz = a.contract12(x, y);
      const double value = nz.norm();
      if (!std::isfinite(value)) {
        ok = false;
        break;
      }
      if (value == 0.0) break;
      z = nz / value;
      const bool converged = std::abs(value - objective) <= opts.tolerance * std::max(1.0, value);
      objective = value;
      if (converged) break;
    }
    // objective = A(x, y, z) with unit x, y, z: always a valid lower bound.
    if (ok && objective > best) best = objective;
  }
  est.lower = std::min(best, est.upper);
  return est;
}

std::vector<double> slice_spectral_norms(const Tensor3& a) {
  std::vector<double> out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.slice(i));
    out[i] = svd.singularValues()[0];
  }
  return out;
}

}  // namespace ubu
