#include "ubu/gaussian_chaos.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ubu/errors.hpp"
#include "ubu/parallel.hpp"
#include "ubu/random.hpp"

namespace ubu {

namespace {

constexpr std::uint64_t kChunk = 1 << 16;

struct Moments {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    n += 1.0;
    const double delta = x - mean;
    mean += delta / n;
    m2 += delta * (x - mean);
  }

  void merge(const Moments& o) {
    if (o.n == 0.0) return;
    const double total = n + o.n;
    const double delta = o.mean - mean;
    mean += delta * o.n / total;
    m2 += o.m2 + delta * delta * n * o.n / total;
    n = total;
  }
};

// Draws n_samples values of sample(engine) in seed-derived chunks and
// reduces them in chunk order.
McEstimate chunked_mc(std::uint64_t n_samples, std::uint64_t seed,
                      const std::function<double(Engine&)>& sample) {
  if (n_samples < 2) throw ValidationError("Monte-Carlo estimate needs at least 2 samples");
  const std::uint64_t chunks = (n_samples + kChunk - 1) / kChunk;
  std::vector<Moments> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    auto engine = make_engine(seed, c);
    const std::uint64_t begin = c * kChunk;
    const std::uint64_t end = std::min(n_samples, begin + kChunk);
    Moments m;
    for (std::uint64_t s = begin; s < end; ++s) m.push(sample(engine));
    partial[c] = m;
  });
  Moments total;
  for (const auto& m : partial) total.merge(m);
  McEstimate out;
  out.mean = total.mean;
  out.samples = n_samples;
  out.std_error = std::sqrt(total.m2 / (total.n - 1.0) / total.n);
  return out;
}

void check_c_d(double c, int d) {
  if (!(c > 0.0) || !std::isfinite(c)) throw ValidationError("c must be positive");
  if (d < 1) throw ValidationError("d must be >= 1");
}

}  // namespace

double chaos_mean_exact(const Tensor3& a) {
  const std::size_t d = a.dim();
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double trace_k = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace_k += a(i, i, k);
    total += trace_k * trace_k;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        total += a(i, j, k) * (a(i, j, k) + a(j, i, k));
      }
    }
  }
  return total;
}

McEstimate chaos_mean_mc(const Tensor3& a, std::uint64_t n_samples, std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(a.dim());
  return chunked_mc(n_samples, seed, [&](Engine& engine) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd p(d);
    for (Eigen::Index i = 0; i < d; ++i) p[i] = normal(engine);
    return a.contract12(p, p).squaredNorm();
  });
}

double chaos_bound(const Tensor3& a) {
  const double n = norm_12_3(a);
  return 3.0 * static_cast<double>(a.dim()) * n * n;
}

ChaosResult chaos_report(const Tensor3& a, std::uint64_t n_samples, std::uint64_t seed) {
  ChaosResult r;
  r.exact_mean = chaos_mean_exact(a);
  r.bound = chaos_bound(a);
  const auto mc = chaos_mean_mc(a, n_samples, seed);
  r.mc_mean = mc.mean;
  r.mc_std_error = mc.std_error;
  return r;
}

double v4_moment(double c, int d) {
  check_c_d(c, d);
  const double dd = d;
  return c * c * (dd * dd + 2.0 * dd);
}

McEstimate v4_moment_mc(double c, int d, std::uint64_t n_samples, std::uint64_t seed) {
  check_c_d(c, d);
  const double scale = std::sqrt(c);
  return chunked_mc(n_samples, seed, [&](Engine& engine) {
    std::normal_distribution<double> normal;
    double sq = 0.0;
    for (int i = 0; i < d; ++i) {
      const double v = scale * normal(engine);
      sq += v * v;
    }
    return sq * sq;
  });
}

double erroneous_bound(double l1, double c, int d) {
  check_c_d(c, d);
  if (!(l1 >= 0.0)) throw ValidationError("L1 must be nonnegative");
  return 3.0 * l1 * l1 * c * c * d;
}

double hessian_term_bound(double l1s, double c, int d) {
  check_c_d(c, d);
  if (!(l1s >= 0.0)) throw ValidationError("L1s must be nonnegative");
  return 3.0 * l1s * l1s * c * c * d;
}

}  // namespace ubu
