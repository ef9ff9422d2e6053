#pragma once

#include <cstdint>

#include "ubu/tensor3.hpp"

namespace ubu {

/// Sample mean with its standard error.
struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::uint64_t samples = 0;
};

struct ChaosResult {
  double exact_mean = 0.0;
  double mc_mean = 0.0;
  double mc_std_error = 0.0;
  double bound = 0.0;
};

/// E g(p) for p ~ N(0, I_d), where g(p) = ||A[p, p, .]||^2, from the
/// pairing formula Sum_{ijk} (A_iik A_jjk + A_ijk^2 + A_ijk A_jik).
double chaos_mean_exact(const Tensor3& a);

/// Monte-Carlo estimate of E g(p). Samples are split into fixed-size
/// chunks, each with its own seed-derived stream, so the result depends only
/// on (n_samples, seed) and not on the worker count.
McEstimate chaos_mean_mc(const Tensor3& a, std::uint64_t n_samples, std::uint64_t seed);

/// 3 d ||A||_{{1,2}{3}}^2, an upper bound on chaos_mean_exact(a).
double chaos_bound(const Tensor3& a);

ChaosResult chaos_report(const Tensor3& a, std::uint64_t n_samples, std::uint64_t seed);

/// E ||v||^4 = c^2 (d^2 + 2d) for v ~ N(0, c I_d).
double v4_moment(double c, int d);

/// Monte-Carlo estimate of E ||v||^4 for v ~ N(0, c I_d).
McEstimate v4_moment_mc(double c, int d, std::uint64_t n_samples, std::uint64_t seed);

/// 3 L1^2 c^2 d.
///
/// This is the dimension-linear fourth-moment bound that only holds for
/// d = 1: for d >= 2 it sits strictly below L1^2 * v4_moment(c, d), so a
/// Hessian-Lipschitz constant alone cannot yield a sqrt(d) local error. Kept
/// so the gap can be reported next to the correct moment.
double erroneous_bound(double l1, double c, int d);

/// 3 (L1s)^2 c^2 d: bound on E ||H'(x)[v, v]||^2 for v ~ N(0, c I_d) under
/// a strongly-Hessian-Lipschitz constant L1s.
double hessian_term_bound(double l1s, double c, int d);

}  // namespace ubu
