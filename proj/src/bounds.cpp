#include "ubu/bounds.hpp"

#include <cmath>
#include <algorithm>
#include <limits>
#include <sstream>

#include "ubu/errors.hpp"

namespace ubu {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string(name) + " must be positive");
}

void require_nonnegative(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(std::string(name) + " must be nonnegative");
}

}  // namespace

double k0_constant() { return std::sqrt(4.0 / (3.0 - std::sqrt(5.0))); }
double k1_constant() { return std::sqrt(3.0) / 12.0; }
double k2_constant() { return std::sqrt((3.0 + std::sqrt(5.0)) / 2.0) / 24.0; }

LocalErrorConstants theorem25_constants(double c, double L, double L1s, int d) {
  require_positive(c, "c");
  require_positive(L, "L");
  require_nonnegative(L1s, "L1s");
  if (d < 1) throw ValidationError("d must be >= 1");
  const double sqrt_d = std::sqrt(static_cast<double>(d));
  const double s3 = std::sqrt(3.0);
  LocalErrorConstants k;
  k.C0 = k0_constant() * (3.0 + 2.0 * c * L);
  k.C1 = k1_constant() * std::pow(c, 1.5) * L * sqrt_d;
  k.C2 = k2_constant() *
         ((1.0 + 4.0 * s3) * c * c * std::pow(L, 1.5) +
          (3.0 + std::sqrt(42.0) / 2.0) * std::pow(c, 1.5) * L + 6.0 * c * std::sqrt(L) +
          s3 * c * c * L1s) *
         sqrt_d;
  return k;
}

BoundConstants BoundConstants::from(const LocalErrorConstants& k, double r, double h,
                                    bool conservative) {
  BoundConstants b;
  b.C0 = k.C0;
  b.C1 = k.C1;
  b.C2 = k.C2;
  b.r = r;
  b.h = h;
  b.conservative = conservative;
  return b;
}

void check_regime(double gamma, double h) {
  if (gamma != 2.0) {
    std::ostringstream msg;
    msg << "the UBU local-error constants are only defined for gamma = 2 (got " << gamma << ")";
    throw ValidationError(msg.str());
  }
  if (!(h > 0.0) || h > 2.0) {
    std::ostringstream msg;
    msg << "the UBU local-error constants are only defined for 0 < h <= 2 (got " << h << ")";
    throw ValidationError(msg.str());
  }
}

double r_h(double r, double C0, double h) {
  require_positive(r, "r");
  require_nonnegative(C0, "C0");
  require_positive(h, "h");
  if (r * h >= 1.0) throw ValidationError("r_h requires r h < 1");
  if (C0 == 0.0) return r;
  const double one_minus = 1.0 - r * h;
  const double inside = one_minus * one_minus + C0 * h * h;
  const double value = (1.0 - std::sqrt(inside)) / h;
  if (!(value > 0.0)) {
    std::ostringstream msg;
    msg << "step too large for a contraction-dominated bound: R_h = " << value << " at r = " << r
        << ", C0 = " << C0 << ", h = " << h;
    throw NumericalError(msg.str());
  }
  return value;
}

double max_feasible_step(double r, double C0) {
  require_positive(r, "r");
  require_nonnegative(C0, "C0");
  // (1 - r h)^2 + C0 h^2 < 1  <=>  h < 2 r / (r^2 + C0); also r h < 1.
  return std::min({2.0, 2.0 * r / (r * r + C0), 1.0 / r});
}

double bias_term(double h, const BoundConstants& k) {
  const double R = r_h(k.r, k.C0, h);
  return (std::sqrt(2.0) * k.C1 / std::sqrt(R) + k.C2 / R) * std::pow(h, k.p);
}

double wasserstein_bound(long n, double h, double w0, const BoundConstants& k) {
  if (n < 0) throw ValidationError("step count must be nonnegative");
  require_nonnegative(w0, "W0");
  const double R = r_h(k.r, k.C0, h);
  return std::pow(1.0 - h * R, static_cast<double>(n)) * w0 + bias_term(h, k);
}

LocalErrorBudget local_error_budget(double h, const BoundConstants& k) {
  require_positive(h, "h");
  LocalErrorBudget b;
  b.alpha = k.C1 * std::pow(h, k.p + 0.5);
  b.beta = k.C2 * std::pow(h, k.p + 1.0);
  return b;
}

StepsToEps steps_to_eps(double eps, int d, const ModelConstantsForBound& model, double w0,
                        double r) {
  require_positive(eps, "eps");
  require_nonnegative(w0, "W0");
  const LocalErrorConstants lc = theorem25_constants(model.c, model.L, model.L1s, d);
  BoundConstants k = BoundConstants::from(lc, r, 0.0, false);
  const double target = 0.5 * eps;
  const double cap = max_feasible_step(r, lc.C0);
  const double h_top = cap < 2.0 ? cap * (1.0 - 1e-9) : cap;

  StepsToEps out;
  auto bias_at = [&](double h) {
    try {
      return bias_term(h, k);
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  if (bias_at(h_top) <= target) {
    out.h_star = h_top;
    out.bias_limited = false;
  } else {
    double lo = 0.0;
    double hi = h_top;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (bias_at(mid) <= target ? lo : hi) = mid;
    }
    if (!(lo > 0.0)) throw NumericalError("steps_to_eps: no admissible step meets the bias target");
    out.h_star = lo;
  }
  out.R_h = r_h(r, lc.C0, out.h_star);
  out.bias = bias_term(out.h_star, k);
  if (w0 > target) {
    const double contraction = 1.0 - out.h_star * out.R_h;
    out.n_star = static_cast<long>(std::ceil(std::log(target / w0) / std::log(contraction)));
  }
  return out;
}

nlohmann::json bound_report(long n, double h, double w0, const BoundConstants& k) {
  nlohmann::json j;
  j["inputs"] = {{"n", n}, {"h", h}, {"W0", w0}, {"C0", k.C0}, {"C1", k.C1}, {"C2", k.C2},
                 {"p", k.p}, {"r", k.r}, {"conservative", k.conservative}};
  const double R = r_h(k.r, k.C0, h);
  const double bias = bias_term(h, k);
  j["R_h"] = R;
  j["contraction_factor"] = 1.0 - h * R;
  j["bias_term"] = bias;
  j["transient_term"] = wasserstein_bound(n, h, w0, k) - bias;
  j["bound"] = wasserstein_bound(n, h, w0, k);
  return j;
}

}  // namespace ubu
