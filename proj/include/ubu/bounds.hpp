#pragma once

#include "json.hpp"

namespace ubu {

/// Absolute constants of the corrected UBU local-error estimate.
double k0_constant();  // sqrt(4 / (3 - sqrt 5))
double k1_constant();  // sqrt(3) / 12
double k2_constant();  // sqrt((3 + sqrt 5) / 2) / 24

struct LocalErrorConstants {
  double C0 = 0.0;
  double C1 = 0.0;
  double C2 = 0.0;
};

/// Constants for UBU with gamma = 2, h <= 2 and order p = 2:
///   C0 = K0 (3 + 2 c L)
///   C1 = K1 c^{3/2} L d^{1/2}
///   C2 = K2 ((1 + 4 sqrt 3) c^2 L^{3/2} + (3 + sqrt(42)/2) c^{3/2} L
///            + 6 c L^{1/2} + sqrt 3 c^2 L1s) d^{1/2}
LocalErrorConstants theorem25_constants(double c, double L, double L1s, int d);

struct BoundConstants {
  double C0 = 0.0;
  double C1 = 0.0;
  double C2 = 0.0;
  int p = 2;
  /// Contraction rate: rho_h <= (1 - r h)^2.
  double r = 0.0;
  double h = 0.0;
  /// L1s was a fallback or conservative bound.
  bool conservative = false;

  static BoundConstants from(const LocalErrorConstants& k, double r, double h, bool conservative);
};

/// Rejects parameters outside gamma = 2, 0 < h <= 2 with ValidationError.
void check_regime(double gamma, double h);

/// R_h = (1 - sqrt((1 - r h)^2 + C0 h^2)) / h. Throws NumericalError when
/// R_h <= 0, i.e. the step is too large for a contraction-dominated bound.
double r_h(double r, double C0, double h);

/// Largest h with R_h > 0 (open end of the admissible interval), capped at 2.
double max_feasible_step(double r, double C0);

/// (sqrt 2 C1 / sqrt R_h + C2 / R_h) h^p.
double bias_term(double h, const BoundConstants& k);

/// (1 - h R_h)^n W0 + bias_term(h).
double wasserstein_bound(long n, double h, double w0, const BoundConstants& k);

struct LocalErrorBudget {
  double alpha = 0.0;  // C1 h^{p + 1/2}
  double beta = 0.0;   // C2 h^{p + 1}
  double total() const { return alpha + beta; }
};
LocalErrorBudget local_error_budget(double h, const BoundConstants& k);

struct ModelConstantsForBound {
  double c = 1.0;
  double L = 1.0;
  double L1s = 0.0;
};

struct StepsToEps {
  double h_star = 0.0;
  long n_star = 0;
  double bias = 0.0;
  double R_h = 0.0;
  /// False when even the largest admissible step meets the bias target, so
  /// h_star sits at the admissible cap instead of the bias constraint.
  bool bias_limited = true;
};

/// Largest h whose bias term is <= eps/2, then the smallest n whose
/// transient (1 - h R_h)^n W0 is <= eps/2.
StepsToEps steps_to_eps(double eps, int d, const ModelConstantsForBound& model, double w0,
                        double r);

/// Audit record echoing every input next to the evaluated bound.
nlohmann::json bound_report(long n, double h, double w0, const BoundConstants& k);

}  // namespace ubu
