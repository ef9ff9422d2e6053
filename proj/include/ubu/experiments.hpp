#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ubu/integrator.hpp"
#include "ubu/metrics.hpp"
#include "ubu/models.hpp"

namespace ubu {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Configuration and records

struct ModelConfig {
  /// gaussian | product | logistic
  std::string type = "gaussian";
  /// Gaussian Hessian spectrum; when empty, d values evenly spaced in
  /// [spectrum_min, spectrum_max].
  std::vector<double> spectrum;
  double spectrum_min = 1.0;
  double spectrum_max = 4.0;
  /// Product target phi(t) = t^2/2 + a log cosh(b t).
  double a = 1.0;
  double b = 1.0;
  /// Logistic regression CSV.
  std::string data_path;
  char delimiter = ',';
  double ridge = 1.0;
};

ModelPtr build_model(const ModelConfig& config, int d);

struct ExperimentConfig {
  std::string kind;
  ModelConfig model;
  double gamma = 2.0;
  double c_bar = 1.0;
  std::vector<double> h_grid;
  std::vector<int> d_grid;
  /// Integration horizon of the strong-order scan.
  double horizon = 1.0;
  /// Step count for contraction and bound-comparison runs.
  long n_steps = 500;
  int n_replicas = 64;
  std::uint64_t seed = 0;
  /// Reference step = finest grid step / 2^ref_levels.
  int ref_levels = 3;
  /// Contraction rate; 0 means estimate it.
  double r = 0.0;
  /// Initial distance to stationarity; unset means exact Gaussian W2.
  std::optional<double> w0;
  /// Chain B starts at chain A's point shifted by this amount in every x
  /// coordinate (contraction); point-mass start at x = offset (bounds).
  double init_offset = 2.0;
  /// Plateau averaging window (time units); 0 means 10 / r.
  double window_time = 0.0;
  /// Number of n values reported by bound_compare.
  int n_schedule = 16;
  std::string output_dir;

  void validate() const;
  nlohmann::json to_json() const;
};

/// One CSV row. Unset numeric fields are written as empty cells.
struct ResultRecord {
  std::string kind;
  std::string statistic;
  double h = kNaN;
  int d = 0;
  long n = -1;
  double value = kNaN;
  double std_error = kNaN;
  double slope = kNaN;
  double slope_std_error = kNaN;
  double theory = kNaN;
  double wall_clock = 0.0;
  std::uint64_t seed = 0;
};

/// Column order of every experiment CSV.
const std::vector<std::string>& csv_header();
std::string csv_row(const ResultRecord& r);
void write_csv(const std::string& path, const std::vector<ResultRecord>& records);

/// Writes <dir>/<kind>.csv and <dir>/<kind>.json (config, seed, summary).
/// Returns the CSV path.
std::string persist(const ExperimentConfig& config, const std::vector<ResultRecord>& records,
                    const nlohmann::json& summary);

// ---------------------------------------------------------------------------
// Fitting

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double std_error = 0.0;
  double r_squared = 1.0;
  /// 95% confidence interval for the slope (Student t, n - 2 dof).
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares y = intercept + slope x. Needs >= 3 points and
/// two distinct x values.
LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y);

/// OLS on (log x, log y). Needs >= 3 points with positive coordinates.
LinearFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points);

// ---------------------------------------------------------------------------
// Shared simulation pieces

/// Exact stationary draw where available (Gaussian: exact; product target:
/// rejection from N(0, 1) per coordinate). Throws ValidationError otherwise.
ChainState sample_stationary_state(const PotentialModel& model, double c, Engine& engine);

/// A family of chains at steps h_fine * 2^j, j = 0..levels, all driven by
/// one fine noise path: each block draws 2^levels fine triples and
/// assembles the coarser ones with refine_noise.
class NoiseLadder {
 public:
  NoiseLadder(const UBUParams& fine, int levels, int d);
  void draw(Engine& engine);
  const std::vector<NoiseTriple>& level(int j) const { return levels_.at(static_cast<std::size_t>(j)); }
  int levels() const { return static_cast<int>(levels_.size()) - 1; }
  double step(int j) const;

 private:
  UBUParams fine_;
  int d_;
  NoiseSampler sampler_;
  std::vector<std::vector<NoiseTriple>> levels_;
};

// ---------------------------------------------------------------------------
// Experiments

struct ScanPoint {
  double h = 0.0;
  int d = 0;
  double value = 0.0;
  double std_error = 0.0;
  double theory = kNaN;
};

struct ScanResult {
  std::vector<ScanPoint> points;
  LinearFit fit;
  std::vector<ResultRecord> records;
};

/// Endpoint L2-P error at each h against the self-refined reference.
ScanResult strong_order_scan(const ExperimentConfig& config);
ScanResult strong_order_scan(const ExperimentConfig& config, const PotentialModel& model);

struct LocalOrderResult : ScanResult {
  /// measured <= C1 h^2.5 + C2 h^3 at every grid point.
  bool budget_ok = true;
};

/// One-step L2-P error of a step h against two refined half-steps, started
/// from stationarity, compared with the local error budget.
LocalOrderResult local_order_scan(const ExperimentConfig& config);
LocalOrderResult local_order_scan(const ExperimentConfig& config, const PotentialModel& model);

struct ContractionCell {
  double h = 0.0;
  /// Largest per-step squared-distance ratio over all replicas and steps.
  double max_ratio = 0.0;
  /// Geometric rate per unit time from log-distance regression, averaged
  /// over replicas, with its standard error.
  double rate = 0.0;
  double rate_std_error = 0.0;
  /// Smallest R^2 of the per-replica log-distance fits.
  double min_r_squared = 1.0;
  /// Conservative rate r with (1 - r h)^2 = max_ratio.
  double conservative_r = 0.0;
  bool distance_zero = false;
  bool contracts = false;
};

struct ContractionResult {
  std::vector<ContractionCell> cells;
  /// Largest grid step at and below which every cell contracts (0 if none).
  double threshold_h = 0.0;
  std::vector<ResultRecord> records;
};

/// Synchronously coupled chains from distinct initial states.
ContractionResult contraction_run(const ExperimentConfig& config);
ContractionResult contraction_run(const ExperimentConfig& config, const PotentialModel& model);

struct BiasResult {
  std::vector<ScanPoint> by_h;
  std::optional<LinearFit> fit_h;
  std::vector<ScanPoint> by_d;
  std::optional<LinearFit> fit_d;
  /// Two half-window means agree within one standard error everywhere.
  bool plateau_reached = true;
  std::vector<ResultRecord> records;
};

/// Long-run coupling distance between the UBU chain and the self-refined
/// reference, both started from one stationary draw. h_grid with d_grid[0]
/// gives the h scan; d_grid with h_grid[0] gives the d scan.
BiasResult bias_scan(const ExperimentConfig& config);

struct BoundPoint {
  long n = 0;
  double empirical = 0.0;
  double std_error = 0.0;
  double bound = 0.0;
};

struct BoundCompareResult {
  std::vector<BoundPoint> points;
  double r_used = 0.0;
  double w0 = 0.0;
  double bias_term = 0.0;
  bool dominated = true;
  std::vector<ResultRecord> records;
};

/// Coupling distance from a point-mass start vs. the evaluated Wasserstein
/// bound. Gaussian targets only; gamma must be 2.
BoundCompareResult bound_compare(const ExperimentConfig& config);

}  // namespace ubu
