#include "ubu/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "ubu/bounds.hpp"
#include "ubu/errors.hpp"
#include "ubu/parallel.hpp"

namespace ubu {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int model_dim(const ExperimentConfig& config) {
  if (!config.d_grid.empty()) return config.d_grid.front();
  if (config.model.type == "gaussian" && !config.model.spectrum.empty()) {
    return static_cast<int>(config.model.spectrum.size());
  }
  throw ValidationError("experiment needs a dimension: set d_grid or a Gaussian spectrum");
}

// Integer j with h = base * 2^j, or ValidationError.
int dyadic_level(double h, double base) {
  const double j = std::round(std::log2(h / base));
  if (j < 0.0 || std::abs(base * std::exp2(j) - h) > 1e-12 * h) {
    std::ostringstream msg;
    msg << "step " << h << " is not a power-of-two multiple of " << base
        << "; the h grid must be a dyadic ladder";
    throw ValidationError(msg.str());
  }
  return static_cast<int>(j);
}

ChainState initial_state(const PotentialModel& model, double c, Engine& engine) {
  try {
    return sample_stationary_state(model, c, engine);
  } catch (const ValidationError&) {
    std::normal_distribution<double> normal;
    ChainState s{Vec::Zero(model.dim()), Vec(model.dim())};
    for (int i = 0; i < model.dim(); ++i) s.v[i] = std::sqrt(c) * normal(engine);
    return s;
  }
}

double sq_distance(const ChainState& a, const ChainState& b) {
  return p_norm_sq(a.v - b.v, a.x - b.x);
}

ResultRecord base_record(const ExperimentConfig& config, std::string statistic) {
  ResultRecord r;
  r.kind = config.kind;
  r.statistic = std::move(statistic);
  r.seed = config.seed;
  return r;
}

ResultRecord slope_record(const ExperimentConfig& config, const std::string& statistic,
                          const LinearFit& fit, double theory, int d, double wall) {
  ResultRecord r = base_record(config, statistic);
  r.d = d;
  r.value = fit.slope;
  r.std_error = fit.std_error;
  r.slope = fit.slope;
  r.slope_std_error = fit.std_error;
  r.theory = theory;
  r.wall_clock = wall;
  return r;
}

void require_slope_grid(std::size_t n, const char* what) {
  if (n < 4) {
    throw ValidationError(std::string(what) + " needs at least 4 grid points for a slope, got " +
                          std::to_string(n));
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return {};
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

struct PlateauOutcome {
  std::vector<ScanPoint> points;
  bool plateau_reached = true;
};

// Runs the chains at each step in `steps` together with a reference at
// min(steps) / 2^ref_levels, all from one stationary draw per replica, and
// averages the squared P-distance to the reference over a window that starts
// after every chain has had max(1000, 10 / (r h)) steps of burn-in.
PlateauOutcome plateau_distances(const PotentialModel& model, const ExperimentConfig& config,
                                 const std::vector<double>& steps, double r_burn,
                                 std::uint64_t stream) {
  const double c = default_c(model.constants(), config.c_bar);
  const double h_min = *std::min_element(steps.begin(), steps.end());
  const double h_max = *std::max_element(steps.begin(), steps.end());
  const double h_fine = h_min / std::exp2(config.ref_levels);
  const int levels = dyadic_level(h_max, h_fine);
  std::vector<int> level_of(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) level_of[i] = dyadic_level(steps[i], h_fine);

  double burn_time = 0.0;
  for (double h : steps) {
    const double n_burn = std::max(1000.0, std::ceil(10.0 / (r_burn * h)));
    burn_time = std::max(burn_time, n_burn * h);
  }
  const double window = config.window_time > 0.0 ? config.window_time : 10.0 / r_burn;
  const long start_block = static_cast<long>(std::ceil(burn_time / h_max - 1e-9));
  long window_blocks = std::max(2L, static_cast<long>(std::ceil(window / h_max - 1e-9)));
  window_blocks += window_blocks % 2;
  const long half = window_blocks / 2;

  const auto reps = static_cast<std::size_t>(config.n_replicas);
  // [replica][grid index] -> (first-half mean, second-half mean)
  std::vector<std::vector<std::pair<double, double>>> per_rep(
      reps, std::vector<std::pair<double, double>>(steps.size()));
  const UBUParams fine{config.gamma, c, h_fine};

  parallel_for(reps, [&](std::size_t rep) {
    auto engine = make_engine(derive_seed(config.seed, stream), rep);
    NoiseLadder ladder(fine, levels, model.dim());
    std::vector<UBUStepper> steppers;
    for (int j = 0; j <= levels; ++j) steppers.emplace_back(fine.with_step(ladder.step(j)));
    std::vector<ChainState> states(static_cast<std::size_t>(levels) + 1,
                                   initial_state(model, c, engine));
    std::vector<std::pair<double, double>> sums(steps.size(), {0.0, 0.0});
    for (long block = 0; block < start_block + window_blocks; ++block) {
      ladder.draw(engine);
      for (int j = 0; j <= levels; ++j) {
        for (const auto& noise : ladder.level(j)) {
          steppers[static_cast<std::size_t>(j)].step_in_place(states[static_cast<std::size_t>(j)], model, noise);
        }
      }
      if (block < start_block) continue;
      const bool first = block - start_block < half;
      for (std::size_t i = 0; i < steps.size(); ++i) {
        const double sq = sq_distance(states[static_cast<std::size_t>(level_of[i])], states[0]);
        (first ? sums[i].first : sums[i].second) += sq;
      }
    }
    for (std::size_t i = 0; i < steps.size(); ++i) {
      per_rep[rep][i] = {sums[i].first / static_cast<double>(half),
                         sums[i].second / static_cast<double>(half)};
    }
  });

  PlateauOutcome out;
  const double k = static_cast<double>(reps);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    double mean = 0.0, mean_diff = 0.0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      mean += 0.5 * (per_rep[rep][i].first + per_rep[rep][i].second);
      mean_diff += per_rep[rep][i].first - per_rep[rep][i].second;
    }
    mean /= k;
    mean_diff /= k;
    double var = 0.0, var_diff = 0.0;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const double a = 0.5 * (per_rep[rep][i].first + per_rep[rep][i].second) - mean;
      const double b = per_rep[rep][i].first - per_rep[rep][i].second - mean_diff;
      var += a * a;
      var_diff += b * b;
    }
    const double se_sq = std::sqrt(var / (k - 1.0) / k);
    const double se_diff = std::sqrt(var_diff / (k - 1.0) / k);
    if (std::abs(mean_diff) >= se_diff && se_diff > 0.0) out.plateau_reached = false;
    ScanPoint p;
    p.h = steps[i];
    p.d = model.dim();
    p.value = std::sqrt(mean);
    p.std_error = p.value > 0.0 ? se_sq / (2.0 * p.value) : 0.0;
    out.points.push_back(p);
  }
  return out;
}

std::optional<BoundConstants> bias_constants(const PotentialModel& model, const ExperimentConfig& config,
                                             double r, double h) {
  if (config.gamma != 2.0 || h > 2.0 || !(r > 0.0)) return std::nullopt;
  const auto k = model.constants();
  const double c = default_c(k, config.c_bar);
  return BoundConstants::from(theorem25_constants(c, k.L, k.L1s, model.dim()), r, h,
                              k.conservative || k.l1s_fallback);
}

}  // namespace

// ---------------------------------------------------------------------------

ModelPtr build_model(const ModelConfig& config, int d) {
  if (config.type == "gaussian") {
    QuadraticSpec spec;
    if (!config.spectrum.empty()) {
      if (d > 0 && static_cast<std::size_t>(d) != config.spectrum.size()) {
        throw ValidationError("gaussian spectrum has " + std::to_string(config.spectrum.size()) +
                              " values but d = " + std::to_string(d));
      }
      spec.eigenvalues = Eigen::Map<const Vec>(config.spectrum.data(),
                                               static_cast<Eigen::Index>(config.spectrum.size()));
    } else {
      if (d < 1) throw ValidationError("gaussian model needs d >= 1");
      if (d == 1) {
        spec.eigenvalues = Vec::Constant(1, config.spectrum_min);
      } else {
        spec.eigenvalues = Vec::LinSpaced(d, config.spectrum_min, config.spectrum_max);
      }
    }
    return make_gaussian(std::move(spec));
  }
  if (config.type == "product") {
    return make_product(ProductPhi::quadratic_logcosh, config.a, config.b, d);
  }
  if (config.type == "logistic") {
    if (config.data_path.empty()) throw ValidationError("logistic model needs a data path");
    auto model = make_logistic(read_regression_csv(config.data_path, config.delimiter, config.ridge));
    if (d > 0 && model->dim() != d) {
      throw ValidationError("logistic data has " + std::to_string(model->dim()) +
                            " features but d = " + std::to_string(d));
    }
    return model;
  }
  throw ValidationError("unknown model type '" + config.type + "'");
}

void ExperimentConfig::validate() const {
  std::vector<std::string> problems;
  if (!(gamma > 0.0)) problems.push_back("gamma must be positive");
  if (!(c_bar > 0.0)) problems.push_back("c_bar must be positive");
  if (h_grid.empty()) problems.push_back("h grid is empty");
  for (double h : h_grid) {
    if (!(h > 0.0) || !std::isfinite(h)) {
      problems.push_back("h grid entries must be positive (got " + format_double(h) + ")");
    }
  }
  for (int d : d_grid) {
    if (d < 1) problems.push_back("d grid entries must be >= 1");
  }
  if (n_replicas < 2) problems.push_back("n_replicas must be >= 2");
  if (ref_levels < 1) problems.push_back("ref_levels must be >= 1");
  if (n_steps < 1) problems.push_back("n_steps must be >= 1");
  if (!(horizon > 0.0)) problems.push_back("horizon must be positive");
  if (r < 0.0) problems.push_back("r must be nonnegative");
  if (!problems.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["kind"] = kind;
  j["model"] = {{"type", model.type},       {"spectrum", model.spectrum},
                {"spectrum_min", model.spectrum_min}, {"spectrum_max", model.spectrum_max},
                {"a", model.a},             {"b", model.b},
                {"data_path", model.data_path}, {"delimiter", std::string(1, model.delimiter)},
                {"ridge", model.ridge}};
  j["gamma"] = gamma;
  j["c_bar"] = c_bar;
  j["h_grid"] = h_grid;
  j["d_grid"] = d_grid;
  j["horizon"] = horizon;
  j["n_steps"] = n_steps;
  j["n_replicas"] = n_replicas;
  j["seed"] = seed;
  j["ref_levels"] = ref_levels;
  j["r"] = r;
  j["w0"] = w0 ? nlohmann::json(*w0) : nlohmann::json(nullptr);
  j["init_offset"] = init_offset;
  j["window_time"] = window_time;
  j["n_schedule"] = n_schedule;
  j["output_dir"] = output_dir;
  return j;
}

const std::vector<std::string>& csv_header() {
  static const std::vector<std::string> header{"kind", "statistic", "h", "d", "n", "value",
                                               "std_error", "slope", "slope_std_error", "theory",
                                               "wall_clock_s", "seed"};
  return header;
}

std::string csv_row(const ResultRecord& r) {
  std::ostringstream s;
  s << r.kind << ',' << r.statistic << ',' << format_double(r.h) << ','
    << (r.d > 0 ? std::to_string(r.d) : std::string{}) << ','
    << (r.n >= 0 ? std::to_string(r.n) : std::string{}) << ',' << format_double(r.value) << ','
    << format_double(r.std_error) << ',' << format_double(r.slope) << ','
    << format_double(r.slope_std_error) << ',' << format_double(r.theory) << ','
    << format_double(r.wall_clock) << ',' << r.seed;
  return s.str();
}

void write_csv(const std::string& path, const std::vector<ResultRecord>& records) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  const auto& header = csv_header();
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : records) out << csv_row(r) << '\n';
}

std::string persist(const ExperimentConfig& config, const std::vector<ResultRecord>& records,
                    const nlohmann::json& summary) {
  const std::filesystem::path dir = config.output_dir.empty() ? "." : config.output_dir;
  std::filesystem::create_directories(dir);
  const std::string stem = config.kind.empty() ? "experiment" : config.kind;
  const auto csv_path = dir / (stem + ".csv");
  write_csv(csv_path.string(), records);
  nlohmann::json manifest;
  manifest["config"] = config.to_json();
  manifest["seed"] = config.seed;
  manifest["csv"] = csv_path.filename().string();
  manifest["csv_header"] = csv_header();
  manifest["records"] = records.size();
  manifest["summary"] = summary;
  std::ofstream out(dir / (stem + ".json"));
  if (!out) throw ValidationError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
  return csv_path.string();
}

// ---------------------------------------------------------------------------

LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("fit: x and y lengths differ");
  if (x.size() < 3) throw ValidationError("fit: need at least 3 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 1e-300)) throw ValidationError("fit: degenerate x values");
  LinearFit f;
  f.n = x.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - f.intercept - f.slope * x[i];
    ssr += e * e;
  }
  f.std_error = std::sqrt(ssr / (n - 2.0) / sxx);
  f.r_squared = syy > 0.0 ? 1.0 - ssr / syy : 1.0;
  const boost::math::students_t dist(n - 2.0);
  const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
  f.ci_low = f.slope - t * f.std_error;
  f.ci_high = f.slope + t * f.std_error;
  return f;
}

LinearFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
  std::vector<double> lx, ly;
  for (const auto& [x, y] : points) {
    if (!(x > 0.0) || !(y > 0.0)) {
      throw ValidationError("log-log fit needs positive coordinates (got " + format_double(x) +
                            ", " + format_double(y) + ")");
    }
    lx.push_back(std::log(x));
    ly.push_back(std::log(y));
  }
  return fit_linear(lx, ly);
}

// ---------------------------------------------------------------------------

ChainState sample_stationary_state(const PotentialModel& model, double c, Engine& engine) {
  if (const auto* g = dynamic_cast<const GaussianModel*>(&model)) {
    return sample_stationary(g->spec(), c, engine);
  }
  if (const auto* p = dynamic_cast<const ProductModel*>(&model)) {
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    ChainState s{Vec(model.dim()), Vec(model.dim())};
    for (int i = 0; i < model.dim(); ++i) s.v[i] = std::sqrt(c) * normal(engine);
    // Density exp(-phi) = N(0,1) density times exp(-(phi(t) - t^2/2)) <= 1.
    for (int i = 0; i < model.dim(); ++i) {
      for (;;) {
        const double t = normal(engine);
        if (uniform(engine) <= std::exp(-(p->phi(t) - 0.5 * t * t))) {
          s.x[i] = t;
          break;
        }
      }
    }
    return s;
  }
  throw ValidationError("no exact stationary sampler for model '" + model.name() + "'");
}

NoiseLadder::NoiseLadder(const UBUParams& fine, int levels, int d)
    : fine_(fine), d_(d), sampler_(fine), levels_(static_cast<std::size_t>(levels) + 1) {
  if (levels < 0) throw ValidationError("NoiseLadder: negative level count");
}

void NoiseLadder::draw(Engine& engine) {
  auto& base = levels_[0];
  base.clear();
  const std::size_t count = std::size_t{1} << levels();
  base.reserve(count);
  for (std::size_t i = 0; i < count; ++i) base.push_back(sampler_.draw(engine, d_));
  for (std::size_t j = 1; j < levels_.size(); ++j) levels_[j] = coarsen(levels_[j - 1], fine_.gamma);
}

double NoiseLadder::step(int j) const { return fine_.h * std::exp2(j); }

// ---------------------------------------------------------------------------

ScanResult strong_order_scan(const ExperimentConfig& config) {
  config.validate();
  const auto model = build_model(config.model, model_dim(config));
  return strong_order_scan(config, *model);
}

ScanResult strong_order_scan(const ExperimentConfig& config, const PotentialModel& model) {
  config.validate();
  require_slope_grid(config.h_grid.size(), "strong-order scan");
  const auto start = Clock::now();
  const double c = default_c(model.constants(), config.c_bar);
  const double h_min = *std::min_element(config.h_grid.begin(), config.h_grid.end());
  const double h_max = *std::max_element(config.h_grid.begin(), config.h_grid.end());
  const double h_fine = h_min / std::exp2(config.ref_levels);
  const int levels = dyadic_level(h_max, h_fine);
  std::vector<int> level_of;
  for (double h : config.h_grid) level_of.push_back(dyadic_level(h, h_fine));
  const long blocks = std::lround(config.horizon / h_max);
  if (blocks < 1 || std::abs(blocks * h_max - config.horizon) > 1e-9 * config.horizon) {
    throw ValidationError("horizon must be a positive multiple of the largest step");
  }

  const auto reps = static_cast<std::size_t>(config.n_replicas);
  std::vector<std::vector<double>> sq(reps, std::vector<double>(config.h_grid.size()));
  const UBUParams fine{config.gamma, c, h_fine};
  parallel_for(reps, [&](std::size_t rep) {
    auto engine = make_engine(config.seed, rep);
    NoiseLadder ladder(fine, levels, model.dim());
    std::vector<UBUStepper> steppers;
    for (int j = 0; j <= levels; ++j) steppers.emplace_back(fine.with_step(ladder.step(j)));
    std::vector<ChainState> states(static_cast<std::size_t>(levels) + 1, initial_state(model, c, engine));
    for (long b = 0; b < blocks; ++b) {
      ladder.draw(engine);
      for (int j = 0; j <= levels; ++j) {
        for (const auto& noise : ladder.level(j)) {
          steppers[static_cast<std::size_t>(j)].step_in_place(states[static_cast<std::size_t>(j)], model, noise);
        }
      }
    }
    for (std::size_t i = 0; i < config.h_grid.size(); ++i) {
      sq[rep][i] = sq_distance(states[static_cast<std::size_t>(level_of[i])], states[0]);
    }
  });

  DistanceAccumulator acc(config.h_grid.size());
  for (const auto& row : sq)
    for (std::size_t i = 0; i < row.size(); ++i) acc.add(i, row[i]);
  const auto est = acc.result();

  ScanResult out;
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < config.h_grid.size(); ++i) {
    out.points.push_back({config.h_grid[i], model.dim(), est[i].distance, est[i].std_error, kNaN});
    pts.emplace_back(config.h_grid[i], est[i].distance);
  }
  const double wall = seconds_since(start);
  for (const auto& p : out.points) {
    ResultRecord r = base_record(config, "endpoint_error");
    r.h = p.h;
    r.d = p.d;
    r.value = p.value;
    r.std_error = p.std_error;
    r.wall_clock = wall;
    out.records.push_back(r);
  }
  bool all_positive = std::all_of(pts.begin(), pts.end(), [](const auto& p) { return p.second > 0.0; });
  if (all_positive) {
    out.fit = fit_loglog_slope(pts);
    for (auto& r : out.records) {
      r.slope = out.fit.slope;
      r.slope_std_error = out.fit.std_error;
    }
    out.records.push_back(slope_record(config, "loglog_slope", out.fit, 2.0, model.dim(), wall));
  } else {
    out.fit.slope = kNaN;
  }
  return out;
}

LocalOrderResult local_order_scan(const ExperimentConfig& config) {
  config.validate();
  const auto model = build_model(config.model, model_dim(config));
  return local_order_scan(config, *model);
}

LocalOrderResult local_order_scan(const ExperimentConfig& config, const PotentialModel& model) {
  config.validate();
  require_slope_grid(config.h_grid.size(), "local-order scan");
  const auto start = Clock::now();
  const auto k = model.constants();
  const double c = default_c(k, config.c_bar);
  const bool in_regime = config.gamma == 2.0 &&
                         std::all_of(config.h_grid.begin(), config.h_grid.end(), [](double h) { return h <= 2.0; });
  const LocalErrorConstants lc = theorem25_constants(c, k.L, k.L1s, model.dim());
  const BoundConstants bc = BoundConstants::from(lc, 0.0, 0.0, k.conservative || k.l1s_fallback);

  const auto reps = static_cast<std::size_t>(config.n_replicas);
  LocalOrderResult out;
  std::vector<std::pair<double, double>> pts;
  for (std::size_t gi = 0; gi < config.h_grid.size(); ++gi) {
    const double h = config.h_grid[gi];
    const UBUParams coarse{config.gamma, c, h};
    const UBUParams half = coarse.with_step(0.5 * h);
    const UBUStepper coarse_step(coarse);
    const UBUStepper half_step(half);
    const NoiseSampler sampler(half);
    std::vector<double> sq(reps);
    parallel_for(reps, [&](std::size_t rep) {
      auto engine = make_engine(derive_seed(config.seed, gi), rep);
      const ChainState init = initial_state(model, c, engine);
      const NoiseTriple first = sampler.draw(engine, model.dim());
      const NoiseTriple second = sampler.draw(engine, model.dim());
      const ChainState one = coarse_step.step(init, model, refine_noise(first, second, coarse));
      ChainState two = half_step.step(init, model, first);
      half_step.step_in_place(two, model, second);
      sq[rep] = sq_distance(one, two);
    });
    DistanceAccumulator acc(1);
    for (double s : sq) acc.add(0, s);
    const auto est = acc.result().front();
    ScanPoint p{h, model.dim(), est.distance, est.std_error, kNaN};
    if (in_regime) {
      p.theory = local_error_budget(h, bc).total();
      if (p.value > p.theory) out.budget_ok = false;
    } else {
      out.budget_ok = false;
    }
    out.points.push_back(p);
    pts.emplace_back(h, est.distance);
  }
  const double wall = seconds_since(start);
  out.fit = fit_loglog_slope(pts);
  for (const auto& p : out.points) {
    ResultRecord r = base_record(config, "one_step_error");
    r.h = p.h;
    r.d = p.d;
    r.value = p.value;
    r.std_error = p.std_error;
    r.theory = p.theory;
    r.slope = out.fit.slope;
    r.slope_std_error = out.fit.std_error;
    r.wall_clock = wall;
    out.records.push_back(r);
  }
  out.records.push_back(slope_record(config, "loglog_slope", out.fit, 2.5, model.dim(), wall));
  return out;
}

ContractionResult contraction_run(const ExperimentConfig& config) {
  config.validate();
  const auto model = build_model(config.model, model_dim(config));
  return contraction_run(config, *model);
}

ContractionResult contraction_run(const ExperimentConfig& config, const PotentialModel& model) {
  config.validate();
  const auto start = Clock::now();
  const double c = default_c(model.constants(), config.c_bar);
  const auto reps = static_cast<std::size_t>(config.n_replicas);
  ContractionResult out;

  for (std::size_t gi = 0; gi < config.h_grid.size(); ++gi) {
    const double h = config.h_grid[gi];
    const UBUParams params{config.gamma, c, h};
    struct ReplicaStats {
      double max_ratio = 0.0;
      bool zero = false;
      double rate = kNaN;
      double r_squared = kNaN;
    };
    std::vector<ReplicaStats> stats(reps);
    parallel_for(reps, [&](std::size_t rep) {
      auto engine = make_engine(derive_seed(config.seed, gi), rep);
      const ChainState a = initial_state(model, c, engine);
      ChainState b = a;
      b.x.array() += config.init_offset;
      const auto run = run_coupled(a, b, model, params, config.n_steps,
                                   derive_seed(derive_seed(config.seed, gi), rep + 0x9E37));
      ReplicaStats& s = stats[rep];
      const double d0 = run.distance.front();
      if (!(d0 > 0.0)) {
        s.zero = true;
        return;
      }
      std::vector<double> steps, logs;
      for (std::size_t n = 0; n < run.distance.size(); ++n) {
        const double dn = run.distance[n];
        if (!(dn > 1e-10 * d0)) break;
        steps.push_back(static_cast<double>(n));
        logs.push_back(std::log(dn));
        if (n + 1 < run.distance.size() && run.distance[n + 1] > 1e-10 * d0) {
          const double ratio = run.distance[n + 1] / dn;
          s.max_ratio = std::max(s.max_ratio, ratio * ratio);
        }
      }
      if (steps.size() >= 3) {
        const auto fit = fit_linear(steps, logs);
        s.rate = -fit.slope / h;
        s.r_squared = fit.r_squared;
      }
    });

    ContractionCell cell;
    cell.h = h;
    std::vector<double> rates;
    cell.min_r_squared = 1.0;
    for (const auto& s : stats) {
      if (s.zero) {
        cell.distance_zero = true;
        continue;
      }
      cell.max_ratio = std::max(cell.max_ratio, s.max_ratio);
      if (!std::isnan(s.rate)) {
        rates.push_back(s.rate);
        cell.min_r_squared = std::min(cell.min_r_squared, s.r_squared);
      }
    }
    if (!rates.empty()) {
      const double n = static_cast<double>(rates.size());
      cell.rate = std::accumulate(rates.begin(), rates.end(), 0.0) / n;
      double var = 0.0;
      for (double r : rates) var += (r - cell.rate) * (r - cell.rate);
      cell.rate_std_error = n > 1.0 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
    } else {
      cell.rate = kNaN;
      cell.rate_std_error = kNaN;
      cell.min_r_squared = kNaN;
    }
    cell.contracts = !cell.distance_zero && cell.max_ratio < 1.0 && cell.max_ratio > 0.0;
    cell.conservative_r = cell.contracts ? (1.0 - std::sqrt(cell.max_ratio)) / h : 0.0;
    out.cells.push_back(cell);
  }

  std::vector<ContractionCell> sorted = out.cells;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.h < b.h; });
  for (const auto& cell : sorted) {
    if (!cell.contracts) break;
    out.threshold_h = cell.h;
  }

  const double wall = seconds_since(start);
  for (const auto& cell : out.cells) {
    ResultRecord ratio = base_record(config, cell.distance_zero ? "distance_zero" : "max_sq_ratio");
    ratio.h = cell.h;
    ratio.d = model.dim();
    ratio.n = config.n_steps;
    ratio.value = cell.distance_zero ? 0.0 : cell.max_ratio;
    ratio.theory = 1.0;
    ratio.wall_clock = wall;
    out.records.push_back(ratio);
    ResultRecord rate = base_record(config, "contraction_rate");
    rate.h = cell.h;
    rate.d = model.dim();
    rate.n = config.n_steps;
    rate.value = cell.rate;
    rate.std_error = cell.rate_std_error;
    rate.theory = cell.conservative_r;
    rate.wall_clock = wall;
    out.records.push_back(rate);
    ResultRecord r2 = base_record(config, "min_log_fit_r2");
    r2.h = cell.h;
    r2.d = model.dim();
    r2.value = cell.min_r_squared;
    r2.wall_clock = wall;
    out.records.push_back(r2);
  }
  return out;
}

BiasResult bias_scan(const ExperimentConfig& config) {
  config.validate();
  if (config.d_grid.empty()) throw ValidationError("bias scan needs a d grid");
  const auto start = Clock::now();
  BiasResult out;

  auto burn_rate = [&](const PotentialModel& model) {
    if (config.r > 0.0) return config.r;
    const auto k = model.constants();
    // Slowest overdamped mode of the linearization: about c m / 2.
    return 0.5 * default_c(k, config.c_bar) * k.m;
  };
  auto theory_for = [&](const PotentialModel& model, double h) {
    const double r = config.r > 0.0 ? config.r : burn_rate(model);
    const auto bc = bias_constants(model, config, r, h);
    if (!bc) return kNaN;
    try {
      return bias_term(h, *bc);
    } catch (const NumericalError&) {
      return kNaN;
    }
  };

  // h scan at d_grid[0].
  if (config.h_grid.size() > 1) {
    const auto model = build_model(config.model, config.d_grid.front());
    auto res = plateau_distances(*model, config, config.h_grid, burn_rate(*model), 1);
    out.plateau_reached = out.plateau_reached && res.plateau_reached;
    for (auto& p : res.points) p.theory = theory_for(*model, p.h);
    out.by_h = res.points;
  }
  // d scan at h_grid[0].
  if (config.d_grid.size() > 1 || config.h_grid.size() == 1) {
    for (std::size_t di = 0; di < config.d_grid.size(); ++di) {
      const auto model = build_model(config.model, config.d_grid[di]);
      auto res = plateau_distances(*model, config, {config.h_grid.front()}, burn_rate(*model), 1000 + di);
      out.plateau_reached = out.plateau_reached && res.plateau_reached;
      res.points.front().theory = theory_for(*model, config.h_grid.front());
      out.by_d.push_back(res.points.front());
    }
  }
  const double wall = seconds_since(start);

  auto fit_of = [](const std::vector<ScanPoint>& pts, bool by_h) -> std::optional<LinearFit> {
    if (pts.size() < 4) return std::nullopt;
    std::vector<std::pair<double, double>> xy;
    for (const auto& p : pts) {
      if (!(p.value > 0.0)) return std::nullopt;
      xy.emplace_back(by_h ? p.h : static_cast<double>(p.d), p.value);
    }
    return fit_loglog_slope(xy);
  };
  out.fit_h = fit_of(out.by_h, true);
  out.fit_d = fit_of(out.by_d, false);

  auto emit = [&](const std::vector<ScanPoint>& pts, const std::string& stat,
                  const std::optional<LinearFit>& fit) {
    for (const auto& p : pts) {
      ResultRecord r = base_record(config, stat);
      r.h = p.h;
      r.d = p.d;
      r.value = p.value;
      r.std_error = p.std_error;
      r.theory = p.theory;
      if (fit) {
        r.slope = fit->slope;
        r.slope_std_error = fit->std_error;
      }
      r.wall_clock = wall;
      out.records.push_back(r);
    }
  };
  emit(out.by_h, "plateau_distance_vs_h", out.fit_h);
  emit(out.by_d, "plateau_distance_vs_d", out.fit_d);
  if (out.fit_h) {
    out.records.push_back(slope_record(config, "slope_vs_h", *out.fit_h, 2.0, config.d_grid.front(), wall));
  }
  if (out.fit_d) {
    auto r = slope_record(config, "slope_vs_d", *out.fit_d, 0.5, 0, wall);
    r.h = config.h_grid.front();
    out.records.push_back(r);
  }
  ResultRecord flag = base_record(config, "plateau_reached");
  flag.value = out.plateau_reached ? 1.0 : 0.0;
  flag.wall_clock = wall;
  out.records.push_back(flag);
  return out;
}

BoundCompareResult bound_compare(const ExperimentConfig& config) {
  config.validate();
  const auto model_ptr = build_model(config.model, model_dim(config));
  const auto* gaussian = dynamic_cast<const GaussianModel*>(model_ptr.get());
  if (!gaussian) throw ValidationError("bound comparison needs a Gaussian target");
  const auto& model = *gaussian;
  const double h = config.h_grid.front();
  check_regime(config.gamma, h);
  const auto start = Clock::now();
  const auto k = model.constants();
  const double c = default_c(k, config.c_bar);
  const int d = model.dim();

  BoundCompareResult out;
  out.r_used = config.r;
  if (!(out.r_used > 0.0)) {
    ExperimentConfig cc = config;
    cc.kind = "contract";
    cc.h_grid = {h};
    const auto contraction = contraction_run(cc, model);
    if (!contraction.cells.front().contracts) {
      throw NumericalError("bound comparison: coupled chains do not contract at h = " + format_double(h));
    }
    out.r_used = contraction.cells.front().conservative_r;
  }

  ChainState start_point{Vec::Constant(d, config.init_offset), Vec::Zero(d)};
  const Eigen::MatrixXd stationary = stationary_covariance(model.spec(), c);
  out.w0 = config.w0 ? *config.w0
                     : w2_gaussian_p(stack(start_point), Eigen::MatrixXd::Zero(2 * d, 2 * d),
                                     Eigen::VectorXd::Zero(2 * d), stationary);
  const BoundConstants bc = BoundConstants::from(theorem25_constants(c, k.L, k.L1s, d), out.r_used, h,
                                                 k.conservative || k.l1s_fallback);
  out.bias_term = bias_term(h, bc);

  std::vector<long> schedule;
  const int slots = std::max(2, config.n_schedule);
  for (int i = 0; i < slots; ++i) {
    const long n = std::lround(static_cast<double>(config.n_steps) * i / (slots - 1));
    if (schedule.empty() || schedule.back() != n) schedule.push_back(n);
  }

  const UBUParams fine{config.gamma, c, h / std::exp2(config.ref_levels)};
  const auto reps = static_cast<std::size_t>(config.n_replicas);
  std::vector<std::vector<double>> sq(reps, std::vector<double>(schedule.size()));
  parallel_for(reps, [&](std::size_t rep) {
    auto engine = make_engine(derive_seed(config.seed, 77), rep);
    NoiseLadder ladder(fine, config.ref_levels, d);
    const UBUStepper fine_step(fine);
    const UBUStepper chain_step(fine.with_step(h));
    ChainState reference = sample_stationary(model.spec(), c, engine);
    ChainState chain = start_point;
    std::size_t slot = 0;
    for (long n = 0; n <= config.n_steps; ++n) {
      if (slot < schedule.size() && schedule[slot] == n) sq[rep][slot++] = sq_distance(chain, reference);
      if (n == config.n_steps) break;
      ladder.draw(engine);
      for (const auto& noise : ladder.level(0)) fine_step.step_in_place(reference, model, noise);
      chain_step.step_in_place(chain, model, ladder.level(config.ref_levels).front());
    }
  });

  DistanceAccumulator acc(schedule.size());
  for (const auto& row : sq)
    for (std::size_t i = 0; i < row.size(); ++i) acc.add(i, row[i]);
  const auto est = acc.result();
  const double wall = seconds_since(start);
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    BoundPoint p{schedule[i], est[i].distance, est[i].std_error,
                 wasserstein_bound(schedule[i], h, out.w0, bc)};
    if (p.empirical > p.bound + 3.0 * p.std_error) out.dominated = false;
    out.points.push_back(p);
    ResultRecord r = base_record(config, "coupling_distance");
    r.h = h;
    r.d = d;
    r.n = p.n;
    r.value = p.empirical;
    r.std_error = p.std_error;
    r.theory = p.bound;
    r.wall_clock = wall;
    out.records.push_back(r);
  }
  ResultRecord rr = base_record(config, "r_used");
  rr.h = h;
  rr.d = d;
  rr.value = out.r_used;
  rr.wall_clock = wall;
  out.records.push_back(rr);
  ResultRecord bias = base_record(config, "bias_term");
  bias.h = h;
  bias.d = d;
  bias.value = out.bias_term;
  bias.wall_clock = wall;
  out.records.push_back(bias);
  return out;
}

}  // namespace ubu
