#include "ubu/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "ubu/bounds.hpp"
#include "ubu/errors.hpp"
#include "ubu/gaussian_chaos.hpp"
#include "ubu/parallel.hpp"
#include "ubu/tensor3.hpp"

namespace ubu {

namespace {

using Settings = std::map<std::string, std::string>;

struct Key {
  std::string name;   // config-file key
  std::string flag;   // command-line flag
  std::string help;
};

const std::vector<Key>& experiment_keys() {
  static const std::vector<Key> keys{
      {"model", "--model", "target: gaussian | product | logistic"},
      {"spectrum", "--spectrum", "Gaussian Hessian eigenvalues, comma separated"},
      {"spectrum_min", "--spectrum-min", "smallest eigenvalue of the default Gaussian spectrum"},
      {"spectrum_max", "--spectrum-max", "largest eigenvalue of the default Gaussian spectrum"},
      {"a", "--a", "product target: phi(t) = t^2/2 + a log cosh(b t)"},
      {"b", "--b", "product target scale b"},
      {"data", "--data", "logistic regression CSV (label column first)"},
      {"delimiter", "--delimiter", "logistic CSV delimiter"},
      {"ridge", "--ridge", "logistic prior precision"},
      {"gamma", "--gamma", "friction"},
      {"c_bar", "--c-bar", "c = c_bar / (L + m)"},
      {"h_grid", "--h", "step sizes, comma separated (fractions like 1/8 allowed)"},
      {"d_grid", "--d", "dimensions, comma separated"},
      {"horizon", "--horizon", "strong-order integration time"},
      {"n_steps", "--n-steps", "number of steps"},
      {"replicas", "--replicas", "independent replicas (>= 2)"},
      {"ref_levels", "--ref-levels", "reference step = finest step / 2^ref_levels"},
      {"r", "--r", "contraction rate (0: estimate)"},
      {"w0", "--w0", "initial Wasserstein distance (default: exact Gaussian value)"},
      {"offset", "--offset", "initial x offset"},
      {"window", "--window", "plateau window length in time units (0: 10 / r)"},
      {"n_schedule", "--n-schedule", "number of recorded n values"},
      {"seed", "--seed", "master seed (generated and printed when omitted)"},
      {"output_dir", "--output-dir", "directory for CSV and JSON output"},
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) parts.push_back(trim(item));
  return parts;
}

// Accepts plain reals and fractions such as 1/128.
std::optional<double> to_number(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  const auto slash = t.find('/');
  auto plain = [](const std::string& s) -> std::optional<double> {
    std::size_t used = 0;
    try {
      const double v = std::stod(s, &used);
      if (used != s.size()) return std::nullopt;
      return v;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };
  if (slash == std::string::npos) return plain(t);
  const auto num = plain(trim(t.substr(0, slash)));
  const auto den = plain(trim(t.substr(slash + 1)));
  if (!num || !den || *den == 0.0) return std::nullopt;
  return *num / *den;
}

class Reader {
 public:
  explicit Reader(const Settings& s) : s_(s) {}

  bool has(const std::string& key) const { return s_.count(key) > 0; }

  void number(const std::string& key, double& target) {
    if (!has(key)) return;
    if (auto v = to_number(s_.at(key))) {
      target = *v;
    } else {
      bad(key, "a number");
    }
  }
  void integer(const std::string& key, long& target) {
    double v = static_cast<double>(target);
    const auto before = errors_.size();
    number(key, v);
    if (errors_.size() != before) return;
    if (std::floor(v) != v) {
      bad(key, "an integer");
      return;
    }
    target = static_cast<long>(v);
  }
  void integer(const std::string& key, int& target) {
    long v = target;
    integer(key, v);
    target = static_cast<int>(v);
  }
  void numbers(const std::string& key, std::vector<double>& target) {
    if (!has(key)) return;
    std::vector<double> out;
    for (const auto& part : split(s_.at(key), ',')) {
      auto v = to_number(part);
      if (!v) {
        bad(key, "a comma-separated list of numbers");
        return;
      }
      out.push_back(*v);
    }
    target = out;
  }
  void integers(const std::string& key, std::vector<int>& target) {
    std::vector<double> raw;
    const auto before = errors_.size();
    numbers(key, raw);
    if (errors_.size() != before || !has(key)) return;
    target.clear();
    for (double v : raw) {
      if (std::floor(v) != v) {
        bad(key, "a comma-separated list of integers");
        return;
      }
      target.push_back(static_cast<int>(v));
    }
  }
  void text(const std::string& key, std::string& target) {
    if (has(key)) target = s_.at(key);
  }
  void seed(const std::string& key, std::uint64_t& target) {
    if (!has(key)) return;
    const std::string t = trim(s_.at(key));
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size()) {
      bad(key, "an unsigned 64-bit integer");
      return;
    }
    target = v;
  }
  void require(const std::string& key) {
    if (!has(key)) errors_.push_back("missing required setting '" + key + "'");
  }

  std::vector<std::string>& errors() { return errors_; }

  void finish(const std::string& what) const {
    if (errors_.empty()) return;
    std::string msg = what + ":";
    for (const auto& e : errors_) msg += "\n  - " + e;
    throw ValidationError(msg);
  }

 private:
  void bad(const std::string& key, const std::string& expected) {
    errors_.push_back("'" + key + "' = '" + s_.at(key) + "' is not " + expected);
  }
  const Settings& s_;
  std::vector<std::string> errors_;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string schema_text() {
  std::string header;
  for (const auto& h : csv_header()) header += (header.empty() ? "" : ",") + h;
  return "Output: <output-dir>/<command>.csv with header\n  " + header +
         "\nand <output-dir>/<command>.json holding the full config, seed and summary.\n"
         "Empty cells mean not applicable. Env UBU_THREADS caps worker threads.";
}

std::uint64_t generated_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

void write_manifest(const std::string& dir, const std::string& name, const nlohmann::json& j) {
  const std::filesystem::path path = dir.empty() ? "." : dir;
  std::filesystem::create_directories(path);
  std::ofstream out(path / (name + ".json"));
  if (!out) throw ValidationError("cannot write manifest in " + path.string());
  out << j.dump(2) << '\n';
}

// Experiment subcommands share the settings table and the layering
// defaults < config file < flags.
struct ExperimentCommand {
  std::string name;
  std::string description;
  Settings defaults;
};

const std::vector<ExperimentCommand>& experiment_commands() {
  static const std::vector<ExperimentCommand> cmds{
      {"step", "Run independent UBU chains from a point start and record their RMS P-norm.",
       {{"d_grid", "2"}, {"h_grid", "0.1"}, {"n_steps", "100"}, {"replicas", "64"}, {"n_schedule", "11"}}},
      {"order", "Strong-order scan: endpoint L2 error against a refined reference.",
       {{"d_grid", "4"}, {"h_grid", "1/8,1/16,1/32,1/64,1/128"}, {"replicas", "64"}, {"horizon", "1"}}},
      {"local-order", "One-step error against two refined half steps, with the local error budget.",
       {{"d_grid", "2"}, {"h_grid", "1/4,1/8,1/16,1/32,1/64"}, {"replicas", "256"}}},
      {"contract", "Synchronous coupling of two chains: per-step ratios and decay rate.",
       {{"d_grid", "2"}, {"h_grid", "0.1"}, {"n_steps", "500"}, {"replicas", "64"}}},
      {"bias", "Long-run distance to a refined reference, scanned over h (and d).",
       {{"model", "product"}, {"d_grid", "8"}, {"h_grid", "1/4,1/8,1/16,1/32"}, {"replicas", "64"}}},
      {"dims", "Long-run distance to a refined reference, scanned over d at fixed h.",
       {{"model", "product"}, {"d_grid", "2,4,8,16,32,64"}, {"h_grid", "1/4"}, {"replicas", "64"}}},
  };
  return cmds;
}

const Settings& common_defaults() {
  static const Settings d{{"model", "gaussian"}, {"gamma", "2"}, {"c_bar", "1"},
                          {"ref_levels", "3"}, {"output_dir", "ubu_results"}};
  return d;
}

struct FlagBinding {
  CLI::Option* option = nullptr;
  std::string value;
};

void bind_keys(CLI::App* sub, const std::vector<Key>& keys, std::map<std::string, FlagBinding>& flags) {
  for (const auto& k : keys) {
    auto& slot = flags[k.name];
    slot.option = sub->add_option(k.flag, slot.value, k.help);
  }
}

Settings layered(const Settings& defaults, const std::string& config_path,
                 const std::map<std::string, FlagBinding>& flags) {
  Settings merged = common_defaults();
  for (const auto& [k, v] : defaults) merged[k] = v;
  if (!config_path.empty()) {
    for (const auto& [k, v] : read_config_file(config_path)) merged[k] = v;
  }
  for (const auto& [k, f] : flags) {
    if (f.option && f.option->count() > 0) merged[k] = f.value;
  }
  return merged;
}

void ensure_seed(Settings& s, std::ostream& out) {
  if (s.count("seed")) return;
  s["seed"] = std::to_string(generated_seed());
  out << "seed " << s["seed"] << " (generated)\n";
}

std::string run_experiment(const std::string& kind, const ExperimentConfig& cfg, std::ostream& out) {
  std::vector<ResultRecord> records;
  nlohmann::json summary;
  std::ostringstream line;
  line << kind << ": ";

  if (kind == "step") {
    const auto model = build_model(cfg.model, cfg.d_grid.front());
    const double c = default_c(model->constants(), cfg.c_bar);
    const UBUParams params{cfg.gamma, c, cfg.h_grid.front()};
    params.validate();
    const int slots = std::max(2, cfg.n_schedule);
    std::vector<long> schedule;
    for (int i = 0; i < slots; ++i) {
      const long n = std::lround(static_cast<double>(cfg.n_steps) * i / (slots - 1));
      if (schedule.empty() || schedule.back() != n) schedule.push_back(n);
    }
    const auto reps = static_cast<std::size_t>(cfg.n_replicas);
    std::vector<std::vector<double>> sq(reps, std::vector<double>(schedule.size()));
    const UBUStepper stepper(params);
    const NoiseSampler sampler(params);
    parallel_for(reps, [&](std::size_t rep) {
      auto engine = make_engine(cfg.seed, rep);
      ChainState s{Vec::Constant(model->dim(), cfg.init_offset), Vec::Zero(model->dim())};
      std::size_t slot = 0;
      for (long n = 0; n <= cfg.n_steps; ++n) {
        if (slot < schedule.size() && schedule[slot] == n) sq[rep][slot++] = p_norm_sq(s.v, s.x);
        if (n == cfg.n_steps) break;
        stepper.step_in_place(s, *model, sampler.draw(engine, model->dim()));
      }
    });
    DistanceAccumulator acc(schedule.size());
    for (const auto& row : sq)
      for (std::size_t i = 0; i < row.size(); ++i) acc.add(i, row[i]);
    const auto est = acc.result();
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      ResultRecord r;
      r.kind = kind;
      r.statistic = "rms_p_norm";
      r.h = params.h;
      r.d = model->dim();
      r.n = schedule[i];
      r.value = est[i].distance;
      r.std_error = est[i].std_error;
      r.seed = cfg.seed;
      records.push_back(r);
    }
    const auto cov = noise_cov(params.gamma, params.h);
    summary["noise_cov"] = {{cov(0, 0), cov(0, 1), cov(0, 2)},
                            {cov(1, 0), cov(1, 1), cov(1, 2)},
                            {cov(2, 0), cov(2, 1), cov(2, 2)}};
    summary["c"] = c;
    line << "RMS P-norm after " << cfg.n_steps << " steps " << fmt(est.back().distance) << " ± "
         << fmt(est.back().std_error, 3);
  } else if (kind == "order" || kind == "local-order") {
    const bool local = kind == "local-order";
    ScanResult res;
    bool budget_ok = true;
    if (local) {
      auto lr = local_order_scan(cfg);
      budget_ok = lr.budget_ok;
      res = lr;
    } else {
      res = strong_order_scan(cfg);
    }
    records = res.records;
    summary["slope"] = res.fit.slope;
    summary["slope_std_error"] = res.fit.std_error;
    summary["slope_ci"] = {res.fit.ci_low, res.fit.ci_high};
    line << "slope " << fmt(res.fit.slope, 4) << " ± " << fmt(res.fit.std_error, 2) << " (theory "
         << (local ? "2.5" : "2") << "), 95% CI [" << fmt(res.fit.ci_low, 4) << ", "
         << fmt(res.fit.ci_high, 4) << "]";
    if (local) {
      summary["budget_ok"] = budget_ok;
      line << ", budget " << (budget_ok ? "respected" : "exceeded");
    }
  } else if (kind == "contract") {
    const auto res = contraction_run(cfg);
    records = res.records;
    summary["threshold_h"] = res.threshold_h;
    for (const auto& cell : res.cells) {
      summary["cells"].push_back({{"h", cell.h},
                                  {"max_ratio", cell.max_ratio},
                                  {"rate", cell.rate},
                                  {"rate_std_error", cell.rate_std_error},
                                  {"min_r_squared", cell.min_r_squared},
                                  {"conservative_r", cell.conservative_r},
                                  {"distance_zero", cell.distance_zero},
                                  {"contracts", cell.contracts}});
    }
    const auto& first = res.cells.front();
    if (first.distance_zero) {
      line << "distance zero (identical initial states)";
    } else {
      line << "h " << fmt(first.h) << " max ratio " << fmt(first.max_ratio, 8) << ", rate "
           << fmt(first.rate, 4) << " ± " << fmt(first.rate_std_error, 2) << ", min R^2 "
           << fmt(first.min_r_squared, 5) << ", threshold h " << fmt(res.threshold_h);
    }
  } else if (kind == "bias" || kind == "dims") {
    const auto res = bias_scan(cfg);
    records = res.records;
    summary["plateau_reached"] = res.plateau_reached;
    if (res.fit_h) {
      summary["slope_vs_h"] = res.fit_h->slope;
      summary["slope_vs_h_std_error"] = res.fit_h->std_error;
      line << "slope vs h " << fmt(res.fit_h->slope, 4) << " ± " << fmt(res.fit_h->std_error, 2)
           << " (theory 2) ";
    }
    if (res.fit_d) {
      summary["slope_vs_d"] = res.fit_d->slope;
      summary["slope_vs_d_std_error"] = res.fit_d->std_error;
      line << "slope vs d " << fmt(res.fit_d->slope, 4) << " ± " << fmt(res.fit_d->std_error, 2)
           << " (theory 0.5) ";
    }
    if (!res.fit_h && !res.fit_d) {
      const auto& p = res.by_d.empty() ? res.by_h.front() : res.by_d.front();
      line << "plateau distance " << fmt(p.value) << " ± " << fmt(p.std_error, 2) << " ";
    }
    line << (res.plateau_reached ? "(plateau reached)" : "(plateau not reached)");
  } else if (kind == "bound") {
    const auto res = bound_compare(cfg);
    records = res.records;
    double tightness = 0.0;
    for (const auto& p : res.points) tightness = std::max(tightness, p.empirical / p.bound);
    summary["r_used"] = res.r_used;
    summary["w0"] = res.w0;
    summary["bias_term"] = res.bias_term;
    summary["dominated"] = res.dominated;
    summary["max_tightness"] = tightness;
    line << "bound dominates empirical at every n: " << (res.dominated ? "yes" : "no")
         << "; max empirical/bound " << fmt(tightness, 4) << ", r " << fmt(res.r_used, 5) << ", W0 "
         << fmt(res.w0, 5) << ", bias term " << fmt(res.bias_term, 5);
  }

  const std::string path = persist(cfg, records, summary);
  out << line.str() << " -> " << path << '\n';
  return path;
}

int run_norms(const std::string& spec, const std::string& output_dir, std::uint64_t seed, std::ostream& out) {
  const Tensor3 a = parse_tensor_spec(spec);
  PowerIterationOptions opts;
  opts.seed = seed;
  const auto bounds = norm_123_bounds(a, opts);
  nlohmann::json j;
  j["tensor"] = spec;
  j["seed"] = seed;
  j["norm_12_3"] = norm_12_3(a);
  j["pair_norms"] = {pair_single_norm(a, 0), pair_single_norm(a, 1), pair_single_norm(a, 2)};
  j["norm_1_2_3_lower"] = bounds.lower;
  j["norm_1_2_3_upper"] = bounds.upper;
  j["slice_spectral_norms"] = slice_spectral_norms(a);
  write_manifest(output_dir, "norms", j);
  out << "norms: {1,2}{3} " << fmt(j["norm_12_3"].get<double>(), 10) << ", {1}{2}{3} in ["
      << fmt(bounds.lower, 10) << ", " << fmt(bounds.upper, 10) << "]\n";
  return 0;
}

int run_chaos(const std::string& spec, std::uint64_t samples, std::uint64_t seed,
              const std::string& output_dir, std::ostream& out) {
  const Tensor3 a = parse_tensor_spec(spec);
  nlohmann::json j;
  j["tensor"] = spec;
  j["seed"] = seed;
  j["samples"] = samples;
  const double exact = chaos_mean_exact(a);
  const double bound = chaos_bound(a);
  j["exact"] = exact;
  j["bound"] = bound;
  out << "chaos: exact " << fmt(exact, 12) << " bound " << fmt(bound, 12);
  if (samples > 0) {
    const auto mc = chaos_mean_mc(a, samples, seed);
    j["mc_mean"] = mc.mean;
    j["mc_std_error"] = mc.std_error;
    out << " mc " << fmt(mc.mean, 8) << " ± " << fmt(mc.std_error, 3);
  }
  out << '\n';
  write_manifest(output_dir, "chaos", j);
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  Settings out;
  std::string line;
  int number = 0;
  std::vector<std::string> errors;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(number) + ": expected 'key = value'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      errors.push_back("line " + std::to_string(number) + ": empty key");
    } else if (out.count(key)) {
      errors.push_back("line " + std::to_string(number) + ": duplicate key '" + key + "'");
    } else {
      out[key] = value;
    }
  }
  if (!errors.empty()) {
    std::string msg = "config file " + path + ":";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  return out;
}

ExperimentConfig config_from_settings(const std::string& kind, const Settings& settings) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  Reader r(settings);
  for (const auto& [key, value] : settings) {
    const bool known = std::any_of(experiment_keys().begin(), experiment_keys().end(),
                                   [&](const Key& k) { return k.name == key; });
    if (!known) r.errors().push_back("unknown setting '" + key + "'");
  }
  r.text("model", cfg.model.type);
  r.numbers("spectrum", cfg.model.spectrum);
  r.number("spectrum_min", cfg.model.spectrum_min);
  r.number("spectrum_max", cfg.model.spectrum_max);
  r.number("a", cfg.model.a);
  r.number("b", cfg.model.b);
  r.text("data", cfg.model.data_path);
  if (r.has("delimiter")) {
    const std::string d = settings.at("delimiter");
    if (d == "tab" || d == "\\t") {
      cfg.model.delimiter = '\t';
    } else if (d.size() == 1) {
      cfg.model.delimiter = d[0];
    } else {
      r.errors().push_back("'delimiter' must be a single character or 'tab'");
    }
  }
  r.number("ridge", cfg.model.ridge);
  r.number("gamma", cfg.gamma);
  r.number("c_bar", cfg.c_bar);
  r.require("h_grid");
  r.numbers("h_grid", cfg.h_grid);
  r.integers("d_grid", cfg.d_grid);
  r.number("horizon", cfg.horizon);
  r.integer("n_steps", cfg.n_steps);
  r.integer("replicas", cfg.n_replicas);
  r.integer("ref_levels", cfg.ref_levels);
  r.number("r", cfg.r);
  if (r.has("w0")) {
    double w0 = 0.0;
    r.number("w0", w0);
    cfg.w0 = w0;
  }
  r.number("offset", cfg.init_offset);
  r.number("window", cfg.window_time);
  r.integer("n_schedule", cfg.n_schedule);
  r.require("seed");
  r.seed("seed", cfg.seed);
  r.text("output_dir", cfg.output_dir);
  r.finish("invalid settings for '" + kind + "'");
  cfg.validate();
  return cfg;
}

Tensor3 parse_tensor_spec(const std::string& spec) {
  if (spec.rfind("diag:", 0) == 0) {
    std::vector<double> diag;
    for (const auto& part : split(spec.substr(5), ',')) {
      const auto v = to_number(part);
      if (!v) throw ValidationError("bad diagonal entry '" + part + "' in tensor spec");
      diag.push_back(*v);
    }
    if (diag.empty()) throw ValidationError("empty diagonal tensor spec");
    return Tensor3::diagonal(diag);
  }
  if (spec.rfind("random:", 0) == 0) {
    const auto parts = split(spec.substr(7), ':');
    const double d = parts.empty() ? -1.0 : to_number(parts[0]).value_or(-1.0);
    const double seed = parts.size() < 2 ? 0.0 : to_number(parts[1]).value_or(-1.0);
    if (parts.size() > 2 || d < 1 || std::floor(d) != d || seed < 0 || std::floor(seed) != seed) {
      throw ValidationError("tensor spec must look like random:<d>:<seed>");
    }
    return random_tensor(static_cast<std::size_t>(d), static_cast<std::uint64_t>(seed));
  }
  return load_tensor(spec);
}

int parse_and_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Underdamped Langevin (UBU) integrator toolkit: tensor norms, Gaussian chaos, "
               "integrator experiments and convergence bounds.",
               "ubu_cli"};
  app.set_help_flag("--help", "print this help and exit");
  app.require_subcommand(1);
  app.footer(schema_text());

  // norms / chaos
  std::string tensor_spec;
  std::string norms_out = "ubu_results";
  std::uint64_t norms_seed = 0;
  auto* norms = app.add_subcommand("norms", "Tensor norms: {1,2}{3} exactly, {1}{2}{3} bracketed.");
  norms->add_option("--tensor", tensor_spec, "diag:1,2,3 | random:<d>:<seed> | file")->required();
  norms->add_option("--seed", norms_seed, "power-iteration seed");
  norms->add_option("--output-dir", norms_out, "directory for the JSON manifest");
  norms->footer("Writes <output-dir>/norms.json.");

  std::uint64_t chaos_samples = 0;
  std::uint64_t chaos_seed = 0;
  std::string chaos_out = "ubu_results";
  auto* chaos = app.add_subcommand("chaos", "Gaussian chaos mean: exact, Monte Carlo, and 3d-norm bound.");
  chaos->add_option("--tensor", tensor_spec, "diag:1,2,3 | random:<d>:<seed> | file")->required();
  chaos->add_option("--samples", chaos_samples, "Monte Carlo samples (0: skip)");
  chaos->add_option("--seed", chaos_seed, "Monte Carlo seed");
  chaos->add_option("--output-dir", chaos_out, "directory for the JSON manifest");
  chaos->footer("Writes <output-dir>/chaos.json.");

  // experiments
  std::string config_path;
  std::map<std::string, std::map<std::string, FlagBinding>> flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& cmd : experiment_commands()) {
    auto* sub = app.add_subcommand(cmd.name, cmd.description);
    sub->add_option("--config", config_path, "key = value settings file (flags override)");
    bind_keys(sub, experiment_keys(), flags[cmd.name]);
    sub->footer(schema_text());
    subs[cmd.name] = sub;
  }

  // bound: analytic evaluation, or --compare for the empirical comparison
  bool compare = false;
  bool conservative = false;
  auto* bound = app.add_subcommand(
      "bound", "Evaluate the Wasserstein bound, or compare it with coupled chains (--compare).");
  bound->add_option("--config", config_path, "key = value settings file (flags override)");
  bound->add_flag("--compare", compare, "run the empirical comparison on a Gaussian target");
  bound->add_flag("--conservative", conservative, "mark L1s as a conservative bound");
  auto& bound_flags = flags["bound"];
  bind_keys(bound, experiment_keys(), bound_flags);
  for (const Key& k : std::vector<Key>{{"c", "--c", "velocity scale c"},
                                       {"L", "--L", "gradient Lipschitz constant"},
                                       {"L1s", "--L1s", "strong Hessian Lipschitz constant"},
                                       {"n", "--n", "number of steps"}}) {
    auto& slot = bound_flags[k.name];
    slot.option = bound->add_option(k.flag, slot.value, k.help);
  }
  bound->footer("Analytic mode needs --c --L --L1s --d --r --h --n --w0 (gamma must be 2, h <= 2).\n" +
                schema_text());

  // steps-to-eps
  double eps = 0.0;
  std::string ste_d = "1";
  double ste_c = 0.0, ste_l = 0.0, ste_l1s = 0.0, ste_w0 = 1.0, ste_r = 0.0;
  std::string ste_out = "ubu_results";
  auto* ste = app.add_subcommand("steps-to-eps", "Step size and step count for a target W2 accuracy.");
  ste->add_option("--eps", eps, "target accuracy")->required();
  ste->add_option("--d", ste_d, "dimensions, comma separated");
  ste->add_option("--c", ste_c, "velocity scale c")->required();
  ste->add_option("--L", ste_l, "gradient Lipschitz constant")->required();
  ste->add_option("--L1s", ste_l1s, "strong Hessian Lipschitz constant")->required();
  ste->add_option("--w0", ste_w0, "initial Wasserstein distance");
  ste->add_option("--r", ste_r, "contraction rate")->required();
  ste->add_option("--output-dir", ste_out, "directory for the JSON manifest");
  ste->footer("Writes <output-dir>/steps-to-eps.json.");

  if (argv.size() <= 1) {
    err << app.help();
    return 1;
  }
  if (argv[1].rfind("-", 0) != 0 && !app.get_subcommand_no_throw(argv[1])) {
    err << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
    return 1;
  }
  std::vector<std::string> args(argv.rbegin(), argv.rend() - 1);
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto* active = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << active->help();
    return 1;
  }

  try {
    if (norms->parsed()) return run_norms(tensor_spec, norms_out, norms_seed, out);
    if (chaos->parsed()) return run_chaos(tensor_spec, chaos_samples, chaos_seed, chaos_out, out);
    for (const auto& cmd : experiment_commands()) {
      if (!subs[cmd.name]->parsed()) continue;
      Settings s = layered(cmd.defaults, config_path, flags[cmd.name]);
      ensure_seed(s, out);
      run_experiment(cmd.name, config_from_settings(cmd.name, s), out);
      return 0;
    }
    if (bound->parsed()) {
      if (compare) {
        Settings s = layered({{"d_grid", "4"}, {"h_grid", "1/128"}, {"n_steps", "7680"},
                              {"replicas", "64"}, {"offset", "2"}},
                             config_path, bound_flags);
        for (const char* extra : {"c", "L", "L1s", "n"}) s.erase(extra);
        ensure_seed(s, out);
        run_experiment("bound", config_from_settings("bound", s), out);
        return 0;
      }
      Settings s;
      if (!config_path.empty()) s = read_config_file(config_path);
      for (const auto& [k, f] : bound_flags) {
        if (f.option->count() > 0) s[k] = f.value;
      }
      Reader r(s);
      double c = 0, L = 0, L1s = 0, rate = 0, h = 0, w0 = 0, gamma = 2;
      long d = 0, n = 0;
      std::string out_dir = "ubu_results";
      for (const char* key : {"c", "L", "L1s", "d_grid", "r", "h_grid", "n", "w0"}) r.require(key);
      r.number("c", c);
      r.number("L", L);
      r.number("L1s", L1s);
      r.integer("d_grid", d);
      r.number("r", rate);
      r.number("h_grid", h);
      r.integer("n", n);
      r.number("w0", w0);
      r.number("gamma", gamma);
      r.text("output_dir", out_dir);
      r.finish("bound evaluation");
      check_regime(gamma, h);
      if (!(c > 0) || !(L > 0) || L1s < 0 || d < 1 || !(rate > 0) || n < 0 || w0 < 0) {
        throw ValidationError("bound evaluation needs c, L, r > 0, L1s >= 0, d >= 1, n >= 0, w0 >= 0");
      }
      const auto k = BoundConstants::from(theorem25_constants(c, L, L1s, static_cast<int>(d)), rate, h,
                                          conservative);
      const double value = wasserstein_bound(n, h, w0, k);
      auto report = bound_report(n, h, w0, k);
      report["gamma"] = gamma;
      report["d"] = d;
      report["L"] = L;
      report["L1s"] = L1s;
      report["c"] = c;
      write_manifest(out_dir, "bound", report);
      out << "bound: W2 <= " << fmt(value, 12) << " (transient "
          << fmt(std::pow(1.0 - h * r_h(rate, k.C0, h), static_cast<double>(n)) * w0, 6) << ", bias "
          << fmt(bias_term(h, k), 6) << ")\n";
      return 0;
    }
    if (ste->parsed()) {
      std::vector<int> dims;
      for (const auto& part : split(ste_d, ',')) {
        const auto v = to_number(part);
        if (!v || *v < 1 || std::floor(*v) != *v) throw ValidationError("--d must list positive integers");
        dims.push_back(static_cast<int>(*v));
      }
      nlohmann::json j;
      j["eps"] = eps;
      j["c"] = ste_c;
      j["L"] = ste_l;
      j["L1s"] = ste_l1s;
      j["w0"] = ste_w0;
      j["r"] = ste_r;
      long previous = 0;
      for (int d : dims) {
        const auto res = steps_to_eps(eps, d, ModelConstantsForBound{ste_c, ste_l, ste_l1s}, ste_w0, ste_r);
        j["results"].push_back({{"d", d},
                                {"h_star", res.h_star},
                                {"n_star", res.n_star},
                                {"bias", res.bias},
                                {"R_h", res.R_h},
                                {"bias_limited", res.bias_limited}});
        out << "steps-to-eps: d " << d << " h* " << fmt(res.h_star, 8) << " n* " << res.n_star;
        if (previous > 0) out << " (ratio " << fmt(static_cast<double>(res.n_star) / previous, 6) << ")";
        out << '\n';
        previous = res.n_star;
      }
      write_manifest(ste_out, "steps-to-eps", j);
      return 0;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 1;
}

int parse_and_dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return parse_and_dispatch(args, std::cout, std::cerr);
}

}  // namespace ubu
