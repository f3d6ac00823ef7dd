#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hermite_flow/errors.hpp"
#include "hermite_flow/harness.hpp"

namespace hermite_flow {

namespace {

using nlohmann::json;

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "kind", "d", "P", "m", "beta", "a", "eta", "sigma0", "steps", "seed", "mode",
      "log_stride", "log_dense_prefix", "activation", "p_star", "divergence_factor",
      "sweep", "output_dir", "tolerances", "instances", "mc_samples", "grad_instances",
      "grad_samples", "fd_step", "threshold", "horizon_factor", "auto_loss_floor", "max_steps",
      "ode_max_overlap", "seeds", "eps0", "sigma1_sq", "fit_window", "frontier_points",
      "frontier_slope_range", "trials", "deltas", "gap_seeds", "gap_d", "gap_m", "gap_P",
      "gap_beta", "gap_p_star"};
  return keys;
}

const std::vector<std::string>& tolerance_keys() {
  static const std::vector<std::string> keys = {
      "loss_rel_tol", "grad_rel_tol", "time_rel_tol", "slope_tol", "ode_rel_tol",
      "ratio_rel_tol", "norm_rel_tol", "se_multiplier", "mc_pass_fraction", "plateau_factor",
      "collision_slack", "gap_pass_fraction"};
  return keys;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const bool same = std::tolower(a[i - 1]) == std::tolower(b[j - 1]);
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (same ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::string suggest(const std::string& key, const std::vector<std::string>& candidates) {
  static const std::map<std::string, std::string> aliases = {
      {"lr", "eta"},          {"learning_rate", "eta"}, {"step_size", "eta"},
      {"width", "m"},         {"n_neurons", "m"},       {"dim", "d"},
      {"dimension", "d"},     {"iterations", "steps"},  {"iters", "steps"},
      {"init_scale", "sigma0"}, {"sigma_0", "sigma0"},  {"out", "output_dir"},
      {"teacher_width", "P"}, {"random_seed", "seed"}};
  if (auto it = aliases.find(key); it != aliases.end() &&
      std::find(candidates.begin(), candidates.end(), it->second) != candidates.end())
    return it->second;
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& c : candidates) {
    const std::size_t dist = edit_distance(key, c);
    if (dist < best_d) {
      best_d = dist;
      best = c;
    }
  }
  return best_d <= std::max<std::size_t>(2, key.size() / 2) ? best : std::string();
}

void reject_unknown(const json& j, const std::vector<std::string>& keys, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(keys.begin(), keys.end(), it.key()) != keys.end()) continue;
    std::string msg = "unknown key \"" + it.key() + "\"" + where;
    const std::string s = suggest(it.key(), keys);
    if (!s.empty()) msg += "; did you mean \"" + s + "\"?";
    throw ConfigError(msg);
  }
}

template <typename T>
T get(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("key \"") + key + "\" has the wrong type");
  }
}

double get_positive(const json& j, const char* key, double fallback) {
  const double v = get<double>(j, key, fallback);
  if (!(v > 0.0) || !std::isfinite(v))
    throw ConfigError(std::string("\"") + key + "\" must be a positive finite number");
  return v;
}

long get_count(const json& j, const char* key, long fallback, long min_value) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_integer() && !it->is_number_unsigned())
    throw ConfigError(std::string("\"") + key + "\" must be an integer");
  const long v = it->get<long>();
  if (v < min_value)
    throw ConfigError(std::string("\"") + key + "\" must be >= " + std::to_string(min_value));
  return v;
}

std::pair<double, double> get_range(const json& j, const char* key,
                                    std::pair<double, double> fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
    throw ConfigError(std::string("\"") + key + "\" must be a two-element numeric array");
  return {(*it)[0].get<double>(), (*it)[1].get<double>()};
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kValidate: return "validate";
    case ExperimentKind::kSingleIndex: return "single_index";
    case ExperimentKind::kEmergence: return "emergence";
    case ExperimentKind::kScaling: return "scaling";
    case ExperimentKind::kComputeOptimal: return "compute_optimal";
    case ExperimentKind::kInitGaps: return "init_gaps";
  }
  return "validate";
}

ExperimentKind kind_from_string(const std::string& s) {
  for (auto k : {ExperimentKind::kValidate, ExperimentKind::kSingleIndex,
                 ExperimentKind::kEmergence, ExperimentKind::kScaling,
                 ExperimentKind::kComputeOptimal, ExperimentKind::kInitGaps}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown experiment kind \"" + s +
                    "\" (expected validate, single_index, emergence, scaling, compute_optimal "
                    "or init_gaps)");
}

nlohmann::json Tolerances::to_json() const {
  return {{"loss_rel_tol", loss_rel_tol},
          {"grad_rel_tol", grad_rel_tol},
          {"time_rel_tol", time_rel_tol},
          {"slope_tol", slope_tol},
          {"ode_rel_tol", ode_rel_tol},
          {"ratio_rel_tol", ratio_rel_tol},
          {"norm_rel_tol", norm_rel_tol},
          {"se_multiplier", se_multiplier},
          {"mc_pass_fraction", mc_pass_fraction},
          {"plateau_factor", plateau_factor},
          {"collision_slack", collision_slack},
          {"gap_pass_fraction", gap_pass_fraction},
          {"frontier_slope_range", {frontier_slope_lo, frontier_slope_hi}}};
}

nlohmann::json ExperimentSpec::to_json() const {
  json j = run_config_to_json(base);
  j["kind"] = to_string(kind);
  if (options.auto_steps) j["steps"] = "auto";
  j["output_dir"] = output_dir.string();
  j["tolerances"] = tolerances.to_json();
  j["tolerances"].erase("frontier_slope_range");
  j["frontier_slope_range"] = {tolerances.frontier_slope_lo, tolerances.frontier_slope_hi};
  if (sweep) j["sweep"] = {{sweep->parameter, sweep->values}};
  const auto& o = options;
  switch (kind) {
    case ExperimentKind::kValidate:
      j["instances"] = o.instances;
      j["mc_samples"] = o.mc_samples;
      j["grad_instances"] = o.grad_instances;
      j["grad_samples"] = o.grad_samples;
      j["fd_step"] = o.fd_step;
      break;
    case ExperimentKind::kInitGaps:
      j["trials"] = o.trials;
      j["deltas"] = o.deltas;
      j["gap_seeds"] = o.gap_seeds;
      j["gap_d"] = o.gap_d;
      j["gap_m"] = o.gap_m;
      j["gap_P"] = o.gap_P;
      j["gap_beta"] = o.gap_beta;
      j["gap_p_star"] = o.gap_p_star;
      break;
    default:
      j["threshold"] = o.threshold;
      j["horizon_factor"] = o.horizon_factor;
      j["auto_loss_floor"] = o.auto_loss_floor;
      j["max_steps"] = o.max_steps;
      j["ode_max_overlap"] = o.ode_max_overlap;
      j["seeds"] = o.seeds;
      j["eps0"] = o.eps0;
      j["sigma1_sq"] = o.sigma1_sq;
      j["fit_window"] = {o.fit_window.first, o.fit_window.second};
      j["frontier_points"] = o.frontier_points;
      break;
  }
  return j;
}

ExperimentSpec parse_config_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, known_keys(), "");

  ExperimentSpec spec;
  spec.kind = kind_from_string(get<std::string>(j, "kind", "validate"));
  ExperimentOptions& o = spec.options;
  RunConfig& c = spec.base;

  // Defaults shared by every kind; validate and init_gaps ignore most of them.
  c.d = static_cast<int>(get_count(j, "d", 64, 1));
  c.m = static_cast<int>(get_count(j, "m", 8, 1));
  c.P = static_cast<int>(get_count(j, "P", 4, 1));
  if (j.contains("a")) {
    if (j.contains("beta")) throw ConfigError("give either \"a\" or \"beta\", not both");
    c.a = get<std::vector<double>>(j, "a", {});
    if (c.a.empty()) throw ConfigError("\"a\" must be non-empty");
    if (j.contains("P") && static_cast<int>(c.a.size()) != c.P)
      throw ConfigError("\"P\" disagrees with the length of \"a\"");
    c.P = static_cast<int>(c.a.size());
  } else {
    const double beta = get<double>(j, "beta", 0.8);
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("\"beta\" must be >= 0");
    c.beta = beta;
  }
  c.eta = get_positive(j, "eta", 1e-3);
  c.sigma0 = get_positive(j, "sigma0", 1e-3);
  if (auto it = j.find("steps"); it != j.end() && it->is_string()) {
    if (it->get<std::string>() != "auto") throw ConfigError("\"steps\" must be an integer or \"auto\"");
    o.auto_steps = true;
    c.steps = 0;
  } else {
    c.steps = get_count(j, "steps", 1000, 0);
  }
  c.seed = get<std::uint64_t>(j, "seed", 0);
  c.mode = mode_from_string(get<std::string>(j, "mode", "population_gd"));
  c.log.stride = get<double>(j, "log_stride", 1.1);
  c.log.dense_prefix = get_count(j, "log_dense_prefix", 1000, 0);
  if (auto it = j.find("activation"); it != j.end()) {
    try {
      c.activation = Activation::from_spec(*it);
    } catch (const Error& e) {
      throw ConfigError(std::string("\"activation\": ") + e.what());
    }
  }
  c.p_star = static_cast<int>(get_count(j, "p_star", 0, 0));
  c.divergence_factor = get_positive(j, "divergence_factor", 10.0);

  if (auto it = j.find("sweep"); it != j.end()) {
    if (!it->is_object() || it->size() != 1)
      throw ConfigError("\"sweep\" must be an object with exactly one of m, eta, beta, seed");
    const std::string param = it->begin().key();
    if (param != "m" && param != "eta" && param != "beta" && param != "seed") {
      std::string msg = "cannot sweep over \"" + param + "\" (allowed: m, eta, beta, seed)";
      const std::string s = suggest(param, {"m", "eta", "beta", "seed"});
      if (!s.empty()) msg += "; did you mean \"" + s + "\"?";
      throw ConfigError(msg);
    }
    const json& vals = it->begin().value();
    if (!vals.is_array() || vals.empty())
      throw ConfigError("sweep list for \"" + param + "\" must be a non-empty array");
    Sweep sw{param, {}};
    for (const auto& v : vals) {
      if (!v.is_number()) throw ConfigError("sweep values must be numbers");
      sw.values.push_back(v.get<double>());
    }
    if (param == "beta" && !c.a.empty())
      throw ConfigError("cannot sweep \"beta\" with an explicit \"a\"");
    spec.sweep = std::move(sw);
  }

  spec.output_dir = get<std::string>(j, "output_dir", "out");

  if (auto it = j.find("tolerances"); it != j.end()) {
    if (!it->is_object()) throw ConfigError("\"tolerances\" must be an object");
    reject_unknown(*it, tolerance_keys(), " in \"tolerances\"");
    Tolerances& t = spec.tolerances;
    t.loss_rel_tol = get_positive(*it, "loss_rel_tol", t.loss_rel_tol);
    t.grad_rel_tol = get_positive(*it, "grad_rel_tol", t.grad_rel_tol);
    t.time_rel_tol = get_positive(*it, "time_rel_tol", t.time_rel_tol);
    t.slope_tol = get_positive(*it, "slope_tol", t.slope_tol);
    t.ode_rel_tol = get_positive(*it, "ode_rel_tol", t.ode_rel_tol);
    t.ratio_rel_tol = get_positive(*it, "ratio_rel_tol", t.ratio_rel_tol);
    t.norm_rel_tol = get_positive(*it, "norm_rel_tol", t.norm_rel_tol);
    t.se_multiplier = get_positive(*it, "se_multiplier", t.se_multiplier);
    t.mc_pass_fraction = get_positive(*it, "mc_pass_fraction", t.mc_pass_fraction);
    t.plateau_factor = get_positive(*it, "plateau_factor", t.plateau_factor);
    t.collision_slack = get_positive(*it, "collision_slack", t.collision_slack);
    t.gap_pass_fraction = get_positive(*it, "gap_pass_fraction", t.gap_pass_fraction);
    if (t.mc_pass_fraction > 1.0 || t.gap_pass_fraction > 1.0)
      throw ConfigError("pass fractions must lie in (0, 1]");
  }
  {
    auto [lo, hi] = get_range(j, "frontier_slope_range",
                              {spec.tolerances.frontier_slope_lo, spec.tolerances.frontier_slope_hi});
    if (!(lo < hi)) throw ConfigError("\"frontier_slope_range\" must be increasing");
    spec.tolerances.frontier_slope_lo = lo;
    spec.tolerances.frontier_slope_hi = hi;
  }

  o.instances = static_cast<int>(get_count(j, "instances", o.instances, 1));
  o.mc_samples = get_count(j, "mc_samples", o.mc_samples, 2);
  o.grad_instances = static_cast<int>(get_count(j, "grad_instances", o.grad_instances, 1));
  o.grad_samples = get_count(j, "grad_samples", o.grad_samples, 2);
  o.fd_step = get_positive(j, "fd_step", o.fd_step);
  o.threshold = get<double>(j, "threshold", o.threshold);
  if (!(o.threshold > 0.0 && o.threshold < 1.0)) throw ConfigError("\"threshold\" must lie in (0, 1)");
  o.horizon_factor = get_positive(j, "horizon_factor", o.horizon_factor);
  o.auto_loss_floor = get<double>(j, "auto_loss_floor", o.auto_loss_floor);
  if (o.auto_loss_floor < 0.0) throw ConfigError("\"auto_loss_floor\" must be >= 0");
  o.max_steps = get_count(j, "max_steps", o.max_steps, 1);
  o.ode_max_overlap = get_positive(j, "ode_max_overlap", o.ode_max_overlap);
  o.seeds = static_cast<int>(get_count(j, "seeds", o.seeds, 1));
  o.eps0 = get<double>(j, "eps0", o.eps0);
  o.sigma1_sq = get<double>(j, "sigma1_sq", o.sigma1_sq);
  if (o.eps0 < 0.0 || o.sigma1_sq < 0.0) throw ConfigError("\"eps0\" and \"sigma1_sq\" must be >= 0");
  o.fit_window = get_range(j, "fit_window", o.fit_window);
  if (!(o.fit_window.first > 0.0 && o.fit_window.first < o.fit_window.second))
    throw ConfigError("\"fit_window\" must be [lo, hi] with 0 < lo < hi");
  o.frontier_points = static_cast<int>(get_count(j, "frontier_points", o.frontier_points, 5));
  o.trials = get_count(j, "trials", o.trials, 100);
  if (j.contains("deltas")) {
    o.deltas = get<std::vector<double>>(j, "deltas", {});
    if (o.deltas.empty()) throw ConfigError("\"deltas\" must be non-empty");
    for (double dl : o.deltas)
      if (!(dl > 0.0 && dl < 1.0)) throw ConfigError("\"deltas\" entries must lie in (0, 1)");
  }
  o.gap_seeds = static_cast<int>(get_count(j, "gap_seeds", o.gap_seeds, 1));
  o.gap_d = static_cast<int>(get_count(j, "gap_d", o.gap_d, 1));
  o.gap_m = static_cast<int>(get_count(j, "gap_m", o.gap_m, 2));
  o.gap_P = static_cast<int>(get_count(j, "gap_P", o.gap_P, 1));
  o.gap_beta = get<double>(j, "gap_beta", o.gap_beta);
  o.gap_p_star = static_cast<int>(get_count(j, "gap_p_star", o.gap_p_star, 0));

  // Kind-specific requirements.
  const bool needs_scaling_beta =
      spec.kind == ExperimentKind::kScaling || spec.kind == ExperimentKind::kComputeOptimal;
  if (needs_scaling_beta) {
    std::vector<double> betas;
    if (spec.sweep && spec.sweep->parameter == "beta") betas = spec.sweep->values;
    else if (c.beta) betas = {*c.beta};
    if (!c.a.empty())
      throw ConfigError("kind=" + to_string(spec.kind) + " needs a power-law teacher (\"beta\")");
    for (double b : betas)
      if (!(b > 0.5))
        throw ConfigError("kind=" + to_string(spec.kind) +
                          " requires beta > 1/2 (the scaling law does not hold in the "
                          "heavy-tailed regime); got beta=" + std::to_string(b));
  }
  if (spec.kind == ExperimentKind::kComputeOptimal && (!spec.sweep || spec.sweep->parameter != "m"))
    throw ConfigError("kind=compute_optimal needs a sweep over \"m\"");
  if (spec.kind == ExperimentKind::kSingleIndex && (c.P != 1 || c.m != 1))
    throw ConfigError("kind=single_index needs P = m = 1");
  if (spec.kind == ExperimentKind::kInitGaps) {
    if (c.P < 2) throw ConfigError("kind=init_gaps needs P >= 2");
    if (o.gap_P > o.gap_d) throw ConfigError("\"gap_P\" exceeds \"gap_d\"");
  }
  if (spec.sweep) {
    for (double v : spec.sweep->values) {
      RunConfig probe = c;
      if (spec.sweep->parameter == "m") {
        if (v < 1 || v != std::floor(v)) throw ConfigError("sweep values for \"m\" must be positive integers");
        probe.m = static_cast<int>(v);
        if (probe.p_star > std::min(probe.m, probe.P)) probe.p_star = 0;
      } else if (spec.sweep->parameter == "eta") {
        probe.eta = v;
      } else if (spec.sweep->parameter == "beta") {
        probe.beta = v;
      } else if (v < 0 || v != std::floor(v)) {
        throw ConfigError("sweep values for \"seed\" must be non-negative integers");
      }
      probe.validate();
    }
  }
  if (spec.kind != ExperimentKind::kValidate && spec.kind != ExperimentKind::kInitGaps) {
    RunConfig probe = c;
    if (o.auto_steps) probe.steps = 1;
    probe.validate();
    if (!o.auto_steps && c.steps < 1) throw ConfigError("\"steps\" must be >= 1");
  }
  return spec;
}

ExperimentSpec parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return parse_config_json(j);
}

}  // namespace hermite_flow
