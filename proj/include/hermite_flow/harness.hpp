#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hermite_flow/dynamics.hpp"
#include "hermite_flow/theory.hpp"

namespace hermite_flow {

enum class ExperimentKind { kValidate, kSingleIndex, kEmergence, kScaling, kComputeOptimal, kInitGaps };

std::string to_string(ExperimentKind kind);
ExperimentKind kind_from_string(const std::string& s);

struct Tolerances {
  double loss_rel_tol = 0.15;   // averaged online SGD loss vs population GD loss
  double grad_rel_tol = 1e-5;   // finite-difference gradient checks
  double time_rel_tol = 0.30;   // detected vs predicted transition time
  double slope_tol = 0.15;      // fitted loss-vs-time slope
  double ode_rel_tol = 0.10;    // simulated overlap vs ode_overlap
  double ratio_rel_tol = 0.25;  // detected vs predicted emergence-time ratios
  double norm_rel_tol = 0.05;   // |v_p|^2 vs a_pi(p) at twice the transition time
  double se_multiplier = 3.0;   // Monte Carlo agreement band in standard errors
  double mc_pass_fraction = 0.94;
  double plateau_factor = 3.0;
  double collision_slack = 0.2;  // collision frequency <= (1 + slack) 2 delta / pi
  double gap_pass_fraction = 0.99;
  double frontier_slope_lo = -0.45;
  double frontier_slope_hi = -0.25;

  nlohmann::json to_json() const;
};

struct Sweep {
  std::string parameter;  // "m", "eta", "beta" or "seed"
  std::vector<double> values;
};

// Kind-specific knobs. Defaults are the documented ones; see parse_config.
struct ExperimentOptions {
  // validate
  int instances = 50;
  long mc_samples = 1'000'000;
  int grad_instances = 10;
  long grad_samples = 100'000;
  double fd_step = 1e-5;
  // dynamics-driven kinds
  double threshold = 0.5;
  bool auto_steps = false;
  double horizon_factor = 2.5;
  double auto_loss_floor = 0.0;
  long max_steps = 50'000'000;
  double ode_max_overlap = 0.1;
  int seeds = 20;          // online SGD runs averaged in emergence
  double eps0 = 0.0;       // 0 selects d^{-0.75}
  double sigma1_sq = 0.0;  // 0 selects 2 sigma0^2
  std::pair<double, double> fit_window{0.02, 0.5};
  int frontier_points = 60;
  // init_gaps
  long trials = 100'000;
  std::vector<double> deltas{0.01, 0.02};
  int gap_seeds = 1000;
  int gap_d = 400;
  int gap_m = 40;
  int gap_P = 20;
  double gap_beta = 0.8;
  int gap_p_star = 0;  // 0 selects floor(m / log m)
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::kValidate;
  RunConfig base;
  std::optional<Sweep> sweep;
  std::filesystem::path output_dir = "out";
  Tolerances tolerances;
  ExperimentOptions options;

  nlohmann::json to_json() const;
};

// Strict JSON parse: unknown keys are errors (with a suggestion), and values
// are range-checked. Throws ConfigError.
ExperimentSpec parse_config(const std::filesystem::path& path);
ExperimentSpec parse_config_json(const nlohmann::json& j);

// A trajectory kept for CSV and plot emission.
struct RunArtifact {
  std::string label;
  RunConfig config;
  TrajectoryLog log;
  std::vector<double> thresholds;  // predicted_time of each matched pair
  std::vector<double> strengths;   // a_pi(p) of each matched pair
};

struct CriterionResult {
  std::string name;
  bool pass = false;
  nlohmann::json value;
  nlohmann::json tolerance;
  std::string detail;
};

struct Report {
  ExperimentKind kind = ExperimentKind::kValidate;
  nlohmann::json inputs;
  nlohmann::json predictions = nlohmann::json::object();
  nlohmann::json measurements = nlohmann::json::object();
  std::vector<CriterionResult> criteria;
  std::vector<std::uint64_t> seeds;
  double runtime_s = 0.0;
  std::vector<RunArtifact> runs;
  std::optional<GapDistribution> gaps;

  bool passed() const;
  const CriterionResult* find(const std::string& name) const;
  nlohmann::json to_json() const;
};

std::uint64_t derive_seed(std::uint64_t master, ExperimentKind kind, std::uint64_t index);

// Runs every sweep point and evaluates the kind's criteria. Divergence in a
// run is reported as a failed criterion, not thrown.
Report run_experiment(const ExperimentSpec& spec, const ProgressFn& progress = {});

// Writes <label>.csv and <label>.json per run plus <label>_loss.svg and
// <label>_overlaps.svg; with no runs, a header-only trajectory.csv. Returns
// the files written.
std::vector<std::filesystem::path> emit_plots(const Report& report,
                                              const std::filesystem::path& dir);

// Writes report.json, the plot/CSV set, a <label>_final.hfsnap snapshot of
// each run's final state and init_gaps.csv when present.
std::vector<std::filesystem::path> write_outputs(const Report& report,
                                                 const std::filesystem::path& dir);

std::string init_gaps_csv(const GapDistribution& g);

// Pieces of the SVG renderer exposed for tests.
std::string loss_svg(const RunArtifact& run);
std::string overlaps_svg(const RunArtifact& run);

}  // namespace hermite_flow
