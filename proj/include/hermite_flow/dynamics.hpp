#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hermite_flow/hermite.hpp"
#include "hermite_flow/model.hpp"
#include "hermite_flow/selection.hpp"

namespace hermite_flow {

enum class Mode { kOnlineSgd, kPopulationGd };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& s);

// Every step up to dense_prefix is logged, then t grows geometrically by
// stride (at least +1). Step 0 and the final step are always logged.
struct LogSchedule {
  double stride = 1.1;
  long dense_prefix = 1000;

  std::vector<long> times(long steps) const;
};

struct RunConfig {
  int d = 0;
  int P = 0;
  int m = 0;
  std::optional<double> beta;  // a_p proportional to p^{-beta}
  std::vector<double> a;       // explicit strengths; overrides beta when non-empty
  double eta = 0.0;
  double sigma0 = 0.0;
  long steps = 0;
  std::uint64_t seed = 0;
  Mode mode = Mode::kPopulationGd;
  LogSchedule log;
  Activation activation = Activation::pure(4);
  int p_star = 0;  // 0 selects min(m, P)
  double divergence_factor = 10.0;

  // Throws ConfigError on eta <= 0, sigma0 <= 0, negative steps, beta < 0, ...
  void validate() const;
  int effective_p_star() const;
  TeacherModel teacher() const;
};

struct LogRecord {
  long t = 0;
  double loss = 0.0;
  std::vector<double> diag_overlaps;  // vbar^2_{p, pi(p)}, p < P_*
  std::vector<double> norms_sq;       // |v_p|^2 of the matched neurons
  double max_irrelevant_overlap = 0.0;
  double max_unused_norm = 0.0;
};

struct TrajectoryLog {
  std::vector<LogRecord> records;
  SelectionMap selection;          // captured at t = 0
  std::vector<double> vbar2_init;  // vbar^2_{p, pi(p)}(0)
  StudentState final_state;
};

StudentState init_student(int d, int m, double sigma0, std::uint64_t seed);

// One online SGD update on a single input, applied to all rows from the
// pre-update state.
StudentState sgd_step(const StudentState& student, std::span<const double> x, double eta,
                      const TeacherModel& teacher, const Activation& act);

// One gradient-descent step on the closed-form population loss.
StudentState gd_step(const StudentState& student, double eta, const TeacherModel& teacher,
                     const Activation& act);

using ProgressFn = std::function<void(long t, double loss)>;

// Throws DivergenceError if any |v_k|^2 exceeds divergence_factor * max_p a_p,
// DegenerateNeuronError on a zero row.
TrajectoryLog run(const RunConfig& config, const ProgressFn& progress = {});

// Same, from an explicit initial state (its step counter is the start time).
TrajectoryLog run_from(const RunConfig& config, const TeacherModel& teacher, StudentState initial,
                       const ProgressFn& progress = {});

LogRecord make_record(const TeacherModel& teacher, const StudentState& student,
                      const SelectionMap& selection, double loss);

struct Emergence {
  int p = 0;
  double t_hat = 0.0;
};

// First crossing of vbar^2_{p,pi(p)} >= threshold per tracked p, linearly
// interpolated in log t between neighbouring records (linear in t when the
// earlier record is t = 0). Directions that never cross are omitted.
std::vector<Emergence> detect_emergence(const TrajectoryLog& log, double threshold = 0.5);

struct Violation {
  enum class Kind { kIrrelevantOverlap, kUnusedNorm };
  long t = 0;
  Kind kind = Kind::kIrrelevantOverlap;
  double value = 0.0;
};

struct DiagnosticsReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  nlohmann::json to_json() const;
};

// Flags records whose max irrelevant overlap exceeds eps0 or whose largest
// unused-neuron norm^2 exceeds sigma1_sq.
DiagnosticsReport diagnostics_check(const TrajectoryLog& log, double eps0, double sigma1_sq);

// CSV: t, loss, vbar2_p1..K, norm2_p1..K, max_irrelevant, max_unused_norm.
std::string trajectory_csv(const TrajectoryLog& log);

nlohmann::json run_config_to_json(const RunConfig& config);

}  // namespace hermite_flow
