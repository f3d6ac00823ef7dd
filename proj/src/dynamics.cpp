#include "hermite_flow/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <random>

#include "hermite_flow/errors.hpp"
#include "hermite_flow/kernels.hpp"
#include "hermite_flow/rng.hpp"

namespace hermite_flow {

std::string to_string(Mode mode) {
  return mode == Mode::kOnlineSgd ? "online_sgd" : "population_gd";
}

Mode mode_from_string(const std::string& s) {
  if (s == "online_sgd") return Mode::kOnlineSgd;
  if (s == "population_gd") return Mode::kPopulationGd;
  throw ConfigError("mode must be \"online_sgd\" or \"population_gd\", got \"" + s + "\"");
}

std::vector<long> LogSchedule::times(long steps) const {
  std::vector<long> out;
  long t = 0;
  while (t <= steps) {
    out.push_back(t);
    if (t < dense_prefix) {
      ++t;
    } else {
      t = std::max(t + 1, static_cast<long>(std::ceil(static_cast<double>(t) * stride)));
    }
  }
  if (out.back() != steps) out.push_back(steps);
  return out;
}

void RunConfig::validate() const {
  if (d < 1) throw ConfigError("d must be >= 1");
  if (m < 1) throw ConfigError("m must be >= 1");
  if (a.empty() && P < 1) throw ConfigError("P must be >= 1");
  if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
  if (!(sigma0 > 0.0)) throw ConfigError("sigma0 must be > 0");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (beta && *beta < 0.0) throw ConfigError("beta must be >= 0");
  if (!(log.stride > 1.0)) throw ConfigError("log_stride must be > 1");
  if (log.dense_prefix < 0) throw ConfigError("log_dense_prefix must be >= 0");
  if (!(divergence_factor > 0.0)) throw ConfigError("divergence_factor must be > 0");
  const int width = a.empty() ? P : static_cast<int>(a.size());
  if (width > d) throw ConfigError("teacher width P exceeds d");
  if (p_star < 0 || p_star > std::min(m, width))
    throw ConfigError("p_star must lie in [0, min(m, P)]");
}

int RunConfig::effective_p_star() const {
  const int width = a.empty() ? P : static_cast<int>(a.size());
  return p_star > 0 ? p_star : std::min(m, width);
}

TeacherModel RunConfig::teacher() const {
  if (!a.empty()) return TeacherModel(a, d);
  return TeacherModel::power_law(P, beta.value_or(0.0), d);
}

StudentState init_student(int d, int m, double sigma0, std::uint64_t seed) {
  if (!(sigma0 > 0.0)) throw ConfigError("init_student: sigma0 must be > 0");
  auto engine = make_engine(seed, Stream::kInit);
  StandardNormal normal;
  StudentState s;
  s.V.resize(m, d);
  for (int k = 0; k < m; ++k) {
    double n2 = 0.0;
    for (int j = 0; j < d; ++j) {
      s.V(k, j) = normal(engine);
      n2 += s.V(k, j) * s.V(k, j);
    }
    s.V.row(k) *= sigma0 / std::sqrt(n2);
  }
  return s;
}

StudentState sgd_step(const StudentState& student, std::span<const double> x, double eta,
                      const TeacherModel& teacher, const Activation& act) {
  Matrix g;
  kernels::sample_grad_into(x, teacher, student.V, act, g);
  StudentState next{student.V - eta * g, student.step + 1};
  return next;
}

StudentState gd_step(const StudentState& student, double eta, const TeacherModel& teacher,
                     const Activation& act) {
  auto terms = kernels::population_terms(teacher, student.V, act, true);
  StudentState next{student.V - eta * terms.grad, student.step + 1};
  return next;
}

LogRecord make_record(const TeacherModel& teacher, const StudentState& student,
                      const SelectionMap& selection, double loss) {
  const Matrix& V = student.V;
  const int m = student.width();
  const int P = teacher.width();
  const int ps = selection.p_star;
  const Vector n2 = V.rowwise().squaredNorm();

  // vbar^2 restricted to the teacher coordinates
  Matrix o2(m, P);
  for (int k = 0; k < m; ++k)
    for (int q = 0; q < P; ++q) o2(k, q) = V(k, q) * V(k, q) / n2(k);

  LogRecord r;
  r.t = student.step;
  r.loss = loss;
  for (int p = 0; p < ps; ++p) {
    const int k = selection.student_order[p];
    const int q = selection.pi[p];
    r.diag_overlaps.push_back(o2(k, q));
    r.norms_sq.push_back(n2(k));
    o2(k, q) = -1.0;  // excluded from the irrelevant maximum
  }
  r.max_irrelevant_overlap = std::max(0.0, o2.maxCoeff());
  for (int p = ps; p < m; ++p)
    r.max_unused_norm = std::max(r.max_unused_norm, n2(selection.student_order[p]));
  return r;
}

namespace {

void check_divergence(const Vector& norms_sq, long step, double limit) {
  for (Eigen::Index k = 0; k < norms_sq.size(); ++k) {
    if (!(norms_sq(k) > 0.0)) throw DegenerateNeuronError(static_cast<int>(k));
    if (norms_sq(k) > limit || !std::isfinite(norms_sq(k)))
      throw DivergenceError(step, static_cast<int>(k), norms_sq(k), limit);
  }
}

// Population GD keeps every row inside span{e_1..e_P, rows of V(0)}: each
// gradient row combines v_k, the other vbar_l and the e_p. When that span is
// smaller than d the run is carried out in an orthonormal basis whose first P
// columns are e_1..e_P, so overlaps and norms read off unchanged.
class ReducedBasis {
 public:
  ReducedBasis(const TeacherModel& teacher, const Matrix& V) {
    const Eigen::Index d = V.cols();
    const Eigen::Index P = teacher.width();
    const Eigen::Index rest = std::min<Eigen::Index>(V.rows(), d - P);
    if (P + rest >= d) return;
    p_ = P;
    Eigen::MatrixXd tail = V.rightCols(d - P).transpose();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(tail);
    q_ = qr.householderQ() * Eigen::MatrixXd::Identity(d - P, rest);
    teacher_.emplace(teacher.a(), static_cast<int>(P + rest));
  }

  bool active() const { return teacher_.has_value(); }
  const TeacherModel& teacher() const { return *teacher_; }

  Matrix compress(const Matrix& V) const {
    Matrix C(V.rows(), p_ + q_.cols());
    C.leftCols(p_) = V.leftCols(p_);
    C.rightCols(q_.cols()) = V.rightCols(V.cols() - p_) * q_;
    return C;
  }

  Matrix expand(const Matrix& C) const {
    Matrix V(C.rows(), p_ + q_.rows());
    V.leftCols(p_) = C.leftCols(p_);
    V.rightCols(q_.rows()) = C.rightCols(q_.cols()) * q_.transpose();
    return V;
  }

 private:
  Eigen::Index p_ = 0;
  Eigen::MatrixXd q_;
  std::optional<TeacherModel> teacher_;
};

}  // namespace

TrajectoryLog run_from(const RunConfig& config, const TeacherModel& teacher, StudentState state,
                       const ProgressFn& progress) {
  config.validate();
  const Activation& act = config.activation;
  const double limit = config.divergence_factor * teacher.max_strength();

  TrajectoryLog log;
  {
    const OverlapView view = overlap_view(teacher, state);
    const Matrix scores = selection_scores(view, teacher.a(), act.info_exponent_half());
    log.selection = greedy_select(scores, config.effective_p_star());
    for (int p = 0; p < log.selection.p_star; ++p) {
      const double o = view.vbar(log.selection.student_order[p], log.selection.pi[p]);
      log.vbar2_init.push_back(o * o);
    }
  }

  const long start = state.step;
  const long end = start + config.steps;
  std::vector<long> schedule = config.log.times(config.steps);
  std::size_t next_log = 0;

  auto emit = [&](double loss) {
    log.records.push_back(make_record(teacher, state, log.selection, loss));
    if (progress) progress(state.step, loss);
  };

  if (config.mode == Mode::kPopulationGd) {
    ReducedBasis basis(teacher, state.V);
    const TeacherModel& work_teacher = basis.active() ? basis.teacher() : teacher;
    StudentState work{basis.active() ? basis.compress(state.V) : state.V, state.step};
    kernels::PopulationTerms terms;
    kernels::Workspace ws;
    for (;;) {
      const bool want_log = next_log < schedule.size() && work.step - start == schedule[next_log];
      const bool last = work.step == end;
      kernels::population_terms_into(work_teacher, work.V, act, !last, terms, ws);
      check_divergence(terms.norms_sq, work.step, limit);
      if (want_log) {
        log.records.push_back(make_record(work_teacher, work, log.selection, terms.loss));
        if (progress) progress(work.step, terms.loss);
        ++next_log;
      }
      if (last) break;
      work.V.noalias() -= config.eta * terms.grad;
      ++work.step;
    }
    state.V = basis.active() ? basis.expand(work.V) : work.V;
    state.step = work.step;
  } else {
    // The input at step t depends only on (seed, t), never on logging.
    StandardNormal normal;
    std::vector<double> x(teacher.d());
    for (;;) {
      if (next_log < schedule.size() && state.step - start == schedule[next_log]) {
        check_divergence(state.V.rowwise().squaredNorm(), state.step, limit);
        emit(kernels::population_terms(teacher, state.V, act, false).loss);
        ++next_log;
      }
      if (state.step == end) break;
      auto engine = make_step_engine(config.seed, Stream::kSamples,
                                     static_cast<std::uint64_t>(state.step));
      normal.reset();
      for (auto& xi : x) xi = normal(engine);
      const double max_n2 = kernels::sgd_update(x, teacher, state.V, act, config.eta);
      ++state.step;
      if (max_n2 > limit || !std::isfinite(max_n2)) {
        for (Eigen::Index k = 0; k < state.V.rows(); ++k) {
          const double n2 = state.V.row(k).squaredNorm();
          if (n2 > limit || !std::isfinite(n2))
            throw DivergenceError(state.step, static_cast<int>(k), n2, limit);
        }
      }
    }
  }
  log.final_state = std::move(state);
  return log;
}

TrajectoryLog run(const RunConfig& config, const ProgressFn& progress) {
  config.validate();
  const TeacherModel teacher = config.teacher();
  StudentState init = init_student(config.d, config.m, config.sigma0, config.seed);
  return run_from(config, teacher, std::move(init), progress);
}

std::vector<Emergence> detect_emergence(const TrajectoryLog& log, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw Error("detect_emergence: threshold must lie in (0, 1)");
  std::vector<Emergence> out;
  if (log.records.empty()) return out;
  const std::size_t tracked = log.records.front().diag_overlaps.size();
  for (std::size_t p = 0; p < tracked; ++p) {
    for (std::size_t i = 0; i < log.records.size(); ++i) {
      const double y = log.records[i].diag_overlaps[p];
      if (y < threshold) continue;
      double t_hat = static_cast<double>(log.records[i].t);
      if (i > 0) {
        const auto& prev = log.records[i - 1];
        const double y0 = prev.diag_overlaps[p];
        const double frac = (threshold - y0) / (y - y0);
        const double t0 = static_cast<double>(prev.t);
        const double t1 = static_cast<double>(log.records[i].t);
        if (t0 > 0.0) {
          t_hat = std::exp(std::log(t0) + frac * (std::log(t1) - std::log(t0)));
        } else {
          t_hat = t0 + frac * (t1 - t0);
        }
      }
      out.push_back({static_cast<int>(p), t_hat});
      break;
    }
  }
  return out;
}

nlohmann::json DiagnosticsReport::to_json() const {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& x : violations) {
    v.push_back({{"t", x.t},
                 {"kind", x.kind == Violation::Kind::kIrrelevantOverlap ? "irrelevant_overlap"
                                                                         : "unused_norm"},
                 {"value", x.value}});
  }
  return {{"ok", ok()}, {"violations", v}};
}

DiagnosticsReport diagnostics_check(const TrajectoryLog& log, double eps0, double sigma1_sq) {
  if (!(eps0 > 0.0) || !(sigma1_sq > 0.0))
    throw Error("diagnostics_check: eps0 and sigma1_sq must be positive");
  DiagnosticsReport rep;
  for (const auto& r : log.records) {
    if (r.max_irrelevant_overlap > eps0)
      rep.violations.push_back({r.t, Violation::Kind::kIrrelevantOverlap, r.max_irrelevant_overlap});
    if (r.max_unused_norm > sigma1_sq)
      rep.violations.push_back({r.t, Violation::Kind::kUnusedNorm, r.max_unused_norm});
  }
  return rep;
}

std::string trajectory_csv(const TrajectoryLog& log) {
  const std::size_t K = log.selection.p_star;
  std::string out = "t,loss";
  for (std::size_t p = 1; p <= K; ++p) out += ",vbar2_p" + std::to_string(p);
  for (std::size_t p = 1; p <= K; ++p) out += ",norm2_p" + std::to_string(p);
  out += ",max_irrelevant,max_unused_norm\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
  };
  for (const auto& r : log.records) {
    out += std::to_string(r.t);
    out += ',';
    num(r.loss);
    for (double v : r.diag_overlaps) {
      out += ',';
      num(v);
    }
    for (double v : r.norms_sq) {
      out += ',';
      num(v);
    }
    out += ',';
    num(r.max_irrelevant_overlap);
    out += ',';
    num(r.max_unused_norm);
    out += '\n';
  }
  return out;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j = {{"d", c.d},
                      {"P", c.a.empty() ? c.P : static_cast<int>(c.a.size())},
                      {"m", c.m},
                      {"eta", c.eta},
                      {"sigma0", c.sigma0},
                      {"steps", c.steps},
                      {"seed", c.seed},
                      {"mode", to_string(c.mode)},
                      {"log_stride", c.log.stride},
                      {"log_dense_prefix", c.log.dense_prefix},
                      {"activation", c.activation.to_json()},
                      {"p_star", c.effective_p_star()},
                      {"divergence_factor", c.divergence_factor}};
  if (c.beta) j["beta"] = *c.beta;
  if (!c.a.empty()) j["a"] = c.a;
  return j;
}

}  // namespace hermite_flow
