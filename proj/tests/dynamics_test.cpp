#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "hermite_flow/dynamics.hpp"
#include "hermite_flow/errors.hpp"
#include "hermite_flow/theory.hpp"

using namespace hermite_flow;

namespace {

RunConfig small_config(Mode mode) {
  RunConfig c;
  c.d = 32;
  c.P = 2;
  c.m = 3;
  c.beta = 0.8;
  c.eta = 0.05;
  c.sigma0 = 0.1;
  c.steps = 300;
  c.seed = 5;
  c.mode = mode;
  c.log.dense_prefix = 10;
  c.log.stride = 1.2;
  return c;
}

StudentState exact_fit(const TeacherModel& t) {
  StudentState s{Matrix::Zero(t.width(), t.d()), 0};
  for (int p = 0; p < t.width(); ++p) s.V(p, p) = std::sqrt(t.a()[p]);
  return s;
}

TrajectoryLog synthetic_log(std::vector<std::pair<long, double>> pts) {
  TrajectoryLog log;
  log.selection.p_star = 1;
  log.selection.pi = {0};
  log.selection.student_order = {0};
  for (auto [t, v] : pts) {
    LogRecord r;
    r.t = t;
    r.diag_overlaps = {v};
    r.norms_sq = {0.0};
    log.records.push_back(r);
  }
  return log;
}

}  // namespace

TEST(LogSchedule, DensePrefixThenGeometric) {
  LogSchedule s{2.0, 3};
  EXPECT_EQ(s.times(20), (std::vector<long>{0, 1, 2, 3, 6, 12, 20}));
  EXPECT_EQ(s.times(0), (std::vector<long>{0}));
  LogSchedule slow{1.0001, 0};
  const auto t = slow.times(5);
  EXPECT_EQ(t, (std::vector<long>{0, 1, 2, 3, 4, 5}));
}

TEST(RunConfig, Validation) {
  auto c = small_config(Mode::kPopulationGd);
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.eta = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.sigma0 = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.beta = -0.1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.P = 40;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.log.stride = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.p_star = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(mode_from_string("online_sgd"), Mode::kOnlineSgd);
  EXPECT_EQ(to_string(Mode::kPopulationGd), "population_gd");
  EXPECT_THROW(mode_from_string("adam"), ConfigError);
}

TEST(InitStudent, NormsDeterminismAndMoments) {
  const auto a = init_student(50, 7, 0.3, 11);
  for (int k = 0; k < 7; ++k) EXPECT_NEAR(a.V.row(k).norm(), 0.3, 1e-12);
  const auto b = init_student(50, 7, 0.3, 11);
  EXPECT_EQ(a.V, b.V);
  EXPECT_NE(a.V, init_student(50, 7, 0.3, 12).V);

  const auto s = init_student(1000, 200, 1.0, 3);
  double mean = 0.0;
  for (int k = 0; k < 200; ++k) mean += 1000.0 * s.V(k, 0) * s.V(k, 0);
  mean /= 200;
  EXPECT_NEAR(mean, 1.0, 0.3);
}

TEST(SgdStep, Examples) {
  const auto act = Activation::pure(4);
  const auto t = TeacherModel::power_law(2, 0.8, 6);
  const auto s = init_student(6, 3, 0.5, 1);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  std::vector<double> x(6);
  for (auto& v : x) v = n(rng);

  EXPECT_EQ(sgd_step(s, x, 0.0, t, act).V, s.V);
  const TeacherModel single({1.0}, 6);
  const auto fit = exact_fit(single);
  EXPECT_EQ(sgd_step(fit, x, 0.1, single, act).V, fit.V);

  const auto next = sgd_step(s, x, 0.03, t, act);
  const Matrix expect = s.V - 0.03 * sample_grad(x, t, s, act);
  EXPECT_LE((next.V - expect).norm(), 1e-14);
  EXPECT_EQ(next.step, s.step + 1);
}

TEST(GdStep, Examples) {
  const auto act = Activation::from_coefficients({{4, 0.8}, {6, 0.6}});
  const auto t = TeacherModel::power_law(3, 0.8, 8);
  const auto s = init_student(8, 4, 0.4, 3);
  EXPECT_EQ(gd_step(s, 0.0, t, act).V, s.V);
  const auto fit = exact_fit(t);
  EXPECT_LE((gd_step(fit, 0.1, t, act).V - fit.V).norm(), 1e-12);

  auto cur = s;
  double prev = population_loss(t, cur, act);
  for (int i = 0; i < 100; ++i) {
    cur = gd_step(cur, 1e-3, t, act);
    const double l = population_loss(t, cur, act);
    EXPECT_LE(l, prev + 1e-15);
    prev = l;
  }
}

TEST(Run, ZeroStepsLogsInitialLoss) {
  auto c = small_config(Mode::kPopulationGd);
  c.steps = 0;
  c.sigma0 = 0.01;
  const auto log = run(c);
  ASSERT_EQ(log.records.size(), 1u);
  EXPECT_EQ(log.records[0].t, 0);
  EXPECT_NEAR(log.records[0].loss, 0.5, 1e-6);
  EXPECT_EQ(log.selection.p_star, 2);
  EXPECT_EQ(log.vbar2_init.size(), 2u);
}

TEST(Run, ReducedBasisMatchesDirectGradientDescent) {
  auto c = small_config(Mode::kPopulationGd);
  const auto log = run(c);
  const auto teacher = c.teacher();
  auto s = init_student(c.d, c.m, c.sigma0, c.seed);
  for (long i = 0; i < c.steps; ++i) s = gd_step(s, c.eta, teacher, c.activation);
  EXPECT_EQ(log.final_state.step, c.steps);
  EXPECT_LE((log.final_state.V - s.V).norm(), 1e-12 * s.V.norm());
  EXPECT_NEAR(log.records.back().loss, population_loss(teacher, s, c.activation), 1e-13);
}

TEST(Run, RecordsInvariantsAndDeterminism) {
  for (Mode mode : {Mode::kPopulationGd, Mode::kOnlineSgd}) {
    auto c = small_config(mode);
    c.eta = 0.01;
    const auto a = run(c);
    const auto b = run(c);
    EXPECT_EQ(trajectory_csv(a), trajectory_csv(b));
    EXPECT_EQ(a.records.front().t, 0);
    EXPECT_EQ(a.records.back().t, c.steps);
    for (std::size_t i = 1; i < a.records.size(); ++i) {
      EXPECT_LT(a.records[i - 1].t, a.records[i].t);
      EXPECT_GE(a.records[i].loss, -1e-9);
    }
  }
}

TEST(Run, SgdInputsDependOnlyOnSeedAndStep) {
  auto c = small_config(Mode::kOnlineSgd);
  c.eta = 0.01;
  const auto coarse = run(c);
  c.log.dense_prefix = 300;
  const auto fine = run(c);
  EXPECT_EQ(coarse.final_state.V, fine.final_state.V);

  // resuming from the midpoint reproduces the same trajectory
  auto first = c;
  first.steps = 120;
  const auto half = run(first);
  auto second = c;
  second.steps = c.steps - 120;
  const auto rest = run_from(second, c.teacher(), half.final_state);
  EXPECT_EQ(rest.final_state.V, fine.final_state.V);
  EXPECT_EQ(rest.final_state.step, c.steps);
}

TEST(Run, DivergenceAndDegenerateErrors) {
  auto c = small_config(Mode::kOnlineSgd);
  c.eta = 50.0;
  c.sigma0 = 1.0;
  EXPECT_THROW(run(c), DivergenceError);
  auto g = small_config(Mode::kPopulationGd);
  g.eta = 50.0;
  g.sigma0 = 1.0;
  EXPECT_THROW(run(g), DivergenceError);

  StudentState zero{Matrix::Zero(3, 32), 0};
  EXPECT_THROW(run_from(g, g.teacher(), zero), DegenerateNeuronError);
}

TEST(Emergence, LogLinearInterpolation) {
  const auto log = synthetic_log({{0, 0.01}, {100, 0.4}, {200, 0.7}, {300, 0.9}});
  const auto e = detect_emergence(log, 0.5);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].p, 0);
  EXPECT_NEAR(e[0].t_hat, 100 * std::pow(2.0, 1.0 / 3.0), 1e-9);
  EXPECT_NEAR(e[0].t_hat, 126, 0.5);
  EXPECT_TRUE(detect_emergence(synthetic_log({{0, 0.1}, {10, 0.2}}), 0.5).empty());
  const auto lin = detect_emergence(synthetic_log({{0, 0.0}, {10, 1.0}}), 0.5);
  ASSERT_EQ(lin.size(), 1u);
  EXPECT_NEAR(lin[0].t_hat, 5.0, 1e-12);
}

TEST(Emergence, SharpTransitionOnSingleIndexRun) {
  RunConfig c;
  c.d = 512;
  c.a = {1.0};
  c.m = 1;
  c.eta = 0.01;
  c.sigma0 = 0.01;
  c.seed = 3;
  c.log.stride = 1.005;
  const auto init = init_student(c.d, c.m, c.sigma0, c.seed);
  const double v0 = init.V(0, 0) * init.V(0, 0) / (c.sigma0 * c.sigma0);
  const double T = predicted_time(1.0, v0, c.eta, c.activation);
  c.steps = static_cast<long>(3 * T);
  const auto log = run(c);
  const auto e5 = detect_emergence(log, 0.5);
  const auto e6 = detect_emergence(log, 0.6);
  ASSERT_EQ(e5.size(), 1u);
  ASSERT_EQ(e6.size(), 1u);
  EXPECT_LT(std::abs(e6[0].t_hat - e5[0].t_hat), 0.1 * e5[0].t_hat);
  EXPECT_GE(e5[0].t_hat, 0.7 * T);
  EXPECT_LE(e5[0].t_hat, 1.3 * T);

  auto at = [&](double t) {
    for (std::size_t i = 1; i < log.records.size(); ++i)
      if (log.records[i].t >= t) return log.records[i - 1].diag_overlaps[0];
    return log.records.back().diag_overlaps[0];
  };
  EXPECT_LE(at(0.5 * e5[0].t_hat), 1.0 / std::sqrt(512.0));
  EXPECT_GE(at(1.5 * e5[0].t_hat), 0.95);
}

TEST(Emergence, UnusedNeuronsStaySmall) {
  RunConfig c;
  c.d = 128;
  c.P = 2;
  c.m = 5;
  c.beta = 0.8;
  c.eta = 0.02;
  c.sigma0 = 0.01;
  c.seed = 4;
  c.log.stride = 1.01;
  const auto teacher = c.teacher();
  const auto init = init_student(c.d, c.m, c.sigma0, c.seed);
  const auto view = overlap_view(teacher, init);
  const auto sel = greedy_select(selection_scores(view, teacher.a(), 2), 2);
  const auto pred = predict(teacher, sel, view, c.eta, c.activation);
  c.steps = static_cast<long>(2 * std::max(pred.t_realized[0], pred.t_realized[1]));
  const auto log = run(c);
  EXPECT_EQ(detect_emergence(log).size(), 2u);
  for (const auto& r : log.records) EXPECT_LE(r.max_unused_norm, 2 * c.sigma0 * c.sigma0);
}

TEST(Diagnostics, Examples) {
  auto log = synthetic_log({{0, 0.0}, {10, 0.0}, {20, 0.0}});
  EXPECT_TRUE(diagnostics_check(log, 0.01, 1e-4).ok());
  log.records[1].max_irrelevant_overlap = 0.02;
  const auto rep = diagnostics_check(log, 0.01, 1e-4);
  ASSERT_EQ(rep.violations.size(), 1u);
  EXPECT_EQ(rep.violations[0].t, 10);
  EXPECT_EQ(rep.violations[0].kind, Violation::Kind::kIrrelevantOverlap);
  log.records[2].max_unused_norm = 1.0;
  EXPECT_EQ(diagnostics_check(log, 0.01, 1e-4).violations.size(), 2u);
  EXPECT_THROW(diagnostics_check(log, 0.0, 1.0), Error);
  EXPECT_TRUE(rep.to_json().is_object());
}

TEST(Diagnostics, HealthyEmergenceRun) {
  RunConfig c;
  c.d = 512;
  c.P = 8;
  c.m = 16;
  c.beta = 0.8;
  c.eta = 0.01;
  c.sigma0 = 0.01;
  c.seed = 2;
  c.log.stride = 1.05;
  c.steps = 20000;
  const auto log = run(c);
  const auto rep = diagnostics_check(log, std::pow(512.0, -0.75), 2 * c.sigma0 * c.sigma0);
  EXPECT_TRUE(rep.ok()) << rep.to_json().dump();
}

TEST(Csv, HeaderAndRows) {
  auto c = small_config(Mode::kPopulationGd);
  c.steps = 3;
  const auto log = run(c);
  const auto csv = trajectory_csv(log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "t,loss,vbar2_p1,vbar2_p2,norm2_p1,norm2_p2,max_irrelevant,max_unused_norm");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto j = run_config_to_json(c);
  EXPECT_EQ(j.at("mode"), "population_gd");
}
