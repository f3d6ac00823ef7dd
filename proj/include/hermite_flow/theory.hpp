#pragma once

#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hermite_flow/hermite.hpp"
#include "hermite_flow/model.hpp"
#include "hermite_flow/selection.hpp"

namespace hermite_flow {

// Emergence time 1 / (4 I (I-1) sigma_hat_{2I}^2 a_p eta vbar2_init^{I-1}).
double predicted_time(double a_p, double vbar2_init, double eta, const Activation& act);

// Closed-form solution of d/dt vbar^2 = 4 I sigma_hat^2 a eta vbar^{2I}:
//   (vbar2_init^{-(I-1)} - 4 I (I-1) sigma_hat^2 a eta t)^{-1/(I-1)}.
// Throws Error("post-transition") once t reaches the blow-up time, which
// coincides with predicted_time.
double ode_overlap(double t, double vbar2_init, double a, double eta, const Activation& act);

// Staircase sum_p a_p^2 1{t < T_p}. Uses the sum-of-squares convention (no
// factor 1/2), so simulated population losses compare as 2 L(t).
double idealized_loss(double t, std::span<const double> thresholds, std::span<const double> a);

struct ScalingExponents {
  double time_exp = 0.0;              // (1 - 2b) / b
  double width_exp = 0.0;             // 1 - 2b
  double compute_opt_loss_exp = 0.0;  // (1 - 2b) / (1 + b)
  double compute_opt_width_exp = 0.0; // 1 / (1 + b)
  double unstable_exp = 0.0;          // (1 - 2b) / (2b)

  nlohmann::json to_json() const;
};

// Throws Error("heavy-tailed regime ...") for beta <= 1/2.
ScalingExponents scaling_exponents(double beta);

struct SlopeFit {
  double slope = 0.0;
  double std_error = 0.0;
  double intercept = 0.0;
  int points = 0;
};

// OLS of log L on log t over points with L strictly inside (l_lo, l_hi).
// Throws Error when fewer than five points qualify.
SlopeFit fit_slope(std::span<const std::pair<double, double>> series, double l_hi, double l_lo);

// Emergence-time predictions for the greedy-matched pairs of an initialization.
// "realized" uses the actual vbar^2_{p,pi(p)}(0); "typical" replaces it by
// log(m)/d.
struct Prediction {
  std::vector<double> t_realized;
  std::vector<double> t_typical;
  std::vector<double> strengths;  // a_{pi(p)}
  std::vector<double> vbar2_init;
  bool has_exponents = false;
  ScalingExponents exponents;

  nlohmann::json to_json() const;
};

Prediction predict(const TeacherModel& teacher, const SelectionMap& selection,
                   const OverlapView& view, double eta, const Activation& act,
                   double beta = -1.0);

}  // namespace hermite_flow
