#include "hermite_flow/theory.hpp"

#include <cmath>
#include <string>

#include "hermite_flow/errors.hpp"

namespace hermite_flow {

namespace {

double rate_constant(double a, double eta, const Activation& act) {
  const int I = act.info_exponent_half();
  const double s = act.leading_coefficient();
  return 4.0 * I * (I - 1) * s * s * a * eta;
}

}  // namespace

double predicted_time(double a_p, double vbar2_init, double eta, const Activation& act) {
  if (!(a_p > 0.0) || !(vbar2_init > 0.0) || !(eta > 0.0))
    throw Error("predicted_time: arguments must be positive");
  const int I = act.info_exponent_half();
  return 1.0 / (rate_constant(a_p, eta, act) * std::pow(vbar2_init, I - 1));
}

double ode_overlap(double t, double vbar2_init, double a, double eta, const Activation& act) {
  const int I = act.info_exponent_half();
  const double base = std::pow(vbar2_init, -(I - 1)) - rate_constant(a, eta, act) * t;
  if (!(base > 0.0) || t >= predicted_time(a, vbar2_init, eta, act))
    throw Error("post-transition: t is at or beyond the ODE blow-up time");
  return std::pow(base, -1.0 / (I - 1));
}

double idealized_loss(double t, std::span<const double> thresholds, std::span<const double> a) {
  if (thresholds.size() != a.size()) throw Error("idealized_loss: size mismatch");
  double loss = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p)
    if (t < thresholds[p]) loss += a[p] * a[p];
  return loss;
}

nlohmann::json ScalingExponents::to_json() const {
  return {{"time_exp", time_exp},
          {"width_exp", width_exp},
          {"compute_opt_loss_exp", compute_opt_loss_exp},
          {"compute_opt_width_exp", compute_opt_width_exp},
          {"unstable_exp", unstable_exp}};
}

ScalingExponents scaling_exponents(double beta) {
  if (!(beta > 0.5))
    throw Error("heavy-tailed regime: scaling exponents need beta > 1/2 (got " +
                std::to_string(beta) + ")");
  ScalingExponents e;
  const double num = 1.0 - 2.0 * beta;
  e.time_exp = num / beta;
  e.width_exp = num;
  e.compute_opt_loss_exp = num / (1.0 + beta);
  e.compute_opt_width_exp = 1.0 / (1.0 + beta);
  e.unstable_exp = num / (2.0 * beta);
  return e;
}

SlopeFit fit_slope(std::span<const std::pair<double, double>> series, double l_hi, double l_lo) {
  std::vector<double> xs, ys;
  for (auto [t, l] : series) {
    if (t > 0.0 && l > l_lo && l < l_hi) {
      xs.push_back(std::log(t));
      ys.push_back(std::log(l));
    }
  }
  const int n = static_cast<int>(xs.size());
  if (n < 5)
    throw Error("fit_slope: only " + std::to_string(n) + " points inside the loss window");
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  SlopeFit fit;
  fit.points = n;
  if (!(sxx > 0.0)) throw Error("fit_slope: all points share one time value");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ssr = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = ys[i] - fit.intercept - fit.slope * xs[i];
    ssr += r * r;
  }
  fit.std_error = std::sqrt(ssr / (n - 2) / sxx);
  return fit;
}

nlohmann::json Prediction::to_json() const {
  nlohmann::json j = {{"t_realized", t_realized},
                      {"t_typical", t_typical},
                      {"strengths", strengths},
                      {"vbar2_init", vbar2_init}};
  if (has_exponents) j["exponents"] = exponents.to_json();
  return j;
}

Prediction predict(const TeacherModel& teacher, const SelectionMap& selection,
                   const OverlapView& view, double eta, const Activation& act, double beta) {
  Prediction pred;
  const double typical = std::log(static_cast<double>(view.vbar.rows())) / teacher.d();
  for (int p = 0; p < selection.p_star; ++p) {
    const int k = selection.student_order[p];
    const int q = selection.pi[p];
    const double a = teacher.a()[q];
    const double o2 = view.vbar(k, q) * view.vbar(k, q);
    pred.strengths.push_back(a);
    pred.vbar2_init.push_back(o2);
    const bool ok = a > 0.0 && o2 > 0.0;
    pred.t_realized.push_back(ok ? predicted_time(a, o2, eta, act) : kUnbounded);
    pred.t_typical.push_back(a > 0.0 && typical > 0.0 ? predicted_time(a, typical, eta, act)
                                                       : kUnbounded);
  }
  if (beta > 0.5) {
    pred.has_exponents = true;
    pred.exponents = scaling_exponents(beta);
  }
  return pred;
}

}  // namespace hermite_flow
