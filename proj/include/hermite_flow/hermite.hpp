#pragma once

#include <functional>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

namespace hermite_flow {

// Normalized probabilists' Hermite polynomial h_k = He_k / sqrt(k!).
double hermite_eval(int k, double x);

// d/dx h_k(x) = sqrt(k) h_{k-1}(x); zero for k = 0.
double hermite_deriv_eval(int k, double x);

// Fills out[0..max_degree] with h_0(x)..h_max_degree(x).
void hermite_table(int max_degree, double x, std::span<double> out);

// n-point Gauss-Hermite rule for the standard Gaussian measure (weights sum
// to one), computed by Golub-Welsch.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_hermite_rule(int n);

// An even link function with information exponent 2I >= 4, stored through its
// Hermite coefficients sigma_hat_{2i}. The coefficient vector always has unit
// Euclidean norm, i.e. ||sigma||_{L^2(gamma)} = 1.
class Activation {
 public:
  // Rescales to unit norm. Throws ConfigError on odd degrees, degrees below 4,
  // negative degrees, or an all-zero vector.
  static Activation from_coefficients(const std::map<int, double>& coeffs);
  static Activation pure(int degree);
  static Activation from_json(const nlohmann::json& j);
  // Accepts either {"coeffs": {...}} objects or shorthand strings "h4", "h6".
  static Activation from_spec(const nlohmann::json& j);

  nlohmann::json to_json() const;

  const std::map<int, double>& coeffs() const { return coeffs_; }
  int info_exponent_half() const { return info_half_; }
  int info_exponent() const { return 2 * info_half_; }
  int max_degree() const { return max_degree_; }
  double leading_coefficient() const { return coeffs_.begin()->second; }

  double eval(double z) const;
  double deriv(double z) const;
  // sigma(z) and sigma'(z) from one recurrence pass.
  void eval_with_deriv(double z, double& value, double& slope) const;

  // K(c) = sum_i sigma_hat_{2i}^2 c^{2i}.
  double kernel(double c) const;
  // K'(c) = sum_i 2i sigma_hat_{2i}^2 c^{2i-1}.
  double kernel_deriv(double c) const;

 private:
  Activation() = default;

  std::map<int, double> coeffs_;
  std::vector<double> dense_;       // dense_[k] = sigma_hat_k, k = 0..max_degree
  std::vector<double> kernel_c2_;   // kernel_c2_[i] = sigma_hat_{2i}^2
  int info_half_ = 0;
  int max_degree_ = 0;
};

// Projects f onto h_0..h_D with an n-node Gauss-Hermite rule (n = 2D+1 when
// quad_points <= 0), zeroes coefficients below 1e-8, renormalizes, and
// rejects odd or degree < 4 content above 1e-6.
Activation expand_activation(const std::function<double(double)>& f, int max_degree,
                             int quad_points = 0);

inline double activation_eval(const Activation& act, double z) { return act.eval(z); }
inline double activation_deriv(const Activation& act, double z) { return act.deriv(z); }
inline double correlation_kernel(const Activation& act, double c) { return act.kernel(c); }

}  // namespace hermite_flow
