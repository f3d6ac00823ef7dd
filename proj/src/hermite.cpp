#include "hermite_flow/hermite.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "hermite_flow/errors.hpp"

namespace hermite_flow {

double hermite_eval(int k, double x) {
  if (k <= 0) return 1.0;
  double prev = 1.0;
  double cur = x;
  for (int j = 1; j < k; ++j) {
    double next = (x * cur - std::sqrt(static_cast<double>(j)) * prev) /
                  std::sqrt(static_cast<double>(j + 1));
    prev = cur;
    cur = next;
  }
  return cur;
}

double hermite_deriv_eval(int k, double x) {
  if (k <= 0) return 0.0;
  return std::sqrt(static_cast<double>(k)) * hermite_eval(k - 1, x);
}

void hermite_table(int max_degree, double x, std::span<double> out) {
  out[0] = 1.0;
  if (max_degree >= 1) out[1] = x;
  for (int j = 1; j < max_degree; ++j) {
    out[j + 1] = (x * out[j] - std::sqrt(static_cast<double>(j)) * out[j - 1]) /
                 std::sqrt(static_cast<double>(j + 1));
  }
}

QuadratureRule gauss_hermite_rule(int n) {
  if (n < 1) throw Error("gauss_hermite_rule: need at least one node");
  // Jacobi matrix of the monic probabilists' recurrence He_{k+1} = x He_k - k He_{k-1}.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    double b = std::sqrt(static_cast<double>(k));
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = solver.eigenvalues()(i);
    double v0 = solver.eigenvectors()(0, i);
    rule.weights[i] = v0 * v0;
  }
  return rule;
}

Activation Activation::from_coefficients(const std::map<int, double>& coeffs) {
  Activation act;
  double norm_sq = 0.0;
  for (auto [deg, c] : coeffs) {
    if (deg < 0) throw ConfigError("activation: negative Hermite degree " + std::to_string(deg));
    if (c == 0.0) continue;
    if (deg % 2 != 0)
      throw ConfigError("activation must be even: odd degree " + std::to_string(deg) +
                        " has coefficient " + std::to_string(c));
    if (deg < 4)
      throw ConfigError("activation needs information exponent >= 4: degree " +
                        std::to_string(deg) + " has coefficient " + std::to_string(c));
    act.coeffs_[deg] = c;
    norm_sq += c * c;
  }
  if (act.coeffs_.empty()) throw ConfigError("activation: all Hermite coefficients are zero");
  const double norm = std::sqrt(norm_sq);
  for (auto& [deg, c] : act.coeffs_) c /= norm;

  act.info_half_ = act.coeffs_.begin()->first / 2;
  act.max_degree_ = act.coeffs_.rbegin()->first;
  act.dense_.assign(act.max_degree_ + 1, 0.0);
  act.kernel_c2_.assign(act.max_degree_ / 2 + 1, 0.0);
  for (auto [deg, c] : act.coeffs_) {
    act.dense_[deg] = c;
    act.kernel_c2_[deg / 2] = c * c;
  }
  return act;
}

Activation Activation::pure(int degree) { return from_coefficients({{degree, 1.0}}); }

Activation Activation::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("coeffs"))
    throw ConfigError("activation JSON needs a \"coeffs\" object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "coeffs" && it.key() != "info_exponent")
      throw ConfigError("activation JSON: unknown key \"" + it.key() + "\"");
  }
  std::map<int, double> coeffs;
  for (auto it = j["coeffs"].begin(); it != j["coeffs"].end(); ++it) {
    std::size_t used = 0;
    int deg = 0;
    try {
      deg = std::stoi(it.key(), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != it.key().size())
      throw ConfigError("activation JSON: degree key \"" + it.key() + "\" is not an integer");
    coeffs[deg] = it.value().get<double>();
  }
  Activation act = from_coefficients(coeffs);
  if (j.contains("info_exponent") && j["info_exponent"].get<int>() != act.info_exponent()) {
    throw ConfigError("activation JSON: info_exponent " +
                      std::to_string(j["info_exponent"].get<int>()) +
                      " disagrees with coefficients (lowest degree " +
                      std::to_string(act.info_exponent()) + ")");
  }
  return act;
}

Activation Activation::from_spec(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s.size() >= 2 && s[0] == 'h') {
      std::size_t used = 0;
      int deg = -1;
      try {
        deg = std::stoi(s.substr(1), &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == s.size() - 1) return pure(deg);
    }
    throw ConfigError("activation: unrecognized shorthand \"" + s + "\" (expected e.g. \"h4\")");
  }
  return from_json(j);
}

nlohmann::json Activation::to_json() const {
  nlohmann::json coeffs = nlohmann::json::object();
  for (auto [deg, c] : coeffs_) coeffs[std::to_string(deg)] = c;
  return {{"coeffs", coeffs}, {"info_exponent", info_exponent()}};
}

void Activation::eval_with_deriv(double z, double& value, double& slope) const {
  double prev = 1.0;
  double cur = z;
  value = dense_[0] + (max_degree_ >= 1 ? dense_[1] * z : 0.0);
  slope = max_degree_ >= 1 ? dense_[1] : 0.0;
  for (int j = 1; j < max_degree_; ++j) {
    const double sj = std::sqrt(static_cast<double>(j + 1));
    double next = (z * cur - std::sqrt(static_cast<double>(j)) * prev) / sj;
    // h_{j+1}' = sqrt(j+1) h_j
    slope += dense_[j + 1] * sj * cur;
    value += dense_[j + 1] * next;
    prev = cur;
    cur = next;
  }
}

double Activation::eval(double z) const {
  double v, s;
  eval_with_deriv(z, v, s);
  return v;
}

double Activation::deriv(double z) const {
  double v, s;
  eval_with_deriv(z, v, s);
  return s;
}

double Activation::kernel(double c) const {
  const double c2 = c * c;
  double acc = 0.0;
  for (std::size_t i = kernel_c2_.size(); i-- > 0;) acc = acc * c2 + kernel_c2_[i];
  return acc;
}

double Activation::kernel_deriv(double c) const {
  const double c2 = c * c;
  double acc = 0.0;
  for (std::size_t i = kernel_c2_.size(); i-- > 1;)
    acc = acc * c2 + 2.0 * static_cast<double>(i) * kernel_c2_[i];
  return acc * c;
}

Activation expand_activation(const std::function<double(double)>& f, int max_degree,
                             int quad_points) {
  if (max_degree < 0) throw ConfigError("expand_activation: negative max_degree");
  const int n = quad_points > 0 ? quad_points : 2 * max_degree + 1;
  if (n < max_degree + 1)
    throw ConfigError("expand_activation: need at least max_degree+1 quadrature nodes");
  const QuadratureRule rule = gauss_hermite_rule(n);

  std::vector<double> coef(max_degree + 1, 0.0);
  std::vector<double> table(max_degree + 1);
  for (int i = 0; i < n; ++i) {
    const double fx = f(rule.nodes[i]) * rule.weights[i];
    hermite_table(max_degree, rule.nodes[i], table);
    for (int k = 0; k <= max_degree; ++k) coef[k] += fx * table[k];
  }

  double norm_sq = 0.0;
  for (double c : coef) norm_sq += c * c;
  if (!(norm_sq > 0.0) || !std::isfinite(norm_sq))
    throw ConfigError("expand_activation: expansion is identically zero");
  const double norm = std::sqrt(norm_sq);

  std::map<int, double> kept;
  for (int k = 0; k <= max_degree; ++k) {
    const double c = coef[k] / norm;
    const bool forbidden = (k % 2 != 0) || k < 4;
    if (forbidden && std::abs(c) > 1e-6) {
      throw ConfigError("expand_activation: degree " + std::to_string(k) +
                        " has normalized coefficient " + std::to_string(c) +
                        "; the link must be even with information exponent >= 4");
    }
    if (!forbidden && std::abs(c) >= 1e-8) kept[k] = c;
  }
  if (kept.empty()) throw ConfigError("expand_activation: no admissible coefficients survive");
  return Activation::from_coefficients(kept);
}

}  // namespace hermite_flow
