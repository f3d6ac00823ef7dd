#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hermite_flow/hermite.hpp"

namespace hermite_flow {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Additive teacher f_*(x) = sum_p a_p sigma(x_p). Direction p is the standard
// basis vector e_p, so only the strengths and the ambient dimension are kept.
class TeacherModel {
 public:
  // a must be non-negative, sorted descending, with sum a_p^2 = 1 (1e-10), and
  // a.size() <= d.
  TeacherModel(std::vector<double> a, int d);

  // a_p = p^{-beta} / Z with Z = (sum_p p^{-2 beta})^{1/2}.
  static TeacherModel power_law(int width, double beta, int d);

  const std::vector<double>& a() const { return a_; }
  int d() const { return d_; }
  int width() const { return static_cast<int>(a_.size()); }
  double max_strength() const { return a_.front(); }

 private:
  std::vector<double> a_;
  int d_;
};

// Row k of V is neuron v_k; its effective second-layer weight is |v_k|^2.
struct StudentState {
  Matrix V;
  long step = 0;

  int width() const { return static_cast<int>(V.rows()); }
  int dim() const { return static_cast<int>(V.cols()); }
};

// Normalized summary statistics of a student against the teacher basis.
struct OverlapView {
  Matrix vbar;         // m x P, <v_k, e_p> / |v_k|
  Vector norms_sq;     // m
  Matrix gram;         // m x m, <vbar_k, vbar_l>
  Vector inf_norm_sq;  // m, max_j vbar_{k,j}^2 over all d coordinates
};

OverlapView overlap_view(const TeacherModel& teacher, const StudentState& student);

// Closed-form population loss via the Hermite correlation kernel.
double population_loss(const TeacherModel& teacher, const StudentState& student,
                       const Activation& act);

// Full Euclidean gradient of the population loss, one row per neuron,
// assembled from its radial and tangent components.
Matrix population_grad(const TeacherModel& teacher, const StudentState& student,
                       const Activation& act);

// <grad_{v_k} L, v_k> for every k, straight from the radial formula
// 2|v_k|^2 (sum_l |v_l|^2 K(<vbar_k,vbar_l>) - sum_p a_p K(vbar_{k,p})).
Vector radial_derivatives(const TeacherModel& teacher, const StudentState& student,
                          const Activation& act);

double model_output(std::span<const double> x, const StudentState& student, const Activation& act);
double teacher_output(std::span<const double> x, const TeacherModel& teacher,
                      const Activation& act);
double sample_loss(std::span<const double> x, const TeacherModel& teacher,
                   const StudentState& student, const Activation& act);

// Gradient of 0.5 (f_*(x) - f(x))^2:
//   -(f_* - f) [2 sigma(vbar_k.x) v_k + |v_k| sigma'(vbar_k.x)(I - vbar_k vbar_k^T) x].
Matrix sample_grad(std::span<const double> x, const TeacherModel& teacher,
                   const StudentState& student, const Activation& act);

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  long samples = 0;
};

// Mean of sample_loss over n i.i.d. N(0, I_d) inputs. Samples are split into a
// fixed number of shards whose streams depend only on (seed, shard), so the
// estimate does not depend on the thread count.
McEstimate mc_population_loss(const TeacherModel& teacher, const StudentState& student,
                              const Activation& act, long n, std::uint64_t seed);

// Entrywise mean and standard error of sample_grad over n fresh inputs.
struct McGradient {
  Matrix mean;
  Matrix std_error;
  long samples = 0;
};
McGradient mc_sample_grad(const TeacherModel& teacher, const StudentState& student,
                          const Activation& act, long n, std::uint64_t seed);

}  // namespace hermite_flow
