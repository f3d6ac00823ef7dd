#include "hermite_flow/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hermite_flow/errors.hpp"
#include "hermite_flow/kernels.hpp"

namespace hermite_flow {

TeacherModel::TeacherModel(std::vector<double> a, int d) : a_(std::move(a)), d_(d) {
  if (a_.empty()) throw ConfigError("teacher: needs at least one direction");
  if (static_cast<int>(a_.size()) > d_)
    throw ConfigError("teacher: width P=" + std::to_string(a_.size()) +
                      " exceeds dimension d=" + std::to_string(d_));
  double s = 0.0;
  for (std::size_t p = 0; p < a_.size(); ++p) {
    if (!(a_[p] >= 0.0)) throw ConfigError("teacher: strengths must be non-negative");
    if (p > 0 && a_[p] > a_[p - 1]) throw ConfigError("teacher: strengths must be sorted descending");
    s += a_[p] * a_[p];
  }
  if (std::abs(s - 1.0) > 1e-10)
    throw ConfigError("teacher: sum of squared strengths is " + std::to_string(s) + ", expected 1");
}

TeacherModel TeacherModel::power_law(int width, double beta, int d) {
  if (width < 1) throw ConfigError("teacher: width must be positive");
  if (beta < 0.0) throw ConfigError("teacher: power-law exponent must be >= 0");
  std::vector<double> a(width);
  double z = 0.0;
  for (int p = 0; p < width; ++p) {
    a[p] = std::pow(static_cast<double>(p + 1), -beta);
    z += a[p] * a[p];
  }
  z = std::sqrt(z);
  for (double& ap : a) ap /= z;
  return TeacherModel(std::move(a), d);
}

OverlapView overlap_view(const TeacherModel& teacher, const StudentState& student) {
  if (student.dim() != teacher.d())
    throw Error("overlap_view: student dimension " + std::to_string(student.dim()) +
                " != teacher dimension " + std::to_string(teacher.d()));
  const Matrix& V = student.V;
  OverlapView view;
  view.norms_sq = V.rowwise().squaredNorm();
  for (Eigen::Index k = 0; k < view.norms_sq.size(); ++k)
    if (!(view.norms_sq(k) > 0.0)) throw DegenerateNeuronError(static_cast<int>(k));
  const Matrix full = view.norms_sq.cwiseSqrt().cwiseInverse().asDiagonal() * V;
  view.vbar = full.leftCols(teacher.width());
  view.gram.noalias() = full * full.transpose();
  view.gram.diagonal().setOnes();
  view.inf_norm_sq = full.cwiseAbs2().rowwise().maxCoeff();
  return view;
}

double population_loss(const TeacherModel& teacher, const StudentState& student,
                       const Activation& act) {
  return kernels::population_terms(teacher, student.V, act, false).loss;
}

Matrix population_grad(const TeacherModel& teacher, const StudentState& student,
                       const Activation& act) {
  return kernels::population_terms(teacher, student.V, act, true).grad;
}

Vector radial_derivatives(const TeacherModel& teacher, const StudentState& student,
                          const Activation& act) {
  return kernels::population_terms(teacher, student.V, act, false).radial;
}

double model_output(std::span<const double> x, const StudentState& student, const Activation& act) {
  double f = 0.0;
  Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  for (Eigen::Index k = 0; k < student.V.rows(); ++k) {
    const double n2 = student.V.row(k).squaredNorm();
    if (!(n2 > 0.0)) throw DegenerateNeuronError(static_cast<int>(k));
    f += n2 * act.eval(student.V.row(k).dot(xv) / std::sqrt(n2));
  }
  return f;
}

double teacher_output(std::span<const double> x, const TeacherModel& teacher,
                      const Activation& act) {
  double f = 0.0;
  const auto& a = teacher.a();
  for (std::size_t p = 0; p < a.size(); ++p) f += a[p] * act.eval(x[p]);
  return f;
}

double sample_loss(std::span<const double> x, const TeacherModel& teacher,
                   const StudentState& student, const Activation& act) {
  const double r = teacher_output(x, teacher, act) - model_output(x, student, act);
  return 0.5 * r * r;
}

Matrix sample_grad(std::span<const double> x, const TeacherModel& teacher,
                   const StudentState& student, const Activation& act) {
  Matrix g;
  kernels::sample_grad_into(x, teacher, student.V, act, g);
  return g;
}

McEstimate mc_population_loss(const TeacherModel& teacher, const StudentState& student,
                              const Activation& act, long n, std::uint64_t seed) {
  return kernels::mc_loss(teacher, student.V, act, n, seed);
}

McGradient mc_sample_grad(const TeacherModel& teacher, const StudentState& student,
                          const Activation& act, long n, std::uint64_t seed) {
  return kernels::mc_grad(teacher, student.V, act, n, seed);
}

}  // namespace hermite_flow
