#pragma once

// Hot loops shared by the simulator. Each kernel has an OpenMP/BLAS-style
// production path and a plain serial reference (reference.hpp) that the tests
// hold it against; bench/ compares their throughput.

#include <cstdint>

#include "hermite_flow/model.hpp"

namespace hermite_flow::kernels {

struct PopulationTerms {
  double loss = 0.0;
  Matrix grad;    // m x d
  Vector radial;  // <grad_k, v_k>
  Vector norms_sq;
};

// Loss, gradient and radial derivatives in one pass: two m x m x d products
// (Gram matrix and interaction term) plus row-parallel assembly.
PopulationTerms population_terms(const TeacherModel& teacher, const Matrix& V,
                                 const Activation& act, bool with_grad = true);

// Scratch buffers reused across population_terms_into calls.
struct Workspace {
  Vector nrm;
  Matrix vbar;
  Matrix gram;
  Matrix w;
  Matrix a;
  Matrix t;
  Vector coef;
};

// Allocation-free variant once out and ws have been sized by a first call.
void population_terms_into(const TeacherModel& teacher, const Matrix& V, const Activation& act,
                           bool with_grad, PopulationTerms& out, Workspace& ws);

// Number of independent RNG shards used by the Monte Carlo kernels.
inline constexpr int kMonteCarloShards = 64;

struct ShardMoments {
  long count = 0;
  double mean = 0.0;
  double m2 = 0.0;  // Welford sum of squared deviations
};

McEstimate mc_loss(const TeacherModel& teacher, const Matrix& V, const Activation& act, long n,
                   std::uint64_t seed);

McGradient mc_grad(const TeacherModel& teacher, const Matrix& V, const Activation& act, long n,
                   std::uint64_t seed);

// Writes the per-sample gradient into grad (m x d) and returns the residual
// f_*(x) - f(x).
double sample_grad_into(std::span<const double> x, const TeacherModel& teacher, const Matrix& V,
                        const Activation& act, Matrix& grad);

// In-place online SGD step v_k -= eta * sample_grad_k(x) for every row, all
// rows using the pre-update residual. Returns the largest new |v_k|^2 (NaN
// propagates).
double sgd_update(std::span<const double> x, const TeacherModel& teacher, Matrix& V,
                  const Activation& act, double eta);

}  // namespace hermite_flow::kernels
