#pragma once

// Serial reference implementations. They evaluate the same quantities as the
// kernels in kernels.hpp through plain loops and, for the population gradient,
// through the unsplit per-term derivative of each Hermite component instead
// of the radial/tangent assembly.

#include <cstdint>

#include "hermite_flow/kernels.hpp"

namespace hermite_flow::reference {

kernels::PopulationTerms population_terms(const TeacherModel& teacher, const Matrix& V,
                                          const Activation& act);

McEstimate mc_loss(const TeacherModel& teacher, const Matrix& V, const Activation& act, long n,
                   std::uint64_t seed);

}  // namespace hermite_flow::reference
