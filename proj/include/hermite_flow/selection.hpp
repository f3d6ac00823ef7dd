#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

#include "hermite_flow/model.hpp"

namespace hermite_flow {

// Greedy maximum selection over the matrix a_q vbar_{k,q}^{2I-2}.
//   student_order[p], pi[p] for p < p_star are the matched pairs in the order
//   they were picked; the remaining students/teachers follow in index order.
struct SelectionMap {
  std::vector<int> pi;             // length P, teacher permutation
  std::vector<int> student_order;  // length m, student permutation
  int p_star = 0;
  Matrix score_matrix;  // m x P, original (unpermuted) indexing

  nlohmann::json to_json() const;
  static SelectionMap from_json(const nlohmann::json& j);
};

// score(k, q) = a_q (vbar_{k,q}^2)^{I-1}; nonnegative regardless of sign.
Matrix selection_scores(const OverlapView& view, std::span<const double> a, int info_exponent_half);

// Repeatedly takes the largest residual entry (ties to lowest row, then
// column) and removes its row and column, p_star times.
SelectionMap greedy_select(const Matrix& scores, int p_star);

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

// Largest slacks for which the row, column and threshold gap conditions hold
// at initialization, plus the regularity scalars. A delta over an empty index
// set, or with a zero denominator everywhere, is kUnbounded.
struct GapStats {
  double delta_r = kUnbounded;
  double delta_c = kUnbounded;
  double delta_t = kUnbounded;
  double max_inf_norm_sq = 0.0;
  double min_diag_overlap_sq = 0.0;
  double min_max_unmatched_sq = 0.0;

  nlohmann::json to_json() const;
};

GapStats gap_stats(const SelectionMap& selection, const OverlapView& view, int p_star);

// Near-collision statistics of a_i vbar_i^{2I-2} vs a_j vbar_j^{2I-2} for
// freshly initialized neurons, against the Cauchy-ratio prediction.
struct GapDistribution {
  std::vector<double> deltas;
  std::vector<double> empirical_freq;
  std::vector<double> cauchy_bound;  // 2 delta / pi
  std::vector<double> cauchy_exact;  // pair-averaged exact Cauchy probability
  long pairs_tested = 0;
};

// Each trial draws m neurons uniformly on S^{d-1}; every unordered teacher
// pair i < j in [P] of every neuron is one collision test.
GapDistribution init_gap_distribution(int d, int m, std::span<const double> a,
                                      int info_exponent_half, long trials, std::uint64_t seed,
                                      std::vector<double> deltas);

// Exact probability that a_i vbar_i^{2I-2} lies in (1 +- delta) a_j vbar_j^{2I-2}
// when vbar_i / vbar_j is standard Cauchy.
double cauchy_collision_probability(double a_i, double a_j, int info_exponent_half, double delta);

}  // namespace hermite_flow
