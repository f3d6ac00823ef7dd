#include "hermite_flow/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "hermite_flow/errors.hpp"
#include "hermite_flow/rng.hpp"

namespace hermite_flow {

namespace {

nlohmann::json delta_json(double v) {
  if (std::isinf(v)) return "unbounded";
  return v;
}

double delta_from_json(const nlohmann::json& j) {
  if (j.is_string()) return kUnbounded;
  return j.get<double>();
}

// min over pairs of num/den - 1, skipping den == 0 (ratio is +inf there).
struct RatioMin {
  double value = kUnbounded;
  void add(double num, double den) {
    if (den <= 0.0) return;
    value = std::min(value, num / den - 1.0);
  }
};

}  // namespace

nlohmann::json SelectionMap::to_json() const {
  nlohmann::json scores = nlohmann::json::array();
  for (Eigen::Index k = 0; k < score_matrix.rows(); ++k) {
    std::vector<double> row(score_matrix.cols());
    for (Eigen::Index q = 0; q < score_matrix.cols(); ++q) row[q] = score_matrix(k, q);
    scores.push_back(row);
  }
  return {{"pi", pi}, {"student_order", student_order}, {"p_star", p_star},
          {"score_matrix", scores}};
}

SelectionMap SelectionMap::from_json(const nlohmann::json& j) {
  SelectionMap s;
  s.pi = j.at("pi").get<std::vector<int>>();
  s.student_order = j.at("student_order").get<std::vector<int>>();
  s.p_star = j.at("p_star").get<int>();
  const auto& rows = j.at("score_matrix");
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index P = m > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  s.score_matrix.resize(m, P);
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index q = 0; q < P; ++q) s.score_matrix(k, q) = rows[k][q].get<double>();
  return s;
}

nlohmann::json GapStats::to_json() const {
  return {{"delta_r", delta_json(delta_r)},
          {"delta_c", delta_json(delta_c)},
          {"delta_t", delta_json(delta_t)},
          {"regularity",
           {{"max_inf_norm_sq", max_inf_norm_sq},
            {"min_diag_overlap_sq", min_diag_overlap_sq},
            {"min_max_unmatched_sq", min_max_unmatched_sq}}}};
}

Matrix selection_scores(const OverlapView& view, std::span<const double> a, int info_exponent_half) {
  const Eigen::Index m = view.vbar.rows();
  const Eigen::Index P = view.vbar.cols();
  Matrix s(m, P);
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index q = 0; q < P; ++q) {
      const double o2 = view.vbar(k, q) * view.vbar(k, q);
      s(k, q) = a[q] * std::pow(o2, info_exponent_half - 1);
    }
  return s;
}

SelectionMap greedy_select(const Matrix& scores, int p_star) {
  const int m = static_cast<int>(scores.rows());
  const int P = static_cast<int>(scores.cols());
  if (p_star < 0 || p_star > std::min(m, P))
    throw Error("greedy_select: p_star=" + std::to_string(p_star) + " exceeds min(m, P)");

  std::vector<char> row_used(m, 0), col_used(P, 0);
  SelectionMap sel;
  sel.p_star = p_star;
  sel.score_matrix = scores;
  for (int step = 0; step < p_star; ++step) {
    int best_k = -1, best_q = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < m; ++k) {
      if (row_used[k]) continue;
      for (int q = 0; q < P; ++q) {
        if (col_used[q]) continue;
        if (scores(k, q) > best) {
          best = scores(k, q);
          best_k = k;
          best_q = q;
        }
      }
    }
    row_used[best_k] = 1;
    col_used[best_q] = 1;
    sel.student_order.push_back(best_k);
    sel.pi.push_back(best_q);
  }
  for (int k = 0; k < m; ++k)
    if (!row_used[k]) sel.student_order.push_back(k);
  for (int q = 0; q < P; ++q)
    if (!col_used[q]) sel.pi.push_back(q);
  return sel;
}

GapStats gap_stats(const SelectionMap& selection, const OverlapView& view, int p_star) {
  const Matrix& S = selection.score_matrix;
  const auto& so = selection.student_order;
  const auto& pi = selection.pi;
  const int m = static_cast<int>(so.size());
  const int P = static_cast<int>(pi.size());
  if (p_star > selection.p_star) throw Error("gap_stats: p_star exceeds the selection's p_star");

  GapStats g;
  RatioMin row, col, thr;
  for (int p = 0; p < p_star; ++p) {
    const double diag = S(so[p], pi[p]);
    for (int q = p + 1; q < P; ++q) row.add(diag, S(so[p], pi[q]));
    // same column, so the a_{pi(p)} weight cancels
    for (int k = p + 1; k < m; ++k) col.add(diag, S(so[k], pi[p]));
  }
  if (p_star > 0) {
    const double corner = S(so[p_star - 1], pi[p_star - 1]);
    for (int k = p_star; k < m; ++k)
      for (int q = p_star; q < P; ++q) thr.add(corner, S(so[k], pi[q]));
  }
  g.delta_r = row.value;
  g.delta_c = col.value;
  g.delta_t = thr.value;

  g.max_inf_norm_sq = view.inf_norm_sq.size() > 0 ? view.inf_norm_sq.maxCoeff() : 0.0;
  g.min_diag_overlap_sq = kUnbounded;
  for (int p = 0; p < p_star; ++p) {
    const double o = view.vbar(so[p], pi[p]);
    g.min_diag_overlap_sq = std::min(g.min_diag_overlap_sq, o * o);
  }
  if (p_star == 0) g.min_diag_overlap_sq = 0.0;
  g.min_max_unmatched_sq = kUnbounded;
  if (m > p_star) {
    for (int q = 0; q < P; ++q) {
      double best = 0.0;
      for (int j = p_star; j < m; ++j) {
        const double o = view.vbar(so[j], q);
        best = std::max(best, o * o);
      }
      g.min_max_unmatched_sq = std::min(g.min_max_unmatched_sq, best);
    }
  } else {
    g.min_max_unmatched_sq = 0.0;
  }
  return g;
}

double cauchy_collision_probability(double a_i, double a_j, int info_exponent_half, double delta) {
  const double e = 1.0 / (2.0 * info_exponent_half - 2.0);
  const double hi = std::pow((1.0 + delta) * a_j / a_i, e);
  const double lo = std::pow(std::max(0.0, (1.0 - delta) * a_j / a_i), e);
  return 2.0 / std::numbers::pi * (std::atan(hi) - std::atan(lo));
}

GapDistribution init_gap_distribution(int d, int m, std::span<const double> a,
                                      int info_exponent_half, long trials, std::uint64_t seed,
                                      std::vector<double> deltas) {
  const int P = static_cast<int>(a.size());
  if (trials < 100) throw Error("init_gap_distribution: need at least 100 trials");
  if (P < 2 || P > d) throw Error("init_gap_distribution: need 2 <= P <= d");
  if (info_exponent_half < 2) throw Error("init_gap_distribution: need I >= 2");

  GapDistribution out;
  out.deltas = std::move(deltas);
  const std::size_t nd = out.deltas.size();
  std::vector<long> hits(nd, 0);
  const int shards = 64;

  std::vector<std::vector<long>> shard_hits(shards, std::vector<long>(nd, 0));
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < shards; ++s) {
    auto engine = make_engine(seed, Stream::kGapTrials, {static_cast<std::uint64_t>(s)});
    StandardNormal normal;
    std::vector<double> z(d);
    std::vector<double> score(P);
    const long count = trials / shards + (s < trials % shards ? 1 : 0);
    for (long t = 0; t < count; ++t) {
      for (int k = 0; k < m; ++k) {
        double n2 = 0.0;
        for (auto& zi : z) {
          zi = normal(engine);
          n2 += zi * zi;
        }
        for (int q = 0; q < P; ++q)
          score[q] = a[q] * std::pow(z[q] * z[q] / n2, info_exponent_half - 1);
        for (int i = 0; i < P; ++i)
          for (int j = i + 1; j < P; ++j)
            for (std::size_t k2 = 0; k2 < nd; ++k2) {
              const double dl = out.deltas[k2];
              if (score[i] > (1.0 - dl) * score[j] && score[i] < (1.0 + dl) * score[j])
                ++shard_hits[s][k2];
            }
      }
    }
  }
  for (const auto& h : shard_hits)
    for (std::size_t k = 0; k < nd; ++k) hits[k] += h[k];

  out.pairs_tested = trials * static_cast<long>(m) * P * (P - 1) / 2;
  for (std::size_t k = 0; k < nd; ++k) {
    const double dl = out.deltas[k];
    out.empirical_freq.push_back(static_cast<double>(hits[k]) /
                                 static_cast<double>(out.pairs_tested));
    out.cauchy_bound.push_back(2.0 * dl / std::numbers::pi);
    double exact = 0.0;
    int pairs = 0;
    for (int i = 0; i < P; ++i)
      for (int j = i + 1; j < P; ++j, ++pairs)
        exact += cauchy_collision_probability(a[i], a[j], info_exponent_half, dl);
    out.cauchy_exact.push_back(exact / pairs);
  }
  return out;
}

}  // namespace hermite_flow
