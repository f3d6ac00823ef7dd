#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "hermite_flow/dynamics.hpp"
#include "hermite_flow/errors.hpp"
#include "hermite_flow/rng.hpp"
#include "hermite_flow/selection.hpp"

using namespace hermite_flow;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix M(rows.size(), rows.begin()->size());
  int i = 0;
  for (const auto& r : rows) {
    int j = 0;
    for (double v : r) M(i, j++) = v;
    ++i;
  }
  return M;
}

// Removal loop written independently: repeatedly scan a shrinking copy.
std::pair<std::vector<int>, std::vector<int>> brute_force(Matrix M, int p_star) {
  std::vector<int> rows, cols;
  for (int s = 0; s < p_star; ++s) {
    Eigen::Index r = 0, c = 0;
    M.maxCoeff(&r, &c);
    rows.push_back(static_cast<int>(r));
    cols.push_back(static_cast<int>(c));
    M.row(r).setConstant(-1.0);
    M.col(c).setConstant(-1.0);
  }
  return {rows, cols};
}

OverlapView dummy_view(int m, int P) {
  OverlapView v;
  v.vbar = Matrix::Zero(m, P);
  v.norms_sq = Vector::Ones(m);
  v.gram = Matrix::Identity(m, m);
  v.inf_norm_sq = Vector::Zero(m);
  return v;
}

}  // namespace

TEST(Greedy, HandWalkedExamples) {
  auto s = greedy_select(mat({{0.5, 0.4}, {0.45, 0.2}}), 2);
  EXPECT_EQ(s.pi, (std::vector<int>{0, 1}));
  EXPECT_EQ(s.student_order, (std::vector<int>{0, 1}));

  s = greedy_select(mat({{0.3, 0.6}, {0.2, 0.1}}), 2);
  EXPECT_EQ(s.pi, (std::vector<int>{1, 0}));
  EXPECT_EQ(s.student_order, (std::vector<int>{0, 1}));
}

TEST(Greedy, TiesGoToLowestRowThenColumn) {
  const auto s = greedy_select(mat({{0.1, 0.5, 0.5}, {0.5, 0.5, 0.1}}), 1);
  EXPECT_EQ(s.student_order.front(), 0);
  EXPECT_EQ(s.pi.front(), 1);
  EXPECT_EQ(s.pi, (std::vector<int>{1, 0, 2}));
  EXPECT_EQ(s.student_order, (std::vector<int>{0, 1}));
}

TEST(Greedy, MatchesBruteForceAndGreedyProperty) {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Matrix M(6, 5);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 5; ++j) M(i, j) = u(rng);
    const int p_star = 1 + rep % 5;
    const auto s = greedy_select(M, p_star);
    const auto [rows, cols] = brute_force(M, p_star);
    for (int p = 0; p < p_star; ++p) {
      EXPECT_EQ(s.student_order[p], rows[p]);
      EXPECT_EQ(s.pi[p], cols[p]);
    }
    // replay: the selected entry dominates its residual submatrix
    std::vector<char> ru(6, 0), cu(5, 0);
    for (int p = 0; p < p_star; ++p) {
      const double chosen = M(s.student_order[p], s.pi[p]);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j)
          if (!ru[i] && !cu[j]) EXPECT_GE(chosen, M(i, j));
      ru[s.student_order[p]] = 1;
      cu[s.pi[p]] = 1;
    }
    auto pi = s.pi;
    std::sort(pi.begin(), pi.end());
    for (int q = 0; q < 5; ++q) EXPECT_EQ(pi[q], q);
    auto so = s.student_order;
    std::sort(so.begin(), so.end());
    for (int k = 0; k < 6; ++k) EXPECT_EQ(so[k], k);
  }
}

TEST(Greedy, RejectsOversizedPStar) {
  EXPECT_THROW(greedy_select(Matrix::Ones(3, 2), 3), Error);
}

TEST(Greedy, JsonRoundTrip) {
  const auto s = greedy_select(mat({{0.3, 0.6}, {0.2, 0.1}, {0.7, 0.0}}), 2);
  const auto back = SelectionMap::from_json(s.to_json());
  EXPECT_EQ(back.pi, s.pi);
  EXPECT_EQ(back.student_order, s.student_order);
  EXPECT_EQ(back.p_star, s.p_star);
  EXPECT_EQ(back.score_matrix, s.score_matrix);
}

TEST(Scores, UseSquaredOverlapPowers) {
  OverlapView v = dummy_view(2, 2);
  v.vbar = mat({{-0.6, 0.8}, {0.3, 0.1}});
  const std::vector<double> a{0.8, 0.6};
  const Matrix s2 = selection_scores(v, a, 2);
  EXPECT_NEAR(s2(0, 0), 0.8 * 0.36, 1e-15);
  EXPECT_NEAR(s2(0, 1), 0.6 * 0.64, 1e-15);
  const Matrix s3 = selection_scores(v, a, 3);
  EXPECT_NEAR(s3(1, 0), 0.8 * 0.09 * 0.09, 1e-15);
  EXPECT_GE(s3.minCoeff(), 0.0);
}

TEST(Gaps, DiagonalIsUnbounded) {
  Matrix M = Matrix::Zero(3, 3);
  M(0, 0) = 0.9;
  M(1, 1) = 0.5;
  M(2, 2) = 0.2;
  const auto s = greedy_select(M, 3);
  const auto g = gap_stats(s, dummy_view(3, 3), 3);
  EXPECT_TRUE(std::isinf(g.delta_r));
  EXPECT_TRUE(std::isinf(g.delta_c));
  EXPECT_TRUE(std::isinf(g.delta_t));
  EXPECT_EQ(g.to_json().at("delta_r"), "unbounded");
}

TEST(Gaps, RowGapArithmetic) {
  const auto s = greedy_select(mat({{0.5, 0.4}, {0.45, 0.2}}), 2);
  const auto g = gap_stats(s, dummy_view(2, 2), 2);
  EXPECT_NEAR(g.delta_r, 0.25, 1e-15);
  EXPECT_NEAR(g.delta_c, 0.5 / 0.45 - 1, 1e-15);
  EXPECT_TRUE(std::isinf(g.delta_t));
}

TEST(Gaps, MatchDoubleLoopOracle) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const int m = 7, P = 5, ps = 1 + rep % 4;
    Matrix M(m, P);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < P; ++j) M(i, j) = u(rng);
    const auto s = greedy_select(M, ps);
    const auto g = gap_stats(s, dummy_view(m, P), ps);
    // permuted matrix, then minima straight from the definitions
    Matrix S(m, P);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < P; ++j) S(i, j) = M(s.student_order[i], s.pi[j]);
    double dr = INFINITY, dc = INFINITY, dt = INFINITY;
    for (int p = 0; p < ps; ++p) {
      for (int q = p + 1; q < P; ++q) dr = std::min(dr, S(p, p) / S(p, q) - 1);
      for (int k = p + 1; k < m; ++k) dc = std::min(dc, S(p, p) / S(k, p) - 1);
    }
    for (int k = ps; k < m; ++k)
      for (int q = ps; q < P; ++q) dt = std::min(dt, S(ps - 1, ps - 1) / S(k, q) - 1);
    EXPECT_NEAR(g.delta_r, dr, 1e-12);
    EXPECT_NEAR(g.delta_c, dc, 1e-12);
    EXPECT_NEAR(g.delta_t, dt, 1e-12);
    EXPECT_GE(g.delta_r, 0.0);
    EXPECT_GE(g.delta_c, 0.0);
    EXPECT_GE(g.delta_t, 0.0);
  }
}

TEST(Gaps, PositiveForSampledInitializations) {
  const auto t = TeacherModel::power_law(20, 0.8, 400);
  const int p_star = static_cast<int>(std::floor(40 / std::log(40.0)));
  int positive = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto init = init_student(400, 40, 1.0, mix_seed(77, {seed}));
    const auto view = overlap_view(t, init);
    const auto sel = greedy_select(selection_scores(view, t.a(), 2), p_star);
    const auto g = gap_stats(sel, view, p_star);
    positive += g.delta_r > 0 && g.delta_c > 0 && g.delta_t > 0;
  }
  EXPECT_GE(positive, 990);
}

TEST(Collisions, CauchyBoundAndLinearity) {
  const std::vector<double> a{std::sqrt(0.5), std::sqrt(0.5)};
  const auto g = init_gap_distribution(1000, 1, a, 2, 100000, 5, {0.01, 0.02});
  EXPECT_EQ(g.pairs_tested, 100000);
  EXPECT_LE(g.empirical_freq[0], 2 / std::numbers::pi * 0.01 * 1.1);
  EXPECT_NEAR(g.cauchy_bound[0], 2 / std::numbers::pi * 0.01, 1e-15);
  // binomial standard error of the ratio, propagated from both counts
  const double f1 = g.empirical_freq[0], f2 = g.empirical_freq[1];
  const double se = 2 * std::sqrt(f1 / 1e5) / f1 + std::sqrt(f2 / 1e5) / f1;
  EXPECT_NEAR(f2 / f1, 2.0, 3 * se);
}

TEST(Collisions, ExactCauchyProbability) {
  // a_i = a_j, I = 2: P(|X/Y| in (1-d, 1+d)) for a standard Cauchy ratio
  const double d = 0.05;
  const double p = cauchy_collision_probability(1.0, 1.0, 2, d);
  EXPECT_NEAR(p, 2 / std::numbers::pi * (std::atan(std::sqrt(1 + d)) - std::atan(std::sqrt(1 - d))),
              1e-15);
  EXPECT_LE(p, 2 * d / std::numbers::pi);
}

TEST(Collisions, RejectsBadArguments) {
  const std::vector<double> a{1.0};
  EXPECT_THROW(init_gap_distribution(10, 1, a, 2, 1000, 1, {0.01}), Error);
  const std::vector<double> b{std::sqrt(0.5), std::sqrt(0.5)};
  EXPECT_THROW(init_gap_distribution(10, 1, b, 2, 10, 1, {0.01}), Error);
}

TEST(OrderStatistics, KthLargestSquaredNormalExceedsLogRatio) {
  const int m = 4000, K = 8;
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto engine = make_engine(seed, Stream::kInstances, {4000});
    StandardNormal n;
    std::vector<double> z(m);
    for (auto& v : z) v = std::pow(n(engine), 2);
    std::nth_element(z.begin(), z.begin() + (K - 1), z.end(), std::greater<>());
    hits += z[K - 1] > std::log(static_cast<double>(m) / K);
  }
  EXPECT_GE(hits, 950);
}
