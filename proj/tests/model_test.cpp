#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "hermite_flow/errors.hpp"
#include "hermite_flow/model.hpp"

using namespace hermite_flow;

namespace {

StudentState random_student(int m, int d, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  StudentState s{Matrix(m, d), 0};
  for (int k = 0; k < m; ++k)
    for (int j = 0; j < d; ++j) s.V(k, j) = scale * n(rng);
  return s;
}

std::vector<double> random_x(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  std::vector<double> x(d);
  for (auto& v : x) v = n(rng);
  return x;
}

StudentState exact_fit(const TeacherModel& t) {
  StudentState s{Matrix::Zero(t.width(), t.d()), 0};
  for (int p = 0; p < t.width(); ++p) s.V(p, p) = std::sqrt(t.a()[p]);
  return s;
}

// Direct evaluation of the Hermite-sum loss, independent of the kernel path.
double loss_by_definition(const TeacherModel& t, const StudentState& s, const Activation& act) {
  const int m = s.width();
  double total = 0.0;
  for (const auto& [deg, c] : act.coeffs()) {
    double sum_a2 = 0.0;
    for (double a : t.a()) sum_a2 += a * a;
    double cross = 0.0, self = 0.0;
    for (int k = 0; k < m; ++k) {
      const double nk = s.V.row(k).norm();
      for (int p = 0; p < t.width(); ++p)
        cross += t.a()[p] * nk * nk * std::pow(s.V(k, p) / nk, deg);
      for (int l = 0; l < m; ++l) {
        const double nl = s.V.row(l).norm();
        self += nk * nk * nl * nl * std::pow(s.V.row(k).dot(s.V.row(l)) / (nk * nl), deg);
      }
    }
    total += c * c * (0.5 * sum_a2 - cross + 0.5 * self);
  }
  return total;
}

Matrix fd_grad(const std::function<double(const StudentState&)>& f, const StudentState& s,
               double h) {
  Matrix g(s.V.rows(), s.V.cols());
  for (Eigen::Index k = 0; k < s.V.rows(); ++k) {
    for (Eigen::Index j = 0; j < s.V.cols(); ++j) {
      StudentState p = s, q = s;
      p.V(k, j) += h;
      q.V(k, j) -= h;
      g(k, j) = (f(p) - f(q)) / (2 * h);
    }
  }
  return g;
}

}  // namespace

TEST(Teacher, PowerLawNormalization) {
  const auto t = TeacherModel::power_law(50, 0.8, 64);
  double s = 0.0;
  for (double a : t.a()) s += a * a;
  EXPECT_NEAR(s, 1.0, 1e-12);
  for (int p = 1; p < 50; ++p) {
    EXPECT_LT(t.a()[p], t.a()[p - 1]);
    EXPECT_NEAR(t.a()[p] / t.a()[0], std::pow(p + 1.0, -0.8), 1e-12);
  }
}

TEST(Teacher, RejectsInvalidStrengths) {
  EXPECT_THROW(TeacherModel({0.6, 0.8}, 4), ConfigError);
  EXPECT_THROW(TeacherModel({0.8, 0.5}, 4), ConfigError);
  EXPECT_THROW(TeacherModel({1.0, -0.0001}, 4), ConfigError);
  EXPECT_THROW(TeacherModel({0.8, 0.6}, 1), ConfigError);
  EXPECT_NO_THROW(TeacherModel({0.8, 0.6}, 2));
}

TEST(Overlap, Examples) {
  const TeacherModel t1({1.0}, 5);
  StudentState s{Matrix::Zero(1, 5), 0};
  s.V(0, 0) = 0.1;
  auto v = overlap_view(t1, s);
  EXPECT_DOUBLE_EQ(v.vbar(0, 0), 1.0);
  EXPECT_NEAR(v.norms_sq(0), 0.01, 1e-17);

  const TeacherModel t2({0.8, 0.6}, 5);
  s.V.setZero();
  s.V(0, 0) = 3;
  s.V(0, 1) = 4;
  v = overlap_view(t2, s);
  EXPECT_NEAR(v.vbar(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(v.vbar(0, 1), 0.8, 1e-15);

  StudentState o{Matrix::Zero(3, 5), 0};
  o.V(0, 2) = 2;
  o.V(1, 0) = -1;
  o.V(2, 4) = 0.5;
  v = overlap_view(t2, o);
  EXPECT_TRUE(v.gram.isApprox(Matrix::Identity(3, 3)));
}

TEST(Overlap, InvariantsAndDegenerateRows) {
  const auto t = TeacherModel::power_law(3, 0.8, 7);
  auto s = random_student(5, 7, 0.3, 2);
  const auto v = overlap_view(t, s);
  for (int k = 0; k < 5; ++k) {
    EXPECT_LE(v.vbar.row(k).squaredNorm(), 1 + 1e-12);
    EXPECT_NEAR(v.gram(k, k), 1.0, 1e-14);
  }
  EXPECT_TRUE(v.gram.isApprox(v.gram.transpose()));
  s.V.row(3).setZero();
  EXPECT_THROW(overlap_view(t, s), DegenerateNeuronError);
  EXPECT_THROW(population_loss(t, s, Activation::pure(4)), DegenerateNeuronError);
}

TEST(PopulationLoss, Examples) {
  const auto act = Activation::pure(4);
  const auto t = TeacherModel::power_law(3, 0.8, 6);
  EXPECT_NEAR(population_loss(t, exact_fit(t), act), 0.0, 1e-14);

  StudentState s{Matrix::Zero(1, 6), 0};
  s.V(0, 4) = std::sqrt(0.3);
  EXPECT_NEAR(population_loss(t, s, act), 0.5 + 0.09 / 2, 1e-14);
}

TEST(PopulationLoss, MatchesDirectHermiteSum) {
  const auto act = Activation::from_coefficients({{4, 0.8}, {6, 0.5}, {8, 0.3}});
  const auto t = TeacherModel::power_law(3, 0.6, 8);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = random_student(4, 8, 0.4, seed);
    EXPECT_NEAR(population_loss(t, s, act), loss_by_definition(t, s, act), 1e-12);
  }
}

TEST(PopulationLoss, SignFlipAndPermutationInvariance) {
  const auto act = Activation::from_coefficients({{4, 0.8}, {6, 0.6}});
  const auto t = TeacherModel::power_law(3, 0.8, 7);
  auto s = random_student(4, 7, 0.5, 9);
  const double base = population_loss(t, s, act);
  auto flipped = s;
  flipped.V.row(2) *= -1.0;
  EXPECT_NEAR(population_loss(t, flipped, act), base, 1e-14);
  auto perm = s;
  perm.V.row(0) = s.V.row(3);
  perm.V.row(3) = s.V.row(0);
  EXPECT_NEAR(population_loss(t, perm, act), base, 1e-14);
}

TEST(PopulationLoss, MatchesMonteCarlo) {
  const auto act = Activation::pure(4);
  const auto t = TeacherModel::power_law(3, 0.8, 8);
  const auto s = random_student(4, 8, 0.35, 4);
  const auto mc = mc_population_loss(t, s, act, 1000000, 17);
  EXPECT_EQ(mc.samples, 1000000);
  EXPECT_LE(std::abs(mc.estimate - population_loss(t, s, act)), 3 * mc.std_error);
  const auto again = mc_population_loss(t, s, act, 1000000, 17);
  EXPECT_EQ(mc.estimate, again.estimate);
  EXPECT_EQ(mc.std_error, again.std_error);
}

// A single unit-strength direction keeps sqrt(a)^2 = a exact in floating point.
TEST(PopulationLoss, MonteCarloAtExactFitIsZero) {
  const auto act = Activation::pure(4);
  const TeacherModel t({1.0}, 5);
  const auto mc = mc_population_loss(t, exact_fit(t), act, 1000, 3);
  EXPECT_EQ(mc.estimate, 0.0);
}

TEST(PopulationGrad, ZeroAtExactFit) {
  const auto act = Activation::from_coefficients({{4, 0.8}, {6, 0.6}});
  const auto t = TeacherModel::power_law(3, 0.8, 6);
  const Matrix g = population_grad(t, exact_fit(t), act);
  for (Eigen::Index k = 0; k < g.rows(); ++k) EXPECT_LE(g.row(k).norm(), 1e-9);
}

TEST(PopulationGrad, AlignedNeuronRadialDerivative) {
  const auto act = Activation::pure(4);
  const TeacherModel t({1.0}, 4);
  const double a = 1.0;
  StudentState s{Matrix::Zero(1, 4), 0};
  s.V(0, 0) = std::sqrt(a / 2);
  const Matrix g = population_grad(t, s, act);
  EXPECT_NEAR(g.row(0).dot(s.V.row(0)), -a * a / 2, 1e-14);
  EXPECT_NEAR(radial_derivatives(t, s, act)(0), -a * a / 2, 1e-14);
}

TEST(PopulationGrad, MatchesFiniteDifferences) {
  const auto act = Activation::pure(4);
  const auto t = TeacherModel::power_law(2, 0.8, 6);
  const auto s = random_student(3, 6, 0.5, 21);
  const Matrix g = population_grad(t, s, act);
  const Matrix fd =
      fd_grad([&](const StudentState& x) { return population_loss(t, x, act); }, s, 1e-5);
  EXPECT_LE((g - fd).norm() / fd.norm(), 1e-5);
}

TEST(PopulationGrad, RadialComponentMatchesFormula) {
  const auto act = Activation::from_coefficients({{4, 0.7}, {6, 0.5}, {8, 0.5}});
  const auto t = TeacherModel::power_law(4, 0.9, 10);
  for (std::uint64_t seed = 30; seed < 35; ++seed) {
    const auto s = random_student(5, 10, 0.4, seed);
    const Matrix g = population_grad(t, s, act);
    const Vector r = radial_derivatives(t, s, act);
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(g.row(k).dot(s.V.row(k)), r(k), 1e-10);
  }
}

TEST(Outputs, Examples) {
  const auto act = Activation::pure(4);
  const auto t = TeacherModel::power_law(3, 0.8, 5);
  std::vector<double> zero(5, 0.0);
  const double sum_a = t.a()[0] + t.a()[1] + t.a()[2];
  EXPECT_NEAR(teacher_output(zero, t, act), 3.0 / std::sqrt(24.0) * sum_a, 1e-14);

  StudentState s{Matrix::Zero(1, 5), 0};
  s.V(0, 0) = 1.7;
  std::mt19937_64 rng(3);
  const auto x = random_x(5, rng);
  EXPECT_NEAR(model_output(x, s, act), 1.7 * 1.7 * act.eval(x[0]), 1e-12);

  const auto r = random_student(3, 5, 0.5, 8);
  const double diff = teacher_output(x, t, act) - model_output(x, r, act);
  EXPECT_NEAR(sample_loss(x, t, r, act), 0.5 * diff * diff, 1e-14);
}

TEST(SampleGrad, ZeroWhenResidualVanishes) {
  const auto act = Activation::from_coefficients({{4, 0.8}, {6, 0.6}});
  const TeacherModel t({1.0}, 5);
  std::mt19937_64 rng(1);
  const auto x = random_x(5, rng);
  const Matrix g = sample_grad(x, t, exact_fit(t), act);
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SampleGrad, MatchesFiniteDifferences) {
  const auto act = Activation::from_coefficients({{4, 0.8}, {6, 0.6}});
  const auto t = TeacherModel::power_law(3, 0.8, 7);
  std::mt19937_64 rng(77);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto s = random_student(4, 7, 0.5, seed);
    const auto x = random_x(7, rng);
    const Matrix g = sample_grad(x, t, s, act);
    const Matrix fd =
        fd_grad([&](const StudentState& v) { return sample_loss(x, t, v, act); }, s, 1e-5);
    EXPECT_LE((g - fd).norm() / fd.norm(), 1e-5);
  }
}

TEST(SampleGrad, MeanMatchesPopulationGrad) {
  const auto act = Activation::pure(4);
  const auto t = TeacherModel::power_law(2, 0.8, 4);
  const auto s = random_student(2, 4, 0.5, 12);
  const auto mc = mc_sample_grad(t, s, act, 100000, 99);
  const Matrix g = population_grad(t, s, act);
  for (Eigen::Index k = 0; k < g.rows(); ++k)
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      EXPECT_LE(std::abs(mc.mean(k, j) - g(k, j)), 3 * mc.std_error(k, j)) << k << "," << j;
}
