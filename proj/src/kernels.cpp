#include "hermite_flow/kernels.hpp"

#include <cmath>
#include <random>

#include "hermite_flow/errors.hpp"
#include "hermite_flow/rng.hpp"

namespace hermite_flow::kernels {

namespace {

Vector checked_norms_sq(const Matrix& V) {
  Vector n = V.rowwise().squaredNorm();
  for (Eigen::Index k = 0; k < n.size(); ++k) {
    if (!(n(k) > 0.0)) throw DegenerateNeuronError(static_cast<int>(k));
  }
  return n;
}

double strength_sq(const TeacherModel& teacher) {
  double s = 0.0;
  for (double a : teacher.a()) s += a * a;
  return s;
}

// Per-sample loss at one input with precomputed normalized rows.
double sample_loss_normalized(std::span<const double> x, const TeacherModel& teacher,
                              const Matrix& Vbar, const Vector& norms_sq, const Activation& act,
                              Vector& z) {
  Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  z.noalias() = Vbar * xv;
  double f = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) f += norms_sq(k) * act.eval(z(k));
  double fs = 0.0;
  const auto& a = teacher.a();
  for (std::size_t p = 0; p < a.size(); ++p) fs += a[p] * act.eval(x[p]);
  const double r = fs - f;
  return 0.5 * r * r;
}

void merge(ShardMoments& into, const ShardMoments& s) {
  if (s.count == 0) return;
  if (into.count == 0) {
    into = s;
    return;
  }
  const double n1 = static_cast<double>(into.count);
  const double n2 = static_cast<double>(s.count);
  const double delta = s.mean - into.mean;
  const double n = n1 + n2;
  into.mean += delta * n2 / n;
  into.m2 += s.m2 + delta * delta * n1 * n2 / n;
  into.count += s.count;
}

long shard_size(long n, int shard) {
  return n / kMonteCarloShards + (shard < n % kMonteCarloShards ? 1 : 0);
}

}  // namespace

// Below this many matrix entries a parallel region costs more than it saves.
constexpr Eigen::Index kParallelWork = 1 << 14;

void population_terms_into(const TeacherModel& teacher, const Matrix& V, const Activation& act,
                           bool with_grad, PopulationTerms& out, Workspace& ws) {
  const Eigen::Index m = V.rows();
  const Eigen::Index d = V.cols();
  const int P = teacher.width();
  const auto& a = teacher.a();

  out.norms_sq.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    out.norms_sq(k) = V.row(k).squaredNorm();
    if (!(out.norms_sq(k) > 0.0)) throw DegenerateNeuronError(static_cast<int>(k));
  }
  ws.nrm = out.norms_sq.cwiseSqrt();
  ws.vbar.resize(m, d);
  ws.vbar.noalias() = ws.nrm.cwiseInverse().asDiagonal() * V;
  const Matrix& Vbar = ws.vbar;
  const bool small = m * d < kParallelWork;
  ws.gram.resize(m, m);
  if (small) ws.gram.noalias() = Vbar.lazyProduct(Vbar.transpose());
  else ws.gram.noalias() = Vbar * Vbar.transpose();
  const Matrix& G = ws.gram;

  // W = n_l K'(G_kl) with zero diagonal, A = a_p K'(vbar_kp)
  if (with_grad) {
    ws.w.setZero(m, m);
    ws.a.setZero(m, P);
    ws.coef.setZero(m);
  }
  out.radial.resize(m);

  // Returns (n_k^2 teach_k, n_k^2 self_k) for row k.
  auto row = [&](Eigen::Index k) -> std::pair<double, double> {
    double self_k = 0.0;
    double teach_k = 0.0;
    double c = 0.0;
    for (Eigen::Index l = 0; l < m; ++l) {
      const double g = (l == k) ? 1.0 : G(k, l);
      self_k += out.norms_sq(l) * act.kernel(g);
      if (with_grad && l != k) {
        const double w = out.norms_sq(l) * act.kernel_deriv(g);
        ws.w(k, l) = w;
        c -= w * g;
      }
    }
    for (int p = 0; p < P; ++p) {
      const double o = Vbar(k, p);
      teach_k += a[p] * act.kernel(o);
      if (with_grad) {
        const double w = a[p] * act.kernel_deriv(o);
        ws.a(k, p) = w;
        c += w * o;
      }
    }
    out.radial(k) = 2.0 * out.norms_sq(k) * (self_k - teach_k);
    if (with_grad) ws.coef(k) = c;
    return {out.norms_sq(k) * teach_k, out.norms_sq(k) * self_k};
  };
  double cross = 0.0;
  double self = 0.0;
  if (small) {
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto [c, s] = row(k);
      cross += c;
      self += s;
    }
  } else {
#pragma omp parallel for reduction(+ : cross, self) schedule(static)
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto [c, s] = row(k);
      cross += c;
      self += s;
    }
  }
  out.loss = 0.5 * act.kernel(1.0) * strength_sq(teacher) - cross + 0.5 * self;
  if (!with_grad) return;

  ws.t.resize(m, d);
  if (small) ws.t.noalias() = ws.w.lazyProduct(Vbar);
  else ws.t.noalias() = ws.w * Vbar;
  out.grad.resize(m, d);
  auto grad_row = [&](Eigen::Index k) {
    // radial part (r_k / |v_k|^2) v_k, tangent part |v_k| (T_k + coef_k vbar_k - A_k e)
    const double nk = ws.nrm(k);
    const double radial_scale = out.radial(k) / nk;
    out.grad.row(k) = (radial_scale + nk * ws.coef(k)) * Vbar.row(k) + nk * ws.t.row(k);
    for (int p = 0; p < P; ++p) out.grad(k, p) -= nk * ws.a(k, p);
  };
  if (small) {
    for (Eigen::Index k = 0; k < m; ++k) grad_row(k);
  } else {
#pragma omp parallel for schedule(static)
    for (Eigen::Index k = 0; k < m; ++k) grad_row(k);
  }
}

PopulationTerms population_terms(const TeacherModel& teacher, const Matrix& V,
                                 const Activation& act, bool with_grad) {
  PopulationTerms out;
  Workspace ws;
  population_terms_into(teacher, V, act, with_grad, out, ws);
  return out;
}

double sample_grad_into(std::span<const double> x, const TeacherModel& teacher, const Matrix& V,
                        const Activation& act, Matrix& grad) {
  const Eigen::Index m = V.rows();
  const Eigen::Index d = V.cols();
  Eigen::Map<const Vector> xv(x.data(), d);
  grad.resize(m, d);

  Vector nrm(m), z(m), sig(m), dsig(m);
  double f = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double n2 = V.row(k).squaredNorm();
    if (!(n2 > 0.0)) throw DegenerateNeuronError(static_cast<int>(k));
    nrm(k) = std::sqrt(n2);
    z(k) = V.row(k).dot(xv) / nrm(k);
    act.eval_with_deriv(z(k), sig(k), dsig(k));
    f += n2 * sig(k);
  }
  double fs = 0.0;
  const auto& a = teacher.a();
  for (std::size_t p = 0; p < a.size(); ++p) fs += a[p] * act.eval(x[p]);
  const double r = fs - f;

  for (Eigen::Index k = 0; k < m; ++k) {
    // -r [2 sigma v + |v| sigma' (x - z vbar)] with vbar = v/|v|
    const double cv = -r * (2.0 * sig(k) - dsig(k) * z(k));
    const double cx = -r * nrm(k) * dsig(k);
    grad.row(k) = cv * V.row(k) + cx * xv.transpose();
  }
  return r;
}

double sgd_update(std::span<const double> x, const TeacherModel& teacher, Matrix& V,
                  const Activation& act, double eta) {
  const Eigen::Index m = V.rows();
  const Eigen::Index d = V.cols();
  Eigen::Map<const Vector> xv(x.data(), d);
  constexpr Eigen::Index kStack = 64;
  double buf[4 * kStack];
  std::vector<double> heap;
  double* w = buf;
  if (m > kStack) {
    heap.resize(4 * m);
    w = heap.data();
  }
  double* nrm = w;
  double* z = w + m;
  double* sig = w + 2 * m;
  double* dsig = w + 3 * m;

  double f = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double n2 = V.row(k).squaredNorm();
    if (!(n2 > 0.0)) throw DegenerateNeuronError(static_cast<int>(k));
    nrm[k] = std::sqrt(n2);
    z[k] = V.row(k).dot(xv) / nrm[k];
    act.eval_with_deriv(z[k], sig[k], dsig[k]);
    f += n2 * sig[k];
  }
  double fs = 0.0;
  const auto& a = teacher.a();
  for (std::size_t p = 0; p < a.size(); ++p) fs += a[p] * act.eval(x[p]);
  const double r = fs - f;

  double max_n2 = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double cv = -r * (2.0 * sig[k] - dsig[k] * z[k]);
    const double cx = -r * nrm[k] * dsig[k];
    V.row(k) = (1.0 - eta * cv) * V.row(k) - (eta * cx) * xv.transpose();
    max_n2 = std::max(max_n2, V.row(k).squaredNorm());
  }
  return max_n2;
}

McEstimate mc_loss(const TeacherModel& teacher, const Matrix& V, const Activation& act, long n,
                   std::uint64_t seed) {
  if (n < 2) throw Error("mc_population_loss: need at least two samples");
  const Vector norms_sq = checked_norms_sq(V);
  const Matrix Vbar = norms_sq.cwiseSqrt().cwiseInverse().asDiagonal() * V;
  const Eigen::Index d = V.cols();

  std::vector<ShardMoments> shards(kMonteCarloShards);
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < kMonteCarloShards; ++s) {
    auto engine = make_engine(seed, Stream::kMonteCarlo, {static_cast<std::uint64_t>(s)});
    StandardNormal normal;
    std::vector<double> x(d);
    Vector z(V.rows());
    ShardMoments acc;
    const long count = shard_size(n, s);
    for (long i = 0; i < count; ++i) {
      for (auto& xi : x) xi = normal(engine);
      const double l = sample_loss_normalized(x, teacher, Vbar, norms_sq, act, z);
      ++acc.count;
      const double delta = l - acc.mean;
      acc.mean += delta / static_cast<double>(acc.count);
      acc.m2 += delta * (l - acc.mean);
    }
    shards[s] = acc;
  }
  ShardMoments total;
  for (const auto& s : shards) merge(total, s);
  McEstimate out;
  out.samples = total.count;
  out.estimate = total.mean;
  out.std_error = std::sqrt(total.m2 / static_cast<double>(total.count - 1) /
                            static_cast<double>(total.count));
  return out;
}

McGradient mc_grad(const TeacherModel& teacher, const Matrix& V, const Activation& act, long n,
                   std::uint64_t seed) {
  if (n < 2) throw Error("mc_sample_grad: need at least two samples");
  checked_norms_sq(V);
  const Eigen::Index m = V.rows();
  const Eigen::Index d = V.cols();

  struct GradShard {
    long count = 0;
    Matrix mean;
    Matrix m2;
  };
  std::vector<GradShard> shards(kMonteCarloShards);
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < kMonteCarloShards; ++s) {
    auto engine = make_engine(seed, Stream::kMonteCarlo, {static_cast<std::uint64_t>(s)});
    StandardNormal normal;
    std::vector<double> x(d);
    Matrix g(m, d), delta(m, d);
    GradShard acc;
    acc.mean.setZero(m, d);
    acc.m2.setZero(m, d);
    const long count = shard_size(n, s);
    for (long i = 0; i < count; ++i) {
      for (auto& xi : x) xi = normal(engine);
      sample_grad_into(x, teacher, V, act, g);
      ++acc.count;
      delta = g - acc.mean;
      acc.mean += delta / static_cast<double>(acc.count);
      acc.m2.array() += delta.array() * (g - acc.mean).array();
    }
    shards[s] = std::move(acc);
  }

  GradShard total;
  for (auto& s : shards) {
    if (s.count == 0) continue;
    if (total.count == 0) {
      total = std::move(s);
      continue;
    }
    const double n1 = static_cast<double>(total.count);
    const double n2 = static_cast<double>(s.count);
    const double nn = n1 + n2;
    Matrix delta = s.mean - total.mean;
    total.mean += delta * (n2 / nn);
    total.m2 += s.m2 + delta.cwiseProduct(delta) * (n1 * n2 / nn);
    total.count += s.count;
  }
  McGradient out;
  out.samples = total.count;
  out.mean = std::move(total.mean);
  const double cnt = static_cast<double>(total.count);
  out.std_error = (total.m2.array() / (cnt - 1.0) / cnt).sqrt().matrix();
  return out;
}

}  // namespace hermite_flow::kernels
