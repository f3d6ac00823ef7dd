#include "hermite_flow/reference.hpp"

#include <cmath>
#include <random>

#include "hermite_flow/errors.hpp"
#include "hermite_flow/rng.hpp"

namespace hermite_flow::reference {

kernels::PopulationTerms population_terms(const TeacherModel& teacher, const Matrix& V,
                                          const Activation& act) {
  const int m = static_cast<int>(V.rows());
  const int d = static_cast<int>(V.cols());
  const int P = teacher.width();
  const auto& a = teacher.a();

  std::vector<double> n(m), nrm(m);
  for (int k = 0; k < m; ++k) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += V(k, j) * V(k, j);
    if (!(s > 0.0)) throw DegenerateNeuronError(k);
    n[k] = s;
    nrm[k] = std::sqrt(s);
  }
  Matrix vbar(m, d);
  for (int k = 0; k < m; ++k)
    for (int j = 0; j < d; ++j) vbar(k, j) = V(k, j) / nrm[k];
  Matrix G(m, m);
  for (int k = 0; k < m; ++k) {
    for (int l = 0; l < m; ++l) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += vbar(k, j) * vbar(l, j);
      G(k, l) = (k == l) ? 1.0 : s;
    }
  }
  double a_sq = 0.0;
  for (double ap : a) a_sq += ap * ap;

  kernels::PopulationTerms out;
  out.grad.setZero(m, d);
  out.radial.setZero(m);
  out.norms_sq = Eigen::Map<const Vector>(n.data(), m);
  out.loss = 0.0;

  for (auto [deg, coef] : act.coeffs()) {
    const double s = coef * coef;
    const double j = static_cast<double>(deg);
    double loss_j = 0.5 * a_sq;
    for (int k = 0; k < m; ++k) {
      for (int p = 0; p < P; ++p) loss_j -= a[p] * n[k] * std::pow(vbar(k, p), deg);
      for (int l = 0; l < m; ++l) loss_j += 0.5 * n[k] * n[l] * std::pow(G(k, l), deg);
    }
    out.loss += s * loss_j;

    // d/dv (|v|^2 <vbar,u>^j) = j <vbar,u>^{j-1} |v| u - (j-2) <vbar,u>^j v
    for (int k = 0; k < m; ++k) {
      for (int p = 0; p < P; ++p) {
        const double o = vbar(k, p);
        out.grad(k, p) -= s * a[p] * j * std::pow(o, deg - 1) * nrm[k];
        for (int c = 0; c < d; ++c)
          out.grad(k, c) += s * a[p] * (j - 2.0) * std::pow(o, deg) * V(k, c);
      }
      for (int c = 0; c < d; ++c) out.grad(k, c) += s * 2.0 * n[k] * V(k, c);
      for (int l = 0; l < m; ++l) {
        if (l == k) continue;
        const double g = G(k, l);
        const double up = j * std::pow(g, deg - 1) * nrm[k];
        const double down = (j - 2.0) * std::pow(g, deg);
        for (int c = 0; c < d; ++c)
          out.grad(k, c) += s * n[l] * (up * vbar(l, c) - down * V(k, c));
      }
    }
  }
  for (int k = 0; k < m; ++k) {
    double r = 0.0;
    for (int c = 0; c < d; ++c) r += out.grad(k, c) * V(k, c);
    out.radial(k) = r;
  }
  return out;
}

McEstimate mc_loss(const TeacherModel& teacher, const Matrix& V, const Activation& act, long n,
                   std::uint64_t seed) {
  if (n < 2) throw Error("mc_population_loss: need at least two samples");
  const int m = static_cast<int>(V.rows());
  const int d = static_cast<int>(V.cols());
  std::vector<double> nrm(m), n2(m);
  for (int k = 0; k < m; ++k) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += V(k, j) * V(k, j);
    if (!(s > 0.0)) throw DegenerateNeuronError(k);
    n2[k] = s;
    nrm[k] = std::sqrt(s);
  }
  const auto& a = teacher.a();

  kernels::ShardMoments total;
  for (int shard = 0; shard < kernels::kMonteCarloShards; ++shard) {
    auto engine = make_engine(seed, Stream::kMonteCarlo, {static_cast<std::uint64_t>(shard)});
    StandardNormal normal;
    std::vector<double> x(d);
    const long count = n / kernels::kMonteCarloShards +
                       (shard < n % kernels::kMonteCarloShards ? 1 : 0);
    kernels::ShardMoments acc;
    for (long i = 0; i < count; ++i) {
      for (auto& xi : x) xi = normal(engine);
      double f = 0.0;
      for (int k = 0; k < m; ++k) {
        double z = 0.0;
        for (int j = 0; j < d; ++j) z += V(k, j) * x[j];
        f += n2[k] * act.eval(z / nrm[k]);
      }
      double fs = 0.0;
      for (std::size_t p = 0; p < a.size(); ++p) fs += a[p] * act.eval(x[p]);
      const double l = 0.5 * (fs - f) * (fs - f);
      ++acc.count;
      const double delta = l - acc.mean;
      acc.mean += delta / static_cast<double>(acc.count);
      acc.m2 += delta * (l - acc.mean);
    }
    if (acc.count == 0) continue;
    if (total.count == 0) {
      total = acc;
      continue;
    }
    const double n1 = static_cast<double>(total.count);
    const double nb = static_cast<double>(acc.count);
    const double delta = acc.mean - total.mean;
    total.mean += delta * nb / (n1 + nb);
    total.m2 += acc.m2 + delta * delta * n1 * nb / (n1 + nb);
    total.count += acc.count;
  }
  McEstimate out;
  out.samples = total.count;
  out.estimate = total.mean;
  out.std_error = std::sqrt(total.m2 / static_cast<double>(total.count - 1) /
                            static_cast<double>(total.count));
  return out;
}

}  // namespace hermite_flow::reference
