#include "slab/metrics.hpp"

#include <cmath>

namespace slab {

double elbo(const Trajectory& traj) {
  SLAB_REQUIRE(traj.has_boundary, "elbo: trajectory lacks boundary RND terms");
  return -traj.log_rnd_values.mean();
}

double eubo(const Trajectory& reverse_traj) {
  SLAB_REQUIRE(reverse_traj.has_boundary, "eubo: trajectory lacks boundary RND terms");
  return -reverse_traj.log_rnd_values.mean();
}

namespace {

// Sum of the kernel matrix entries for X rows vs Y rows, blocked.
double kernel_sum(const Mat& x, const Mat& y, const Vec& bandwidths) {
  const Eigen::Index block = 512;
  double total = 0.0;
  Vec xsq = x.rowwise().squaredNorm();
  Vec ysq = y.rowwise().squaredNorm();
  for (Eigen::Index i0 = 0; i0 < x.rows(); i0 += block) {
    Eigen::Index nb = std::min(block, x.rows() - i0);
    Mat d2 = (-2.0 * x.middleRows(i0, nb) * y.transpose()).colwise() + xsq.segment(i0, nb);
    d2.rowwise() += ysq.transpose();
    for (int k = 0; k < bandwidths.size(); ++k)
      total += (d2 * (-0.5 / bandwidths[k])).array().exp().sum();
  }
  return total;
}

bool lex_less(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) < b(i, j)) return true;
      if (a(i, j) > b(i, j)) return false;
    }
  return false;
}

}  // namespace

double mmd(const Mat& xs, const Mat& ys, double sigma, int kernels) {
  SLAB_REQUIRE(xs.rows() > 0 && ys.rows() > 0, "mmd: empty batch");
  SLAB_REQUIRE(xs.cols() == ys.cols(), "mmd: dim mismatch");
  // canonical argument order makes the estimator bitwise symmetric
  const Mat& a = lex_less(ys, xs) ? ys : xs;
  const Mat& b = lex_less(ys, xs) ? xs : ys;
  Vec bw(kernels);
  for (int k = 0; k < kernels; ++k) bw[k] = sigma * std::pow(2.0, k - 4);
  double n = static_cast<double>(a.rows());
  double m = static_cast<double>(b.rows());
  double kaa = kernel_sum(a, a, bw) / (n * n);
  double kbb = kernel_sum(b, b, bw) / (m * m);
  double kab = kernel_sum(a, b, bw) / (n * m);
  double mmd2 = kaa + kbb - 2.0 * kab;
  return std::sqrt(std::max(mmd2, 0.0));
}

MetricsReport evaluate_pair(const ProcessSpec& q, const ProcessSpec& p,
                            const TargetDensity& target, int n, int steps,
                            std::uint64_t seed) {
  MetricsReport rep;
  rep.n_eval = n;
  ad::NoGradGuard ng;
  Trajectory fwd = simulate(q, p, n, steps, seed);
  rep.elbo = elbo(fwd);
  Rng sr(seed ^ 0x5eedu);
  Mat exact = target.sample_exact(n, sr);
  rep.mmd = mmd(fwd.states.back(), exact);
  if (p.start.sample) {
    Trajectory bwd = simulate_from_target(q, p, n, steps, seed + 1);
    rep.eubo = eubo(bwd);
  }
  rep.energy_calls = target.eval_calls();
  return rep;
}

}  // namespace slab
