#include "slab/mcmc.hpp"

#include <cmath>

namespace slab {

Mat ula_step(const Mat& x, const std::function<Mat(const Mat&)>& grad_logpi, double step,
             Rng& rng) {
  SLAB_REQUIRE(step > 0, "ula_step: step must be positive");
  Mat prop = x + step * grad_logpi(x) +
             std::sqrt(2.0 * step) * rng.normal_mat((int)x.rows(), (int)x.cols());
  if (!prop.allFinite()) throw NumericalError("ula_step: non-finite proposal");
  return prop;
}

Vec geometric_ladder(double beta_min, int rungs) {
  SLAB_REQUIRE(rungs >= 1 && beta_min > 0 && beta_min <= 1.0, "geometric_ladder: bad arguments");
  Vec ladder(rungs);
  if (rungs == 1) {
    ladder[0] = 1.0;
    return ladder;
  }
  for (int i = 0; i < rungs; ++i)
    ladder[i] = beta_min * std::pow(1.0 / beta_min, static_cast<double>(i) / (rungs - 1));
  ladder[rungs - 1] = 1.0;
  return ladder;
}

std::pair<Mat, PTState> pt_run(const TargetDensity& target, const Vec& ladder,
                               const PTOptions& opts, std::uint64_t seed) {
  const int rungs = static_cast<int>(ladder.size());
  SLAB_REQUIRE(rungs >= 1, "pt_run: empty ladder");
  for (int i = 1; i < rungs; ++i)
    SLAB_REQUIRE(ladder[i] > ladder[i - 1], "pt_run: ladder must be strictly increasing");
  SLAB_REQUIRE(std::abs(ladder[rungs - 1] - 1.0) < 1e-12, "pt_run: ladder must end at 1");

  Rng rng(seed);
  const int d = target.dim();
  long long calls0 = target.eval_calls();

  PTState st;
  st.ladder = ladder;
  st.swap_attempts = Vec::Zero(std::max(rungs - 1, 1));
  st.swap_accepts = Vec::Zero(std::max(rungs - 1, 1));
  for (int i = 0; i < rungs; ++i)
    st.chains.push_back(opts.init_spread * rng.normal_mat(opts.walkers, d));

  // cached energies E = -log p~ per walker, refreshed once per sweep
  std::vector<Vec> energy(rungs);

  std::vector<Mat> collected;
  const int burnin = static_cast<int>(opts.sweeps * opts.burnin_fraction);

  for (int sweep = 0; sweep < opts.sweeps; ++sweep) {
    for (int i = 0; i < rungs; ++i) {
      double beta = ladder[i];
      double step = opts.step_size / beta;
      auto grad = [&](const Mat& x) { return (beta * target.grad_log(x)).eval(); };
      for (int s = 0; s < opts.steps_per_swap; ++s)
        st.chains[i] = ula_step(st.chains[i], grad, step, rng);
      energy[i] = -target.log_unnorm(st.chains[i]);
    }
    for (int i = 0; i + 1 < rungs; ++i) {
      for (int w = 0; w < opts.walkers; ++w) {
        st.swap_attempts[i] += 1;
        double log_acc = (ladder[i] - ladder[i + 1]) * (energy[i + 1][w] - energy[i][w]);
        if (std::log(rng.uniform()) < log_acc) {
          st.swap_accepts[i] += 1;
          st.chains[i].row(w).swap(st.chains[i + 1].row(w));
          std::swap(energy[i][w], energy[i + 1][w]);
        }
      }
    }
    if (sweep >= burnin) collected.push_back(st.chains[rungs - 1]);
  }

  Mat samples(static_cast<Eigen::Index>(collected.size()) * opts.walkers, d);
  for (std::size_t c = 0; c < collected.size(); ++c)
    samples.middleRows(static_cast<Eigen::Index>(c) * opts.walkers, opts.walkers) = collected[c];
  st.energy_calls = target.eval_calls() - calls0;
  return {samples, st};
}

void posthoc_fit(const Mat& samples, const NoiseSchedule& sched, DriftModel& model,
                 const PosthocOptions& opts, std::uint64_t seed) {
  SLAB_REQUIRE(samples.rows() > 0, "posthoc_fit: empty sample set");
  Rng rng(seed);
  ParamGroup pg{&model.params()};
  Adam adam(opts.lr);
  const double T = sched.T;
  const int d = static_cast<int>(samples.cols());
  for (int it = 0; it < opts.iters; ++it) {
    Mat y(opts.batch, d);
    for (int b = 0; b < opts.batch; ++b)
      y.row(b) = samples.row(static_cast<Eigen::Index>(rng.uniform() * samples.rows()));
    // one noising time per minibatch keeps the drift eval batched
    double s = (opts.t_floor_fraction + (1.0 - opts.t_floor_fraction) * rng.uniform()) * T;
    double lam = sched.lambda(s);
    double a = std::sqrt(1.0 - lam);
    double sd = sched.v * std::sqrt(lam);
    Mat eps = rng.normal_mat(opts.batch, d);
    Mat xs = a * y + sd * eps;
    // score regression in noise-prediction form: || sd * f + eps ||^2
    ad::Value pred = model.eval(ad::constant(xs), T - s);
    ad::Value resid = ad::add(ad::cmul(pred, sd), ad::constant(eps));
    ad::Value loss = ad::mean_all(ad::sum_cols(ad::square(resid)));
    pg.zero_grad();
    ad::backward(loss);
    adam.step(pg);
  }
}

}  // namespace slab
