#pragma once

#include "slab/processes.hpp"

namespace slab {

/// Unadjusted Langevin step x' = x + h * grad log pi(x) + sqrt(2h) * xi.
Mat ula_step(const Mat& x, const std::function<Mat(const Mat&)>& grad_logpi, double step,
             Rng& rng);

struct PTState {
  Vec ladder;                    // increasing inverse temperatures, last = 1
  std::vector<Mat> chains;       // per-temperature walker batches
  Vec swap_attempts;             // per adjacent pair
  Vec swap_accepts;
  long long energy_calls = 0;
};

struct PTOptions {
  int walkers = 16;
  int steps_per_swap = 10;
  int sweeps = 500;
  double step_size = 0.05;   // ULA step at beta = 1; scaled by 1/beta per rung
  double init_spread = 40.0; // walkers start from N(0, init_spread^2 I)
  double burnin_fraction = 0.5;
};

Vec geometric_ladder(double beta_min, int rungs);

/// Parallel tempering with ULA kernels and adjacent-pair swaps; returns the
/// beta = 1 samples collected after burn-in plus the final state.
std::pair<Mat, PTState> pt_run(const TargetDensity& target, const Vec& ladder,
                               const PTOptions& opts, std::uint64_t seed);

struct PosthocOptions {
  int iters = 3000;
  int batch = 256;
  double lr = 1e-3;
  double t_floor_fraction = 0.005;  // skip the lowest noising times
};

/// Denoising score matching of a drift model on a fixed sample set under the
/// VP schedule; consumes zero target evaluations.
void posthoc_fit(const Mat& samples, const NoiseSchedule& sched, DriftModel& model,
                 const PosthocOptions& opts, std::uint64_t seed);

}  // namespace slab
