#pragma once

#include <map>
#include <string>

#include "slab/processes.hpp"

namespace slab {

struct MetricsReport {
  double elbo = std::nan("");
  double eubo = std::nan("");
  double mmd = std::nan("");
  long long energy_calls = 0;
  int n_eval = 0;
  std::map<std::string, std::string> meta;
};

/// Lower bound on log Z: mean of -log dQ/dP over on-policy trajectories
/// (boundary terms included, unnormalized target).
double elbo(const Trajectory& traj);
/// Upper bound on log Z: mean of -log dQ/dP over trajectories generated by
/// the target process from exact target samples.
double eubo(const Trajectory& reverse_traj);

/// Multi-kernel RBF MMD (10 kernels, base sigma 100, bandwidth ladder
/// {2^-4 .. 2^5} * sigma), biased estimator, square-rooted.
double mmd(const Mat& xs, const Mat& ys, double sigma = 100.0, int kernels = 10);

/// One evaluation of a sampler/target process pair with n samples.
MetricsReport evaluate_pair(const ProcessSpec& q, const ProcessSpec& p,
                            const TargetDensity& target, int n, int steps,
                            std::uint64_t seed);

}  // namespace slab
