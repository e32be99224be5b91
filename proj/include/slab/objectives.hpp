#pragma once

#include <map>

#include "slab/processes.hpp"

namespace slab {

struct LossReport {
  double value = 0.0;
  Vec grad;
  Vec per_path;
  std::map<std::string, double> aux;
};

/// Scalar loss node -> report: runs the backward pass and collects the flat
/// gradient over the given parameter group.
LossReport finish_loss(const ad::Value& node, ParamGroup& params,
                       const Vec* per_path = nullptr);

/// E_Q[log dQ/dP]; requires an on-policy (non-detached) trajectory.
ad::Value rkl_node(const Trajectory& traj);
/// Unbiased sample variance of the per-path log RND.
ad::Value lv_node(const Trajectory& traj);
/// Mean of (log RND - k)^2 with a learnable scalar baseline.
ad::Value tb_node(const Trajectory& traj, const ad::Value& k);
/// Sub-trajectory balance over all segment pairs (unit_segments_only = true
/// restricts to adjacent pairs, which is the detailed-balance objective).
/// `ks` is a 1 x (steps + 1) learnable baseline row.
ad::Value stb_node(const Trajectory& traj, const AnnealingPath& pis, const ad::Value& ks,
                   bool unit_segments_only = false);
ad::Value db_node(const Trajectory& traj, const AnnealingPath& pis, const ad::Value& ks);

struct SampleBatch {
  Mat x;
  double t;
};

/// Continuity-equation residual of the escorted process; simulation-free and
/// independent of sigma_t by construction.
ad::Value pinn_node(DriftModel& f, const AnnealingPath& path, const TimeScalarNet& dtF,
                    const std::vector<SampleBatch>& batches);

/// Action-matching objective for a potential-kind drift.
ad::Value am_node(PotentialDrift& pot, const std::vector<SampleBatch>& time_batches,
                  const Mat& prior_samples, const Mat& target_samples, double T);

struct SnisResult {
  Mat score;  // estimated noised score per input row
  Vec ess;    // effective sample size per row, in [1, m]
  Mat weights_last;  // SNIS weights of the last processed row (diagnostics)
};

/// Self-normalized importance-sampling estimate of the noised target score
/// (target score identity); proposal N(x, proposal_var I).
SnisResult snis_score(const TargetDensity& target, const Mat& x, double proposal_var, int m,
                      std::uint64_t seed);
/// VE-family proposal variance at sampling time t.
double ve_proposal_variance(double T, double t);

/// L2 regression of the drift onto SNIS score estimates over a buffer.
ad::Value idem_regression_node(DriftModel& f, const TargetDensity& target, double T,
                               const std::vector<SampleBatch>& buffer, int m,
                               std::uint64_t seed);

/// Ratio-of-expectations estimator of the optimal control for the pinned
/// Brownian reference started from N(0, sigma_init^2 I):
///   grad log phi_t(x),  phi_t(x) = E_{y ~ N(x, (T-t) I)}[(p~/nu_T)(y)],
/// with nu_T = N(0, (T + sigma_init^2) I). Numerator and denominator share
/// the proposal draws.
Vec sfs_control(const TargetDensity& target, const Vec& x, double t, double T,
                double sigma_init, int m, std::uint64_t seed);

/// Simulation-free NF-DDS objective: time-stratified Girsanov integrand plus
/// the terminal KL against the unnormalized target.
ad::Value nf_dds_node(const FlowMap& flow, const TargetDensity& target,
                      const NoiseSchedule& sched, int time_strata, int n_per_time,
                      std::uint64_t seed);

enum class NfCmcdWeight { kInv4Sigma2, kInvSigma, kInvSigma2 };

/// Simulation-free NF-CMCD objective (marginal Fisher alignment along pi_t).
ad::Value nf_cmcd_node(const FlowMap& flow, const AnnealingPath& path,
                       const std::function<double(double)>& sigma, NfCmcdWeight weight,
                       int time_strata, int n_per_time, std::uint64_t seed);

}  // namespace slab
