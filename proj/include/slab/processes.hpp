#pragma once

#include <functional>
#include <memory>

#include "slab/flows.hpp"
#include "slab/models.hpp"
#include "slab/schedules.hpp"
#include "slab/targets.hpp"

namespace slab {

enum class Family { kPbm, kVpReversal, kVeReversal, kEscorted, kAnnealed, kNfInduced };

/// Endpoint distribution of a process (prior for the sampling process,
/// target for the reverse/"target" process).
struct Endpoint {
  int dim = 0;
  std::function<Mat(int, Rng&)> sample;                       // may be empty
  std::function<ad::Value(const ad::Value&)> log_density;     // graph builder
};

Endpoint gaussian_endpoint(const GaussianSpec& g);
Endpoint target_endpoint(const TargetPtr& t);

/// Drift/diffusion pair in the process's own time direction. A "target"
/// process runs from the target toward the prior; simulate() evaluates its
/// drift at s = T - t when assembling backward kernels.
struct ProcessSpec {
  Family family = Family::kVpReversal;
  double T = 1.0;
  int dim = 0;
  std::function<ad::Value(const ad::Value&, double)> drift;
  std::function<double(double)> sigma;
  Endpoint start;
  std::shared_ptr<std::atomic<long long>> energy_counter;  // optional
};

struct SimOptions {
  bool detach = false;           // off-policy: sever states from the tape
  bool include_boundary = true;  // log prior(x0) - log p~(xN) terms
  bool compute_rnd = true;
};

/// Discretized path batch with per-step Radon-Nikodym bookkeeping.
struct Trajectory {
  double T = 0;
  int steps = 0, batch = 0, dim = 0;
  std::vector<double> times;             // steps + 1
  std::vector<Mat> states;               // steps + 1, raw values
  std::vector<Mat> noises;               // steps
  std::vector<ad::Value> state_nodes;    // steps + 1
  std::vector<ad::Value> step_log_pf;    // steps, B x 1
  std::vector<ad::Value> step_log_pb;    // steps, B x 1
  ad::Value boundary;                    // null unless include_boundary
  ad::Value log_rnd;                     // B x 1 (log dQ/dP)
  Vec log_rnd_values;
  bool detached = false;
  bool has_boundary = false;
  long long energy_calls = 0;

  void export_csv_slices(const std::string& path,
                         const std::vector<double>& at_times) const;
  void export_binary(const std::string& path) const;
};

/// Euler-Maruyama with uniform steps; diffusion coefficients are read at
/// step midpoints (keeps VE kernels non-degenerate), drifts at the left
/// endpoint of each step in the owning process's time direction.
Trajectory simulate(const ProcessSpec& q, const ProcessSpec& p, int n, int steps,
                    std::uint64_t seed, SimOptions opts = {});

/// Path generated by the target process P from its own start (exact target
/// samples required); the RND is evaluated on the reversed path exactly as
/// in simulate(). Used by EUBO.
Trajectory simulate_from_target(const ProcessSpec& q, const ProcessSpec& p, int n, int steps,
                                std::uint64_t seed, SimOptions opts = {});

/// Nelson reversal: drift'(x, t) = -(drift(x, T-t) - 2 sigma(T-t)^2 score(x, T-t)).
ProcessSpec reverse(const ProcessSpec& p,
                    const std::function<ad::Value(const ad::Value&, double)>& marginal_score);

struct ProcessPair {
  ProcessSpec q, p;
  TargetPtr target;
};

/// PIS: prior ~ delta_0 (realized as N(0, 1e-8 I)), sigma = 1/sqrt(2);
/// target process is the pinned Brownian motion toward 0.
ProcessPair make_pis(DriftPtr model, TargetPtr target, double T, double pbm_floor = 0.0);
/// DDS: VP reversal with drift beta_{T-t} x + 2 sigma_t^2 f_theta.
ProcessPair make_dds(DriftPtr model, const NoiseSchedule& sched, TargetPtr target);
/// iDEM: VE reversal, mu = 0, prior N(0, T^2 I), drift 2 sigma_t^2 f_theta.
ProcessPair make_idem(DriftPtr model, TargetPtr target, double T);
/// CMCD/NETS pairing; langevin=false re-pairs the drifts so the sampling
/// side carries no score term while Nelson's condition is preserved.
ProcessPair make_escorted(DriftPtr model, PathPtr path,
                          std::function<double(double)> sigma, bool langevin);
/// MCD: fixed Langevin-along-pi_t forward, learned correction in the
/// reversal only.
ProcessPair make_annealed(DriftPtr reversal_correction, PathPtr path,
                          std::function<double(double)> sigma);
/// Flow-induced sampling SDE dX = (F~ + sigma^2 grad log q) dt + sigma sqrt2 dW.
ProcessSpec make_nf_forward(FlowPtr flow, std::function<double(double)> sigma);
/// VP noising process (target side) alone.
ProcessSpec vp_target_process(const NoiseSchedule& sched, TargetPtr target);

}  // namespace slab
