#pragma once

#include <functional>
#include <memory>

#include "slab/targets.hpp"

namespace slab {

/// VP-family noise schedule: linear beta over [0, T], lambda_t by closed-form
/// integral, sigma_t = v * sqrt(beta_{T-t}).
struct NoiseSchedule {
  double T = 1.0;
  double beta_min = 0.03;
  double beta_max = 3.0;
  double v = 1.0;  // prior scale; p_prior = N(0, v^2 I)

  double beta(double t) const { return beta_min + (beta_max - beta_min) * (t / T); }
  double beta_integral(double t) const {  // int_0^t beta_s ds
    return beta_min * t + 0.5 * (beta_max - beta_min) * t * t / T;
  }
  double lambda(double t) const { return 1.0 - std::exp(-2.0 * beta_integral(t)); }
  double sigma(double t) const { return v * std::sqrt(beta(T - t)); }
};

NoiseSchedule vp_schedule(double T, double beta_min, double beta_max, double v);

enum class AnnealKind { kGeometric, kMode };
enum class ExponentKind { kLinear, kCosine };

/// Prescribed interpolation pi_t between a Gaussian prior (t = 0) and the
/// target (t = T), with analytic space/time derivatives.
class AnnealingPath {
 public:
  AnnealingPath(AnnealKind kind, GaussianSpec prior, TargetPtr target, double T,
                ExponentKind exponent = ExponentKind::kLinear);

  AnnealKind kind() const { return kind_; }
  double horizon() const { return T_; }
  const GaussianSpec& prior() const { return prior_; }
  const TargetPtr& target() const { return target_; }

  double exponent(double t) const;     // beta_t in [0, 1]
  double exponent_dt(double t) const;  // d beta_t / dt

  Vec log_pi(const Mat& x, double t) const;
  Mat grad_log_pi(const Mat& x, double t) const;
  Vec dt_log_pi(const Mat& x, double t) const;

  /// Graph of log pi_t over a batch node; target-density accesses are
  /// counted like target calls.
  ad::Value log_pi_graph(const ad::Value& x, double t) const;
  /// Differentiable gradient of log pi_t (for escorted drifts).
  ad::Value grad_log_pi_graph(const ad::Value& x, double t) const;

 private:
  // Mode interpolation: component means beta_t * m_k, variances
  // (1 - beta_t) * v_prior + beta_t * v_k, weights fixed.
  void mode_params(double t, Mat& means, Vec& vars) const;
  int dim_check(const Mat& x) const;

  AnnealKind kind_;
  GaussianSpec prior_;
  TargetPtr target_;
  double T_;
  ExponentKind exp_kind_;
};

using PathPtr = std::shared_ptr<AnnealingPath>;

PathPtr geometric_path(const GaussianSpec& prior, TargetPtr target, double T,
                       ExponentKind exponent = ExponentKind::kLinear);
PathPtr mode_path(const GaussianSpec& prior, TargetPtr target, double T,
                  ExponentKind exponent = ExponentKind::kLinear);

}  // namespace slab
