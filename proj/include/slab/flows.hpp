#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "slab/models.hpp"

namespace slab {

/// One invertible block of a time-indexed flow. forward_jvp_t pushes a
/// (state tangent, dt) pair through the block, which is how the velocity
/// field of the composed map is assembled.
class FlowLayer {
 public:
  virtual ~FlowLayer() = default;
  virtual ad::Value forward(const ad::Value& u, double t, ad::Value* logdet) const = 0;
  virtual ad::Value inverse(const ad::Value& x, double t, ad::Value* logdet_fwd) const = 0;
  virtual std::pair<ad::Value, ad::Value> forward_jvp_t(const ad::Value& u,
                                                        const ad::Value& udot,
                                                        double t) const = 0;
};

struct FlowConfig {
  int dim = 2;
  int couplings = 4;             // ignored for dim == 1
  std::vector<int> hidden = {64, 64};  // conditioner width
  int time_features = 8;
  double horizon = 1.0;
  double base_var = 1.0;  // p_base = N(0, base_var * I)
};

/// Time-indexed invertible map F_theta with analytic inverse, log-det and
/// velocity field. Initialized to the identity at every t, so the t = T
/// marginal starts equal to the (wide) base distribution.
class FlowMap {
 public:
  FlowMap(const FlowConfig& cfg, std::uint64_t seed);

  int dim() const { return cfg_.dim; }
  double horizon() const { return cfg_.horizon; }
  const GaussianSpec& base() const { return base_; }
  ParamStore& params() { return params_; }
  const FlowConfig& config() const { return cfg_; }

  ad::Value forward(const ad::Value& z, double t, ad::Value* logdet = nullptr) const;
  ad::Value inverse(const ad::Value& x, double t, ad::Value* logdet_fwd = nullptr) const;

  /// (x, F~) from a base point: x = F(z, t), F~ = d/dt F(z, t).
  std::pair<ad::Value, ad::Value> forward_velocity(const ad::Value& z, double t) const;
  /// Velocity field at an arbitrary state (inverts first).
  ad::Value velocity_at(const ad::Value& x, double t) const;

  /// log q_theta(x, t) via change of variables.
  ad::Value log_q(const ad::Value& x, double t) const;
  /// log q_theta(F(z, t), t) expressed at the base point (exact identity).
  ad::Value log_q_from_base(const ad::Value& z, double t, const ad::Value& logdet) const;
  /// grad_x log q_theta(x, t), differentiable w.r.t. parameters.
  ad::Value score(const ad::Value& x, double t) const;

  Mat sample_route1(double t, int n, Rng& rng) const;
  /// Reparameterized route-1 batch: x node carries the parameter graph.
  std::pair<ad::Value, Mat> sample_route1_graph(double t, int n, Rng& rng) const;
  /// Euler-Maruyama simulation of the marginal-preserving SDE
  /// dX = (F~ + sigma^2 grad log q) dt + sigma sqrt(2) dW up to time t.
  Mat sample_route2(double t, int n, const std::function<double(double)>& sigma, int steps,
                    Rng& rng) const;

 private:
  FlowConfig cfg_;
  GaussianSpec base_;
  ParamStore params_;
  std::vector<std::shared_ptr<FlowLayer>> layers_;
};

using FlowPtr = std::shared_ptr<FlowMap>;

FlowPtr make_flow(const FlowConfig& cfg, std::uint64_t seed);

}  // namespace slab
