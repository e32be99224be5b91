#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "slab/autodiff.hpp"
#include "slab/targets.hpp"

namespace slab {

/// Named trainable segments; the flat view is the ParamVector contract used
/// by the optimizer, finite-difference checks and checkpoints.
class ParamStore {
 public:
  ad::Value add(const std::string& name, Mat init);
  ad::Value find(const std::string& name) const;

  int size() const;
  Vec flat() const;
  void set_flat(const Vec& v);
  Vec flat_grad() const;
  void zero_grad();

  struct Seg {
    std::string name;
    ad::Value node;
  };
  const std::vector<Seg>& segments() const { return segs_; }

 private:
  std::vector<Seg> segs_;
};

/// Several ParamStores optimized jointly (model + baselines + auxiliary
/// networks) behind one flat vector.
class ParamGroup {
 public:
  ParamGroup() = default;
  ParamGroup(std::initializer_list<ParamStore*> stores) : stores_(stores) {}
  void add(ParamStore* ps) { stores_.push_back(ps); }
  int size() const;
  Vec flat() const;
  void set_flat(const Vec& v);
  Vec flat_grad() const;
  void zero_grad();
  const std::vector<ParamStore*>& stores() const { return stores_; }

 private:
  std::vector<ParamStore*> stores_;
};

struct AdamState {
  Vec m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// One bias-corrected adaptive step; returns the updated parameter vector.
Vec adam_step(const Vec& params, const Vec& grad, AdamState& state, double lr);

/// Convenience wrapper applying adam_step to a ParamGroup in place.
class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}
  void step(ParamGroup& ps);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
  AdamState state_;
};

/// Sinusoidal time features over [0, T] and their time derivatives.
struct TimeFeatures {
  int count = 64;
  double horizon = 1.0;
  Vec eval(double t) const;
  Vec eval_dt(double t) const;
};

struct MlpConfig {
  int in = 1;
  int out = 1;
  std::vector<int> hidden;
  bool zero_init_last = false;
  std::string prefix;
};

/// GELU MLP on batched rows. forward_jvp additionally pushes an input
/// tangent through the net (directional derivative as a graph), which is
/// what flow velocities and time derivatives of potentials are built from.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpConfig& cfg, ParamStore& ps, Rng& rng);
  ad::Value forward(const ad::Value& x) const;
  std::pair<ad::Value, ad::Value> forward_jvp(const ad::Value& x, const ad::Value& xdot) const;

 private:
  std::vector<ad::Value> w_, b_;
};

/// Scalar network of time (the PINN objective's learned d/dt F term).
class TimeScalarNet {
 public:
  TimeScalarNet() = default;
  TimeScalarNet(int time_features, double horizon, const std::vector<int>& hidden,
                std::uint64_t seed);
  ad::Value eval(double t) const;  // 1 x 1
  ParamStore& params() { return params_; }

 private:
  Mlp net_;
  TimeFeatures tf_;
  ParamStore params_;
};

enum class DriftKind { kPlain, kLangevinPrecond, kEnergyCond, kPotential };

DriftKind drift_kind_from_string(const std::string& s);
std::string to_string(DriftKind k);

/// Differentiable drift parameterization f_theta(x, t).
class DriftModel {
 public:
  virtual ~DriftModel() = default;
  virtual ad::Value eval(const ad::Value& x, double t) = 0;
  Mat eval_fast(const Mat& x, double t);

  DriftKind kind() const { return kind_; }
  int dim() const { return dim_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 protected:
  DriftKind kind_ = DriftKind::kPlain;
  int dim_ = 0;
  ParamStore params_;
};

using DriftPtr = std::shared_ptr<DriftModel>;

struct DriftConfig {
  DriftKind kind = DriftKind::kPlain;
  int dim = 2;
  std::vector<int> hidden = {64, 64};
  int time_features = 64;
  double horizon = 1.0;
  double energy_scale = 1e-2;  // feature scale for the energy-conditioned kind
};

DriftPtr make_drift(const DriftConfig& cfg, TargetPtr target, std::uint64_t seed);

/// Potential-kind drift: f = grad_x phi; also exposes phi and d phi / dt
/// for the action-matching objective.
class PotentialDrift : public DriftModel {
 public:
  PotentialDrift(const DriftConfig& cfg, std::uint64_t seed);
  ad::Value eval(const ad::Value& x, double t) override;
  ad::Value phi(const ad::Value& x, double t) const;
  std::pair<ad::Value, ad::Value> phi_and_dt(const ad::Value& x, double t) const;

 private:
  Mlp net_;
  TimeFeatures tf_;
};

/// Test/oracle adapter: wraps a closed-form drift built from engine ops.
class AnalyticDrift : public DriftModel {
 public:
  using Fn = std::function<ad::Value(const ad::Value&, double)>;
  AnalyticDrift(int dim, Fn fn) : fn_(std::move(fn)) { dim_ = dim; }
  ad::Value eval(const ad::Value& x, double t) override { return fn_(x, t); }

 private:
  Fn fn_;
};

void save_checkpoint(const std::string& path, const ParamStore& ps,
                     const std::map<std::string, std::string>& meta = {});
std::map<std::string, std::string> load_checkpoint(const std::string& path, ParamStore& ps);
std::map<std::string, std::string> peek_checkpoint_meta(const std::string& path);

}  // namespace slab
