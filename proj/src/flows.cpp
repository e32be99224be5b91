#include "slab/flows.hpp"

#include <cmath>

namespace slab {

using ad::Value;

namespace {

Value time_feats(const TimeFeatures& tf, double t, int rows) {
  Mat f(1, tf.count);
  f.row(0) = tf.eval(t).transpose();
  return ad::tile_rows(ad::constant(std::move(f)), rows);
}

// tanh-bounded log-scale keeps couplings numerically invertible
constexpr double kScaleBound = 1.5;

/// Elementwise affine block x = u * exp(s(t)) + m(t); the only block used in
/// one dimension, where couplings cannot split coordinates.
class DiagAffineLayer : public FlowLayer {
 public:
  DiagAffineLayer(const FlowConfig& cfg, ParamStore& ps, Rng& rng, const std::string& prefix) {
    tf_.count = cfg.time_features;
    tf_.horizon = cfg.horizon;
    MlpConfig mc{cfg.time_features, 2 * cfg.dim, {32}, true, prefix};
    net_ = Mlp(mc, ps, rng);
    dim_ = cfg.dim;
  }

  std::pair<Value, Value> scale_shift(double t, int rows) const {
    Value out = net_.forward(time_feats(tf_, t, 1));
    Value s = ad::cmul(ad::vtanh(ad::slice_cols(out, 0, dim_)), kScaleBound);
    Value m = ad::slice_cols(out, dim_, dim_);
    (void)rows;
    return {s, m};
  }

  Value forward(const Value& u, double t, Value* logdet) const override {
    auto [s, m] = scale_shift(t, (int)u->val.rows());
    Value x = ad::add(ad::mul(u, ad::vexp(s)), m);
    if (logdet) *logdet = ad::add(*logdet, ad::sum_cols(s));
    return x;
  }

  Value inverse(const Value& x, double t, Value* logdet_fwd) const override {
    auto [s, m] = scale_shift(t, (int)x->val.rows());
    Value u = ad::mul(ad::sub(x, m), ad::vexp(ad::neg(s)));
    if (logdet_fwd) *logdet_fwd = ad::add(*logdet_fwd, ad::sum_cols(s));
    return u;
  }

  std::pair<Value, Value> forward_jvp_t(const Value& u, const Value& udot,
                                        double t) const override {
    Value feats = time_feats(tf_, t, 1);
    Mat fdot(1, tf_.count);
    fdot.row(0) = tf_.eval_dt(t).transpose();
    auto [out, outdot] = net_.forward_jvp(feats, ad::constant(std::move(fdot)));
    Value raw_s = ad::slice_cols(out, 0, dim_);
    Value s = ad::cmul(ad::vtanh(raw_s), kScaleBound);
    Value sdot = ad::cmul(ad::mul(ad::slice_cols(outdot, 0, dim_),
                                  ad::cadd(ad::neg(ad::square(ad::vtanh(raw_s))), 1.0)),
                          kScaleBound);
    Value m = ad::slice_cols(out, dim_, dim_);
    Value mdot = ad::slice_cols(outdot, dim_, dim_);
    Value es = ad::vexp(s);
    Value x = ad::add(ad::mul(u, es), m);
    Value xdot = ad::add(ad::add(ad::mul(udot, es), ad::mul(ad::mul(u, es), sdot)), mdot);
    return {x, xdot};
  }

 private:
  Mlp net_;
  TimeFeatures tf_;
  int dim_;
};

/// Affine coupling over a half split; `flip` alternates which half is
/// transformed.
class CouplingLayer : public FlowLayer {
 public:
  CouplingLayer(const FlowConfig& cfg, ParamStore& ps, Rng& rng, const std::string& prefix,
                bool flip)
      : flip_(flip) {
    dim_ = cfg.dim;
    na_ = dim_ / 2;
    if (na_ == 0) na_ = 1;
    nb_ = dim_ - na_;
    if (flip_) std::swap(na_, nb_);
    tf_.count = cfg.time_features;
    tf_.horizon = cfg.horizon;
    MlpConfig mc{na_ + cfg.time_features, 2 * nb_, cfg.hidden, true, prefix};
    net_ = Mlp(mc, ps, rng);
  }

  Value forward(const Value& u, double t, Value* logdet) const override {
    auto [ua, ub] = split(u);
    auto [s, m] = cond(ua, t);
    Value xb = ad::add(ad::mul(ub, ad::vexp(s)), m);
    if (logdet) *logdet = ad::add(*logdet, ad::sum_cols(s));
    return join(ua, xb);
  }

  Value inverse(const Value& x, double t, Value* logdet_fwd) const override {
    auto [xa, xb] = split(x);
    auto [s, m] = cond(xa, t);
    Value ub = ad::mul(ad::sub(xb, m), ad::vexp(ad::neg(s)));
    if (logdet_fwd) *logdet_fwd = ad::add(*logdet_fwd, ad::sum_cols(s));
    return join(xa, ub);
  }

  std::pair<Value, Value> forward_jvp_t(const Value& u, const Value& udot,
                                        double t) const override {
    auto [ua, ub] = split(u);
    auto [uadot, ubdot] = split(udot);
    int rows = (int)u->val.rows();
    Value in = ad::concat_cols(ua, time_feats(tf_, t, rows));
    Mat fdot(1, tf_.count);
    fdot.row(0) = tf_.eval_dt(t).transpose();
    Value indot = ad::concat_cols(uadot, ad::tile_rows(ad::constant(std::move(fdot)), rows));
    auto [out, outdot] = net_.forward_jvp(in, indot);
    Value raw_s = ad::slice_cols(out, 0, nb_);
    Value th = ad::vtanh(raw_s);
    Value s = ad::cmul(th, kScaleBound);
    Value sdot = ad::cmul(
        ad::mul(ad::slice_cols(outdot, 0, nb_), ad::cadd(ad::neg(ad::square(th)), 1.0)),
        kScaleBound);
    Value m = ad::slice_cols(out, nb_, nb_);
    Value mdot = ad::slice_cols(outdot, nb_, nb_);
    Value es = ad::vexp(s);
    Value xb = ad::add(ad::mul(ub, es), m);
    Value xbdot = ad::add(ad::add(ad::mul(ubdot, es), ad::mul(ad::mul(ub, es), sdot)), mdot);
    return {join(ua, xb), join(uadot, xbdot)};
  }

 private:
  std::pair<Value, Value> split(const Value& v) const {
    return {ad::slice_cols(v, 0, na_), ad::slice_cols(v, na_, nb_)};
  }
  Value join(const Value& a, const Value& b) const { return ad::concat_cols(a, b); }
  std::pair<Value, Value> cond(const Value& ua, double t) const {
    Value out = net_.forward(ad::concat_cols(ua, time_feats(tf_, t, (int)ua->val.rows())));
    Value s = ad::cmul(ad::vtanh(ad::slice_cols(out, 0, nb_)), kScaleBound);
    Value m = ad::slice_cols(out, nb_, nb_);
    return {s, m};
  }

  Mlp net_;
  TimeFeatures tf_;
  int dim_ = 0, na_ = 0, nb_ = 0;
  bool flip_;
};

}  // namespace

FlowMap::FlowMap(const FlowConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), base_(GaussianSpec::isotropic(cfg.dim, cfg.base_var)) {
  Rng rng(seed);
  layers_.push_back(std::make_shared<DiagAffineLayer>(cfg_, params_, rng, "affine0"));
  if (cfg_.dim >= 2) {
    for (int c = 0; c < cfg_.couplings; ++c) {
      layers_.push_back(std::make_shared<CouplingLayer>(cfg_, params_, rng,
                                                        "coupling" + std::to_string(c), c % 2));
    }
  }
}

Value FlowMap::forward(const Value& z, double t, Value* logdet) const {
  if (logdet) *logdet = ad::constant(Mat::Zero(z->val.rows(), 1));
  Value h = z;
  for (const auto& l : layers_) h = l->forward(h, t, logdet);
  return h;
}

Value FlowMap::inverse(const Value& x, double t, Value* logdet_fwd) const {
  if (logdet_fwd) *logdet_fwd = ad::constant(Mat::Zero(x->val.rows(), 1));
  Value h = x;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    h = (*it)->inverse(h, t, logdet_fwd);
  return h;
}

std::pair<Value, Value> FlowMap::forward_velocity(const Value& z, double t) const {
  Value h = z;
  Value hdot = ad::constant(Mat::Zero(z->val.rows(), z->val.cols()));
  for (const auto& l : layers_) {
    auto [nh, nhdot] = l->forward_jvp_t(h, hdot, t);
    h = nh;
    hdot = nhdot;
  }
  return {h, hdot};
}

Value FlowMap::velocity_at(const Value& x, double t) const {
  Value z = inverse(x, t, nullptr);
  return forward_velocity(z, t).second;
}

Value FlowMap::log_q(const Value& x, double t) const {
  Value logdet;
  Value z = inverse(x, t, &logdet);
  return ad::sub(base_.log_density_graph(z), logdet);
}

Value FlowMap::log_q_from_base(const Value& z, double t, const Value& logdet) const {
  (void)t;
  return ad::sub(base_.log_density_graph(z), logdet);
}

Value FlowMap::score(const Value& x, double t) const {
  Value xg = x->rg ? x : ad::leaf(x->val);
  Value lq = log_q(xg, t);
  return ad::grad(ad::sum_all(lq), {xg})[0];
}

Mat FlowMap::sample_route1(double t, int n, Rng& rng) const {
  ad::NoGradGuard ng;
  Mat z = base_.sample(n, rng);
  return forward(ad::constant(std::move(z)), t, nullptr)->val;
}

std::pair<Value, Mat> FlowMap::sample_route1_graph(double t, int n, Rng& rng) const {
  Mat z = base_.sample(n, rng);
  Value x = forward(ad::constant(z), t, nullptr);
  return {x, z};
}

Mat FlowMap::sample_route2(double t, int n, const std::function<double(double)>& sigma,
                           int steps, Rng& rng) const {
  SLAB_REQUIRE(steps >= 1, "sample_route2: steps >= 1");
  ad::NoGradGuard ng;
  Mat z = base_.sample(n, rng);
  Mat x = forward(ad::constant(std::move(z)), 0.0, nullptr)->val;
  double dt = t / steps;
  for (int k = 0; k < steps; ++k) {
    double tk = k * dt;
    double s = sigma(tk + 0.5 * dt);
    Value xv = ad::constant(x);
    Mat drift = velocity_at(xv, tk)->val;
    if (s > 0) drift += s * s * score(xv, tk)->val;
    x += dt * drift;
    if (s > 0) x += s * std::sqrt(2.0 * dt) * rng.normal_mat(n, (int)x.cols());
    if (!x.allFinite()) throw NumericalError("sample_route2: non-finite state");
  }
  return x;
}

FlowPtr make_flow(const FlowConfig& cfg, std::uint64_t seed) {
  return std::make_shared<FlowMap>(cfg, seed);
}

}  // namespace slab
