#include "slab/models.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

namespace slab {

using ad::Value;

Value ParamStore::add(const std::string& name, Mat init) {
  for (const auto& s : segs_) SLAB_REQUIRE(s.name != name, "duplicate parameter " + name);
  Value v = ad::leaf(std::move(init));
  segs_.push_back({name, v});
  return v;
}

Value ParamStore::find(const std::string& name) const {
  for (const auto& s : segs_)
    if (s.name == name) return s.node;
  throw InvalidArgument("no parameter named " + name);
}

int ParamStore::size() const {
  int n = 0;
  for (const auto& s : segs_) n += static_cast<int>(s.node->val.size());
  return n;
}

Vec ParamStore::flat() const {
  Vec out(size());
  int at = 0;
  for (const auto& s : segs_) {
    const Mat& m = s.node->val;
    for (int j = 0; j < m.cols(); ++j)
      for (int i = 0; i < m.rows(); ++i) out[at++] = m(i, j);
  }
  return out;
}

void ParamStore::set_flat(const Vec& v) {
  SLAB_REQUIRE(v.size() == size(), "ParamStore::set_flat: size mismatch");
  int at = 0;
  for (auto& s : segs_) {
    Mat& m = s.node->val;
    for (int j = 0; j < m.cols(); ++j)
      for (int i = 0; i < m.rows(); ++i) m(i, j) = v[at++];
  }
}

Vec ParamStore::flat_grad() const {
  Vec out = Vec::Zero(size());
  int at = 0;
  for (const auto& s : segs_) {
    const Mat& m = s.node->val;
    if (s.node->grad_set) {
      const Mat& g = s.node->grad;
      for (int j = 0; j < m.cols(); ++j)
        for (int i = 0; i < m.rows(); ++i) out[at++] = g(i, j);
    } else {
      at += static_cast<int>(m.size());
    }
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& s : segs_) {
    s.node->grad_set = false;
    s.node->grad.resize(0, 0);
  }
}

int ParamGroup::size() const {
  int n = 0;
  for (auto* s : stores_) n += s->size();
  return n;
}
Vec ParamGroup::flat() const {
  Vec out(size());
  int at = 0;
  for (auto* s : stores_) {
    out.segment(at, s->size()) = s->flat();
    at += s->size();
  }
  return out;
}
void ParamGroup::set_flat(const Vec& v) {
  SLAB_REQUIRE(v.size() == size(), "ParamGroup::set_flat: size mismatch");
  int at = 0;
  for (auto* s : stores_) {
    s->set_flat(v.segment(at, s->size()));
    at += s->size();
  }
}
Vec ParamGroup::flat_grad() const {
  Vec out(size());
  int at = 0;
  for (auto* s : stores_) {
    out.segment(at, s->size()) = s->flat_grad();
    at += s->size();
  }
  return out;
}
void ParamGroup::zero_grad() {
  for (auto* s : stores_) s->zero_grad();
}

Vec adam_step(const Vec& params, const Vec& grad, AdamState& state, double lr) {
  SLAB_REQUIRE(params.size() == grad.size(), "adam_step: shape mismatch");
  if (state.m.size() != params.size()) {
    state.m = Vec::Zero(params.size());
    state.v = Vec::Zero(params.size());
    state.t = 0;
  }
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.array().square().matrix();
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  Vec mhat = state.m / bc1;
  Vec vhat = state.v / bc2;
  return params.array() - lr * mhat.array() / (vhat.array().sqrt() + state.eps);
}

void Adam::step(ParamGroup& ps) {
  Vec p = ps.flat();
  Vec g = ps.flat_grad();
  if (!g.allFinite()) throw NumericalError("Adam: non-finite gradient");
  ps.set_flat(adam_step(p, g, state_, lr_));
  ps.zero_grad();
}

Vec TimeFeatures::eval(double t) const {
  Vec out(count);
  double u = t / horizon;
  int pairs = count / 2;
  for (int i = 0; i < pairs; ++i) {
    double f = std::pow(2.0, 6.0 * i / std::max(1, pairs - 1));  // 1 .. 64
    out[2 * i] = std::sin(M_PI * f * u);
    out[2 * i + 1] = std::cos(M_PI * f * u);
  }
  if (count % 2) out[count - 1] = u;
  return out;
}

Vec TimeFeatures::eval_dt(double t) const {
  Vec out(count);
  double u = t / horizon;
  int pairs = count / 2;
  for (int i = 0; i < pairs; ++i) {
    double f = std::pow(2.0, 6.0 * i / std::max(1, pairs - 1));
    double w = M_PI * f / horizon;
    out[2 * i] = w * std::cos(M_PI * f * u);
    out[2 * i + 1] = -w * std::sin(M_PI * f * u);
  }
  if (count % 2) out[count - 1] = 1.0 / horizon;
  return out;
}

Mlp::Mlp(const MlpConfig& cfg, ParamStore& ps, Rng& rng) {
  std::vector<int> dims;
  dims.push_back(cfg.in);
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(cfg.out);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    bool last = l + 2 == dims.size();
    double scale = (last && cfg.zero_init_last) ? 0.0 : std::sqrt(1.0 / dims[l]);
    Mat w = scale * rng.normal_mat(dims[l], dims[l + 1]);
    Mat b = Mat::Zero(1, dims[l + 1]);
    w_.push_back(ps.add(cfg.prefix + ".w" + std::to_string(l), std::move(w)));
    b_.push_back(ps.add(cfg.prefix + ".b" + std::to_string(l), std::move(b)));
  }
}

Value Mlp::forward(const Value& x) const {
  Value h = x;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    h = ad::add(ad::matmul(h, w_[l]), b_[l]);
    if (l + 1 < w_.size()) h = ad::gelu(h);
  }
  return h;
}

namespace {

// d gelu / dx = Phi(x) + x * phi(x), built from ops (stays differentiable).
Value gelu_derivative(const Value& x) {
  Value cdf = ad::cmul(ad::cadd(ad::verf(ad::cmul(x, M_SQRT1_2)), 1.0), 0.5);
  Value pdf = ad::cmul(ad::vexp(ad::cmul(ad::square(x), -0.5)), 1.0 / std::sqrt(2.0 * M_PI));
  return ad::add(cdf, ad::mul(x, pdf));
}

}  // namespace

std::pair<Value, Value> Mlp::forward_jvp(const Value& x, const Value& xdot) const {
  Value h = x;
  Value hdot = xdot;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    Value pre = ad::add(ad::matmul(h, w_[l]), b_[l]);
    Value predot = ad::matmul(hdot, w_[l]);
    if (l + 1 < w_.size()) {
      h = ad::gelu(pre);
      hdot = ad::mul(predot, gelu_derivative(pre));
    } else {
      h = pre;
      hdot = predot;
    }
  }
  return {h, hdot};
}

TimeScalarNet::TimeScalarNet(int time_features, double horizon, const std::vector<int>& hidden,
                             std::uint64_t seed) {
  tf_.count = time_features;
  tf_.horizon = horizon;
  Rng rng(seed);
  MlpConfig mc{time_features, 1, hidden, true, "dtF"};
  net_ = Mlp(mc, params_, rng);
}

ad::Value TimeScalarNet::eval(double t) const {
  Mat f(1, tf_.count);
  f.row(0) = tf_.eval(t).transpose();
  return net_.forward(ad::constant(std::move(f)));
}

DriftKind drift_kind_from_string(const std::string& s) {
  if (s == "plain") return DriftKind::kPlain;
  if (s == "langevin" || s == "langevin_precond" || s == "lg") return DriftKind::kLangevinPrecond;
  if (s == "energy" || s == "energy_conditioned" || s == "energy_cond")
    return DriftKind::kEnergyCond;
  if (s == "potential") return DriftKind::kPotential;
  throw InvalidArgument("unknown drift kind: " + s);
}

std::string to_string(DriftKind k) {
  switch (k) {
    case DriftKind::kPlain: return "plain";
    case DriftKind::kLangevinPrecond: return "langevin_precond";
    case DriftKind::kEnergyCond: return "energy_conditioned";
    case DriftKind::kPotential: return "potential";
  }
  return "?";
}

Mat DriftModel::eval_fast(const Mat& x, double t) {
  ad::NoGradGuard ng;
  return eval(ad::constant(x), t)->val;
}

namespace {

Value time_feature_node(const TimeFeatures& tf, double t, int rows) {
  Mat f(1, tf.count);
  f.row(0) = tf.eval(t).transpose();
  return ad::tile_rows(ad::constant(std::move(f)), rows);
}

class PlainDrift : public DriftModel {
 public:
  PlainDrift(const DriftConfig& cfg, std::uint64_t seed) {
    kind_ = DriftKind::kPlain;
    dim_ = cfg.dim;
    tf_.count = cfg.time_features;
    tf_.horizon = cfg.horizon;
    Rng rng(seed);
    MlpConfig mc{cfg.dim + cfg.time_features, cfg.dim, cfg.hidden, true, "net"};
    net_ = Mlp(mc, params_, rng);
  }
  Value eval(const Value& x, double t) override {
    return net_.forward(ad::concat_cols(x, time_feature_node(tf_, t, (int)x->val.rows())));
  }

 private:
  Mlp net_;
  TimeFeatures tf_;
};

class LangevinPrecondDrift : public DriftModel {
 public:
  LangevinPrecondDrift(const DriftConfig& cfg, TargetPtr target, std::uint64_t seed)
      : target_(std::move(target)) {
    SLAB_REQUIRE(target_ != nullptr, "langevin_precond drift needs a target hook");
    kind_ = DriftKind::kLangevinPrecond;
    dim_ = cfg.dim;
    tf_.count = cfg.time_features;
    tf_.horizon = cfg.horizon;
    Rng rng(seed);
    MlpConfig m1{cfg.dim + cfg.time_features, cfg.dim, cfg.hidden, true, "nn1"};
    nn1_ = Mlp(m1, params_, rng);
    MlpConfig m2{cfg.time_features, cfg.dim, {64}, true, "nn2"};
    nn2_ = Mlp(m2, params_, rng);
  }
  Value eval(const Value& x, double t) override {
    int rows = (int)x->val.rows();
    Value feat = time_feature_node(tf_, t, rows);
    Value out1 = nn1_.forward(ad::concat_cols(x, feat));
    // per-dimension scale in (0, 2), exactly 1 at init
    Value scale = ad::cmul(ad::vsigmoid(nn2_.forward(time_feature_node(tf_, t, 1))), 2.0);
    Value score = target_->grad_log_graph(x);
    return ad::add(out1, ad::mul(score, scale));
  }

 private:
  Mlp nn1_, nn2_;
  TimeFeatures tf_;
  TargetPtr target_;
};

class EnergyCondDrift : public DriftModel {
 public:
  EnergyCondDrift(const DriftConfig& cfg, TargetPtr target, std::uint64_t seed)
      : target_(std::move(target)), scale_(cfg.energy_scale) {
    SLAB_REQUIRE(target_ != nullptr, "energy_conditioned drift needs a target hook");
    kind_ = DriftKind::kEnergyCond;
    dim_ = cfg.dim;
    tf_.count = cfg.time_features;
    tf_.horizon = cfg.horizon;
    Rng rng(seed);
    MlpConfig mc{cfg.dim + 1 + cfg.time_features, cfg.dim, cfg.hidden, true, "net"};
    net_ = Mlp(mc, params_, rng);
  }
  Value eval(const Value& x, double t) override {
    Value energy = ad::cmul(target_->log_unnorm_graph(x), scale_);
    Value feat = time_feature_node(tf_, t, (int)x->val.rows());
    return net_.forward(ad::concat_cols(ad::concat_cols(x, energy), feat));
  }

 private:
  Mlp net_;
  TimeFeatures tf_;
  TargetPtr target_;
  double scale_;
};

}  // namespace

PotentialDrift::PotentialDrift(const DriftConfig& cfg, std::uint64_t seed) {
  kind_ = DriftKind::kPotential;
  dim_ = cfg.dim;
  tf_.count = cfg.time_features;
  tf_.horizon = cfg.horizon;
  Rng rng(seed);
  MlpConfig mc{cfg.dim + cfg.time_features, 1, cfg.hidden, false, "phi"};
  net_ = Mlp(mc, params_, rng);
}

Value PotentialDrift::phi(const Value& x, double t) const {
  return net_.forward(ad::concat_cols(x, time_feature_node(tf_, t, (int)x->val.rows())));
}

std::pair<Value, Value> PotentialDrift::phi_and_dt(const Value& x, double t) const {
  int rows = (int)x->val.rows();
  Value in = ad::concat_cols(x, time_feature_node(tf_, t, rows));
  Mat tang(1, x->val.cols() + tf_.count);
  tang.setZero();
  tang.block(0, x->val.cols(), 1, tf_.count) = tf_.eval_dt(t).transpose();
  Value indot = ad::tile_rows(ad::constant(std::move(tang)), rows);
  return net_.forward_jvp(in, indot);
}

Value PotentialDrift::eval(const Value& x, double t) {
  Value xg = x->rg ? x : ad::leaf(x->val);
  Value p = phi(xg, t);
  return ad::grad(ad::sum_all(p), {xg})[0];
}

DriftPtr make_drift(const DriftConfig& cfg, TargetPtr target, std::uint64_t seed) {
  switch (cfg.kind) {
    case DriftKind::kPlain: return std::make_shared<PlainDrift>(cfg, seed);
    case DriftKind::kLangevinPrecond:
      return std::make_shared<LangevinPrecondDrift>(cfg, target, seed);
    case DriftKind::kEnergyCond: return std::make_shared<EnergyCondDrift>(cfg, target, seed);
    case DriftKind::kPotential: return std::make_shared<PotentialDrift>(cfg, seed);
  }
  throw InvalidArgument("make_drift: bad kind");
}

namespace {

void write_u32(std::ostream& f, std::uint32_t x) { f.write(reinterpret_cast<char*>(&x), 4); }
void write_u64(std::ostream& f, std::uint64_t x) { f.write(reinterpret_cast<char*>(&x), 8); }
void write_str(std::ostream& f, const std::string& s) {
  write_u32(f, static_cast<std::uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t read_u32(std::istream& f) {
  std::uint32_t x;
  f.read(reinterpret_cast<char*>(&x), 4);
  return x;
}
std::uint64_t read_u64(std::istream& f) {
  std::uint64_t x;
  f.read(reinterpret_cast<char*>(&x), 8);
  return x;
}
std::string read_str(std::istream& f) {
  std::uint32_t n = read_u32(f);
  std::string s(n, '\0');
  f.read(s.data(), n);
  return s;
}

constexpr char kMagic[] = "SLABCKP1";

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& ps,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream f(path, std::ios::binary);
  SLAB_REQUIRE(f.good(), "cannot open " + path);
  f.write(kMagic, 8);
  write_u32(f, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    write_str(f, k);
    write_str(f, v);
  }
  write_u32(f, static_cast<std::uint32_t>(ps.segments().size()));
  for (const auto& s : ps.segments()) {
    write_str(f, s.name);
    write_u64(f, static_cast<std::uint64_t>(s.node->val.rows()));
    write_u64(f, static_cast<std::uint64_t>(s.node->val.cols()));
    f.write(reinterpret_cast<const char*>(s.node->val.data()),
            static_cast<std::streamsize>(sizeof(double) * s.node->val.size()));
  }
}

std::map<std::string, std::string> load_checkpoint(const std::string& path, ParamStore& ps) {
  std::ifstream f(path, std::ios::binary);
  SLAB_REQUIRE(f.good(), "cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  SLAB_REQUIRE(std::string(magic, 8) == kMagic, "bad checkpoint magic in " + path);
  std::map<std::string, std::string> meta;
  std::uint32_t nmeta = read_u32(f);
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = read_str(f);
    meta[k] = read_str(f);
  }
  std::uint32_t nsegs = read_u32(f);
  SLAB_REQUIRE(nsegs == ps.segments().size(), "checkpoint segment count mismatch");
  for (std::uint32_t i = 0; i < nsegs; ++i) {
    std::string name = read_str(f);
    auto node = ps.find(name);
    auto rows = static_cast<Eigen::Index>(read_u64(f));
    auto cols = static_cast<Eigen::Index>(read_u64(f));
    SLAB_REQUIRE(rows == node->val.rows() && cols == node->val.cols(),
                 "checkpoint shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(node->val.data()),
           static_cast<std::streamsize>(sizeof(double) * rows * cols));
  }
  SLAB_REQUIRE(f.good(), "truncated checkpoint " + path);
  return meta;
}

std::map<std::string, std::string> peek_checkpoint_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SLAB_REQUIRE(f.good(), "cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  SLAB_REQUIRE(std::string(magic, 8) == kMagic, "bad checkpoint magic in " + path);
  std::map<std::string, std::string> meta;
  std::uint32_t nmeta = read_u32(f);
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = read_str(f);
    meta[k] = read_str(f);
  }
  return meta;
}

}  // namespace slab
