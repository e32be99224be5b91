#include "slab/objectives.hpp"

#include <cmath>

namespace slab {

using ad::Value;

LossReport finish_loss(const Value& node, ParamGroup& params, const Vec* per_path) {
  SLAB_REQUIRE(node->val.size() == 1, "finish_loss: loss must be scalar");
  if (!std::isfinite(node->val(0, 0))) throw NumericalError("loss value is not finite");
  params.zero_grad();
  ad::backward(node);
  LossReport r;
  r.value = node->val(0, 0);
  r.grad = params.flat_grad();
  if (per_path) r.per_path = *per_path;
  return r;
}

Value rkl_node(const Trajectory& traj) {
  SLAB_REQUIRE(traj.log_rnd != nullptr, "rkl_loss: trajectory carries no RND");
  SLAB_REQUIRE(!traj.detached, "rkl_loss: detached trajectory supplied");
  return ad::mean_all(traj.log_rnd);
}

Value lv_node(const Trajectory& traj) {
  SLAB_REQUIRE(traj.log_rnd != nullptr, "lv_loss: trajectory carries no RND");
  SLAB_REQUIRE(traj.batch >= 2, "lv_loss: batch must be >= 2");
  Value m = ad::mean_all(traj.log_rnd);
  Value dev = ad::sub(traj.log_rnd, m);
  return ad::cmul(ad::sum_all(ad::square(dev)), 1.0 / (traj.batch - 1.0));
}

Value tb_node(const Trajectory& traj, const Value& k) {
  SLAB_REQUIRE(traj.log_rnd != nullptr, "tb_loss: trajectory carries no RND");
  return ad::mean_all(ad::square(ad::sub(traj.log_rnd, k)));
}

Value stb_node(const Trajectory& traj, const AnnealingPath& pis, const Value& ks,
               bool unit_segments_only) {
  const int n = traj.steps;
  SLAB_REQUIRE(static_cast<int>(traj.step_log_pf.size()) == n,
               "stb_loss: trajectory lacks step kernels");
  SLAB_REQUIRE(ks->val.rows() == 1 && ks->val.cols() == n + 1,
               "stb_loss: baseline row must be 1 x (steps + 1)");
  // A_i = log pi_i(x_i) - S_i + k_i with S_i the prefix sum of per-step
  // forward/backward kernel log ratios; every segment residual is A_i - A_j.
  Value a_cols;
  Value s;  // prefix sum, B x 1
  for (int i = 0; i <= n; ++i) {
    if (i > 0) {
      Value inc = ad::sub(traj.step_log_pf[i - 1], traj.step_log_pb[i - 1]);
      s = s ? ad::add(s, inc) : inc;
    }
    Value logpi = pis.log_pi_graph(traj.state_nodes[i], traj.times[i]);
    Value ai = ad::add(logpi, ad::slice_cols(ks, i, 1));
    if (i > 0) ai = ad::sub(ai, s);
    a_cols = i == 0 ? ai : ad::concat_cols(a_cols, ai);
  }
  if (unit_segments_only) {
    Value diff = ad::sub(ad::slice_cols(a_cols, 0, n), ad::slice_cols(a_cols, 1, n));
    return ad::mean_all(ad::sum_cols(ad::square(diff)));
  }
  // sum over all i < j of (A_i - A_j)^2 = (N+1) sum A^2 - (sum A)^2, per path
  Value sum_sq = ad::sum_cols(ad::square(a_cols));
  Value sq_sum = ad::square(ad::sum_cols(a_cols));
  Value per_path = ad::sub(ad::cmul(sum_sq, static_cast<double>(n + 1)), sq_sum);
  return ad::mean_all(per_path);
}

Value db_node(const Trajectory& traj, const AnnealingPath& pis, const Value& ks) {
  return stb_node(traj, pis, ks, /*unit_segments_only=*/true);
}

namespace {

// sum_i d f_i / d x_i per row, via one reverse pass per output coordinate.
Value divergence(DriftModel& f, const Value& xg, const Value& fout) {
  const int d = static_cast<int>(xg->val.cols());
  (void)f;
  Value div;
  for (int i = 0; i < d; ++i) {
    Value gi = ad::grad(ad::sum_all(ad::slice_cols(fout, i, 1)), {xg})[0];
    Value di = ad::slice_cols(gi, i, 1);
    div = div ? ad::add(div, di) : di;
  }
  return div;
}

}  // namespace

Value pinn_node(DriftModel& f, const AnnealingPath& path, const TimeScalarNet& dtF,
                const std::vector<SampleBatch>& batches) {
  SLAB_REQUIRE(!batches.empty(), "pinn_loss: empty sample source");
  const double T = path.horizon();
  Value acc;
  for (const auto& b : batches) {
    Value xg = ad::leaf(b.x);
    Value fout = f.eval(xg, b.t);
    Value div = divergence(f, xg, fout);
    Mat glp = path.grad_log_pi(b.x, b.t);
    Mat dtlp = path.dt_log_pi(b.x, b.t);
    Value dot = ad::sum_cols(ad::mul(fout, ad::constant(glp)));
    Value resid = ad::add(ad::add(div, dot), ad::constant(Mat(dtlp)));
    resid = ad::add(resid, dtF.eval(b.t));
    Value term = ad::mean_all(ad::square(resid));
    acc = acc ? ad::add(acc, term) : term;
  }
  return ad::cmul(acc, T / static_cast<double>(batches.size()));
}

Value am_node(PotentialDrift& pot, const std::vector<SampleBatch>& time_batches,
              const Mat& prior_samples, const Mat& target_samples, double T) {
  SLAB_REQUIRE(pot.kind() == DriftKind::kPotential, "am_loss: potential-kind model required");
  SLAB_REQUIRE(!time_batches.empty(), "am_loss: empty sample source");
  Value acc;
  for (const auto& b : time_batches) {
    Value gradphi = pot.eval(ad::constant(b.x), b.t);
    Value dphi = pot.phi_and_dt(ad::constant(b.x), b.t).second;
    Value term =
        ad::mean_all(ad::add(ad::cmul(ad::sum_cols(ad::square(gradphi)), 0.5), dphi));
    acc = acc ? ad::add(acc, term) : term;
  }
  Value integral = ad::cmul(acc, T / static_cast<double>(time_batches.size()));
  Value phi0 = ad::mean_all(pot.phi(ad::constant(prior_samples), 0.0));
  Value phiT = ad::mean_all(pot.phi(ad::constant(target_samples), T));
  return ad::add(integral, ad::sub(phi0, phiT));
}

SnisResult snis_score(const TargetDensity& target, const Mat& x, double proposal_var, int m,
                      std::uint64_t seed) {
  SLAB_REQUIRE(m >= 1, "snis_score: m >= 1");
  SLAB_REQUIRE(proposal_var > 0, "snis_score: proposal variance must be positive");
  Rng rng(seed);
  const int d = static_cast<int>(x.cols());
  const double sd = std::sqrt(proposal_var);
  SnisResult out;
  out.score.resize(x.rows(), d);
  out.ess.resize(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    Mat props = sd * rng.normal_mat(m, d);
    props.rowwise() += x.row(i);
    Vec logw = target.log_unnorm(props);
    Mat grads = target.grad_log(props);
    double mx = logw.maxCoeff();
    if (!std::isfinite(mx)) throw NumericalError("snis_score: all weights underflow");
    Vec w = (logw.array() - mx).exp();
    double ws = w.sum();
    w /= ws;
    out.score.row(i) = (grads.array().colwise() * w.array()).colwise().sum();
    out.ess[i] = 1.0 / w.array().square().sum();
    if (i + 1 == x.rows()) out.weights_last = w;
  }
  return out;
}

double ve_proposal_variance(double T, double t) {
  // variance accumulated by dY = sqrt(2s) dW between noising times 0 and T-t
  double s = T - t;
  return std::max(s * s, 1e-12);
}

Value idem_regression_node(DriftModel& f, const TargetDensity& target, double T,
                           const std::vector<SampleBatch>& buffer, int m, std::uint64_t seed) {
  SLAB_REQUIRE(!buffer.empty(), "idem_regression: empty buffer");
  Rng rng(seed);
  Value acc;
  for (const auto& b : buffer) {
    SnisResult est = snis_score(target, b.x, ve_proposal_variance(T, b.t), m, rng.next_u64());
    Value pred = f.eval(ad::constant(b.x), b.t);
    Value resid = ad::sub(pred, ad::constant(est.score));
    Value term = ad::mean_all(ad::sum_cols(ad::square(resid)));
    acc = acc ? ad::add(acc, term) : term;
  }
  return ad::cmul(acc, 1.0 / static_cast<double>(buffer.size()));
}

Vec sfs_control(const TargetDensity& target, const Vec& x, double t, double T,
                double sigma_init, int m, std::uint64_t seed) {
  SLAB_REQUIRE(m >= 1 && T > 0 && t >= 0 && t <= T, "sfs_control: bad arguments");
  Rng rng(seed);
  const int d = static_cast<int>(x.size());
  const double ref_var = T + sigma_init * sigma_init;  // nu_T^ref = N(0, (T + s0^2) I)
  const double prop_sd = std::sqrt(std::max(T - t, 1e-12));
  Mat props = prop_sd * rng.normal_mat(m, d);
  props.rowwise() += x.transpose();
  Vec logp = target.log_unnorm(props);
  Mat grads = target.grad_log(props);
  // log r = log p~(y) - log nu(y) up to a constant shared by num and denom
  Vec logr = logp + props.rowwise().squaredNorm() / (2.0 * ref_var);
  double mx = logr.maxCoeff();
  if (!std::isfinite(mx)) throw NumericalError("sfs_control: denominator underflow");
  Vec r = (logr.array() - mx).exp();
  // grad r = r * (grad log p~ + y / ref_var)
  Mat integrand = grads + props / ref_var;
  Vec num = (integrand.array().colwise() * r.array()).colwise().sum();
  double den = r.sum();
  if (den <= 0 || !std::isfinite(den)) throw NumericalError("sfs_control: denominator underflow");
  return num / den;
}

Value nf_dds_node(const FlowMap& flow, const TargetDensity& target, const NoiseSchedule& sched,
                  int time_strata, int n_per_time, std::uint64_t seed) {
  SLAB_REQUIRE(time_strata >= 1 && n_per_time >= 1, "nf_dds_loss: bad sample counts");
  Rng rng(seed);
  const double T = sched.T;
  const double v2 = sched.v * sched.v;
  Value acc;
  for (int i = 0; i < time_strata; ++i) {
    double t = (i + rng.uniform()) * T / time_strata;
    Mat z = flow.base().sample(n_per_time, rng);
    auto [x, vel] = flow.forward_velocity(ad::constant(std::move(z)), t);
    Value sc = flow.score(x, t);
    double b = sched.beta(T - t);
    Value resid = ad::sub(ad::sub(vel, ad::cmul(sc, v2 * b)), ad::cmul(x, b));
    Value term = ad::cmul(ad::mean_all(ad::sum_cols(ad::square(resid))), 1.0 / (4.0 * v2 * b));
    acc = acc ? ad::add(acc, term) : term;
  }
  Value integral = ad::cmul(acc, T / static_cast<double>(time_strata));
  // terminal KL[q(.,T) || p_target], up to the unknown log Z
  Mat zT = flow.base().sample(n_per_time, rng);
  Value logdet;
  Value xT = flow.forward(ad::constant(zT), T, &logdet);
  Value logq = flow.log_q_from_base(ad::constant(zT), T, logdet);
  Value terminal = ad::mean_all(ad::sub(logq, target.log_unnorm_graph(xT)));
  return ad::add(integral, terminal);
}

Value nf_cmcd_node(const FlowMap& flow, const AnnealingPath& path,
                   const std::function<double(double)>& sigma, NfCmcdWeight weight,
                   int time_strata, int n_per_time, std::uint64_t seed) {
  SLAB_REQUIRE(time_strata >= 1 && n_per_time >= 1, "nf_cmcd_loss: bad sample counts");
  Rng rng(seed);
  const double T = path.horizon();
  Value acc;
  for (int i = 0; i < time_strata; ++i) {
    double t = (i + rng.uniform()) * T / time_strata;
    double sg = sigma(t);
    SLAB_REQUIRE(sg > 0, "nf_cmcd_loss: sigma must be positive");
    double w = 0.0;
    switch (weight) {
      case NfCmcdWeight::kInv4Sigma2: w = 1.0 / (4.0 * sg * sg); break;
      case NfCmcdWeight::kInvSigma: w = 1.0 / sg; break;
      case NfCmcdWeight::kInvSigma2: w = 1.0 / (sg * sg); break;
    }
    Mat z = flow.base().sample(n_per_time, rng);
    auto [x, vel] = flow.forward_velocity(ad::constant(std::move(z)), t);
    (void)vel;  // the Fisher integrand involves only the scores
    Value diff = ad::sub(flow.score(x, t), path.grad_log_pi_graph(x, t));
    Value scaled = ad::cmul(diff, sg * sg);
    Value term = ad::cmul(ad::mean_all(ad::sum_cols(ad::square(scaled))), w);
    acc = acc ? ad::add(acc, term) : term;
  }
  Value integral = ad::cmul(acc, T / static_cast<double>(time_strata));
  Mat zT = flow.base().sample(n_per_time, rng);
  Value logdet;
  Value xT = flow.forward(ad::constant(zT), T, &logdet);
  Value logq = flow.log_q_from_base(ad::constant(zT), T, logdet);
  Value terminal =
      ad::mean_all(ad::sub(logq, path.target()->log_unnorm_graph(xT)));
  return ad::add(integral, terminal);
}

}  // namespace slab
