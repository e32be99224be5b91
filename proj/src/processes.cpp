#include "slab/processes.hpp"

#include <cmath>
#include <fstream>

namespace slab {

using ad::Value;

Endpoint gaussian_endpoint(const GaussianSpec& g) {
  Endpoint e;
  e.dim = g.dim();
  e.sample = [g](int n, Rng& rng) { return g.sample(n, rng); };
  e.log_density = [g](const Value& x) { return g.log_density_graph(x); };
  return e;
}

Endpoint target_endpoint(const TargetPtr& t) {
  Endpoint e;
  e.dim = t->dim();
  if (t->has_exact_sampler())
    e.sample = [t](int n, Rng& rng) { return t->sample_exact(n, rng); };
  e.log_density = [t](const Value& x) { return t->log_unnorm_graph(x); };
  return e;
}

namespace {

// log N(x; mean, var I) per row, as a graph.
Value gaussian_kernel_logpdf(const Value& x, const Value& mean, double var, int dim) {
  SLAB_REQUIRE(var > 0, "simulate: degenerate step kernel (sigma = 0 with RND requested)");
  Value diff = ad::sub(x, mean);
  double c = -0.5 * dim * (kLog2Pi + std::log(var));
  return ad::cadd(ad::cmul(ad::sum_cols(ad::square(diff)), -0.5 / var), c);
}

long long counter_snapshot(const ProcessSpec& q, const ProcessSpec& p) {
  if (q.energy_counter) return q.energy_counter->load();
  if (p.energy_counter) return p.energy_counter->load();
  return 0;
}

}  // namespace

Trajectory simulate(const ProcessSpec& q, const ProcessSpec& p, int n, int steps,
                    std::uint64_t seed, SimOptions opts) {
  SLAB_REQUIRE(steps >= 1 && n >= 1, "simulate: steps and batch must be >= 1");
  SLAB_REQUIRE(q.start.sample, "simulate: sampling process needs a start sampler");
  Rng rng(seed);
  const double T = q.T;
  const double dt = T / steps;
  const int d = q.dim;
  long long calls0 = counter_snapshot(q, p);

  Trajectory traj;
  traj.T = T;
  traj.steps = steps;
  traj.batch = n;
  traj.dim = d;
  traj.detached = opts.detach;
  traj.has_boundary = opts.include_boundary && opts.compute_rnd;

  Mat x0 = q.start.sample(n, rng);
  Value xk = ad::constant(x0);
  traj.times.push_back(0.0);
  traj.states.push_back(x0);
  traj.state_nodes.push_back(xk);

  Value lr;
  for (int k = 0; k < steps; ++k) {
    double tk = k * dt;
    double tk1 = (k + 1) * dt;
    double sq = q.sigma(tk + 0.5 * dt);
    Value dq = q.drift(xk, tk);
    Mat noise = rng.normal_mat(n, d);
    Value mean_f = ad::add(xk, ad::cmul(dq, dt));
    Value xk1 = ad::add(mean_f, ad::constant(sq * std::sqrt(2.0 * dt) * noise));
    if (opts.detach) xk1 = ad::detach(xk1);
    if (!xk1->val.allFinite()) throw NumericalError("simulate: non-finite state");

    if (opts.compute_rnd) {
      Value lpf = gaussian_kernel_logpdf(xk1, mean_f, 2.0 * sq * sq * dt, d);
      double s_back = T - tk1;                     // P-time at the step's right end
      double sp = p.sigma(s_back + 0.5 * dt);      // same physical midpoint as sq
      Value dp = p.drift(xk1, s_back);
      Value mean_b = ad::add(xk1, ad::cmul(dp, dt));
      Value lpb = gaussian_kernel_logpdf(xk, mean_b, 2.0 * sp * sp * dt, d);
      traj.step_log_pf.push_back(lpf);
      traj.step_log_pb.push_back(lpb);
      Value inc = ad::sub(lpf, lpb);
      lr = lr ? ad::add(lr, inc) : inc;
    }

    traj.times.push_back(tk1);
    traj.states.push_back(xk1->val);
    traj.noises.push_back(noise);
    traj.state_nodes.push_back(xk1);
    xk = xk1;
  }

  if (opts.compute_rnd) {
    if (opts.include_boundary) {
      SLAB_REQUIRE(q.start.log_density && p.start.log_density,
                   "simulate: boundary terms need endpoint log-densities");
      Value b = ad::sub(q.start.log_density(traj.state_nodes.front()),
                        p.start.log_density(traj.state_nodes.back()));
      traj.boundary = b;
      lr = ad::add(lr, b);
    }
    traj.log_rnd = lr;
    traj.log_rnd_values = Vec(lr->val.col(0));
    if (!traj.log_rnd_values.allFinite()) throw NumericalError("simulate: non-finite log RND");
  }
  traj.energy_calls = counter_snapshot(q, p) - calls0;
  return traj;
}

Trajectory simulate_from_target(const ProcessSpec& q, const ProcessSpec& p, int n, int steps,
                                std::uint64_t seed, SimOptions opts) {
  SLAB_REQUIRE(p.start.sample, "simulate_from_target: target lacks an exact sampler");
  Rng rng(seed);
  const double T = p.T;
  const double dt = T / steps;
  const int d = p.dim;
  long long calls0 = counter_snapshot(q, p);

  // Generate the path under P in its own time direction.
  std::vector<Mat> ystates;
  {
    ad::NoGradGuard ng;
    Mat y = p.start.sample(n, rng);
    ystates.push_back(y);
    for (int j = 0; j < steps; ++j) {
      double sj = j * dt;
      double sp = p.sigma(sj + 0.5 * dt);
      Mat drift = p.drift(ad::constant(y), sj)->val;
      y += dt * drift + sp * std::sqrt(2.0 * dt) * rng.normal_mat(n, d);
      if (!y.allFinite()) throw NumericalError("simulate_from_target: non-finite state");
      ystates.push_back(y);
    }
  }

  Trajectory traj;
  traj.T = T;
  traj.steps = steps;
  traj.batch = n;
  traj.dim = d;
  traj.detached = true;
  traj.has_boundary = opts.include_boundary && opts.compute_rnd;
  for (int k = 0; k <= steps; ++k) {
    traj.times.push_back(k * dt);
    traj.states.push_back(ystates[steps - k]);
    traj.state_nodes.push_back(ad::constant(ystates[steps - k]));
  }

  if (opts.compute_rnd) {
    Value lr;
    for (int k = 0; k < steps; ++k) {
      double tk = k * dt;
      double sq = q.sigma(tk + 0.5 * dt);
      Value dq = q.drift(traj.state_nodes[k], tk);
      Value mean_f = ad::add(traj.state_nodes[k], ad::cmul(dq, dt));
      Value lpf = gaussian_kernel_logpdf(traj.state_nodes[k + 1], mean_f, 2.0 * sq * sq * dt, d);
      double s_back = T - (k + 1) * dt;
      double sp = p.sigma(s_back + 0.5 * dt);
      Value dp = p.drift(traj.state_nodes[k + 1], s_back);
      Value mean_b = ad::add(traj.state_nodes[k + 1], ad::cmul(dp, dt));
      Value lpb = gaussian_kernel_logpdf(traj.state_nodes[k], mean_b, 2.0 * sp * sp * dt, d);
      traj.step_log_pf.push_back(lpf);
      traj.step_log_pb.push_back(lpb);
      Value inc = ad::sub(lpf, lpb);
      lr = lr ? ad::add(lr, inc) : inc;
    }
    if (opts.include_boundary) {
      Value b = ad::sub(q.start.log_density(traj.state_nodes.front()),
                        p.start.log_density(traj.state_nodes.back()));
      traj.boundary = b;
      lr = ad::add(lr, b);
    }
    traj.log_rnd = lr;
    traj.log_rnd_values = Vec(lr->val.col(0));
  }
  traj.energy_calls = counter_snapshot(q, p) - calls0;
  return traj;
}

ProcessSpec reverse(const ProcessSpec& p,
                    const std::function<Value(const Value&, double)>& marginal_score) {
  SLAB_REQUIRE(static_cast<bool>(marginal_score), "reverse: marginal score required");
  ProcessSpec r = p;
  double T = p.T;
  auto drift = p.drift;
  auto sigma = p.sigma;
  r.drift = [drift, sigma, marginal_score, T](const Value& x, double t) {
    double s = T - t;
    double sg = sigma(s);
    Value fwd = drift(x, s);
    Value score = marginal_score(x, s);
    return ad::neg(ad::sub(fwd, ad::cmul(score, 2.0 * sg * sg)));
  };
  r.sigma = [sigma, T](double t) { return sigma(T - t); };
  r.start = Endpoint{};
  r.start.dim = p.dim;
  return r;
}

ProcessPair make_pis(DriftPtr model, TargetPtr target, double T, double pbm_floor) {
  SLAB_REQUIRE(model->dim() == target->dim(), "make_pis: dim mismatch");
  double floor = pbm_floor > 0 ? pbm_floor : T / 512.0;
  ProcessPair pair;
  pair.target = target;
  pair.q.family = Family::kPbm;
  pair.q.T = T;
  pair.q.dim = model->dim();
  pair.q.drift = [model](const Value& x, double t) { return model->eval(x, t); };
  pair.q.sigma = [](double) { return M_SQRT1_2; };
  pair.q.start = gaussian_endpoint(GaussianSpec::isotropic(model->dim(), 1e-8));
  pair.q.energy_counter = target->counter();

  pair.p.family = Family::kPbm;
  pair.p.T = T;
  pair.p.dim = model->dim();
  pair.p.drift = [T, floor](const Value& y, double s) {
    double denom = std::max(T - s, floor);
    return ad::cmul(y, -1.0 / denom);
  };
  pair.p.sigma = [](double) { return M_SQRT1_2; };
  pair.p.start = target_endpoint(target);
  pair.p.energy_counter = target->counter();
  return pair;
}

ProcessPair make_dds(DriftPtr model, const NoiseSchedule& sched, TargetPtr target) {
  SLAB_REQUIRE(model->dim() == target->dim(), "make_dds: dim mismatch");
  const double T = sched.T;
  ProcessPair pair;
  pair.target = target;
  pair.q.family = Family::kVpReversal;
  pair.q.T = T;
  pair.q.dim = model->dim();
  pair.q.drift = [model, sched, T](const Value& x, double t) {
    double b = sched.beta(T - t);
    double s2 = sched.v * sched.v * b;  // sigma_t^2
    return ad::add(ad::cmul(x, b), ad::cmul(model->eval(x, t), 2.0 * s2));
  };
  pair.q.sigma = [sched](double t) { return sched.sigma(t); };
  pair.q.start = gaussian_endpoint(GaussianSpec::isotropic(model->dim(), sched.v * sched.v));
  pair.q.energy_counter = target->counter();

  pair.p = vp_target_process(sched, target);
  return pair;
}

ProcessSpec vp_target_process(const NoiseSchedule& sched, TargetPtr target) {
  ProcessSpec p;
  p.family = Family::kVpReversal;
  p.T = sched.T;
  p.dim = target->dim();
  p.drift = [sched](const Value& y, double s) { return ad::cmul(y, -sched.beta(s)); };
  p.sigma = [sched](double s) { return sched.v * std::sqrt(sched.beta(s)); };
  p.start = target_endpoint(target);
  p.energy_counter = target->counter();
  return p;
}

ProcessPair make_idem(DriftPtr model, TargetPtr target, double T) {
  SLAB_REQUIRE(model->dim() == target->dim(), "make_idem: dim mismatch");
  ProcessPair pair;
  pair.target = target;
  pair.q.family = Family::kVeReversal;
  pair.q.T = T;
  pair.q.dim = model->dim();
  pair.q.drift = [model, T](const Value& x, double t) {
    double s2 = std::max(T - t, 0.0);  // sigma_t^2 = T - t
    return ad::cmul(model->eval(x, t), 2.0 * s2);
  };
  pair.q.sigma = [T](double t) { return std::sqrt(std::max(T - t, 0.0)); };
  pair.q.start = gaussian_endpoint(GaussianSpec::isotropic(model->dim(), T * T));
  pair.q.energy_counter = target->counter();

  pair.p.family = Family::kVeReversal;
  pair.p.T = T;
  pair.p.dim = model->dim();
  pair.p.drift = [](const Value& y, double) {
    return ad::constant(Mat::Zero(y->val.rows(), y->val.cols()));
  };
  pair.p.sigma = [](double s) { return std::sqrt(std::max(s, 0.0)); };
  pair.p.start = target_endpoint(target);
  pair.p.energy_counter = target->counter();
  return pair;
}

ProcessPair make_escorted(DriftPtr model, PathPtr path, std::function<double(double)> sigma,
                          bool langevin) {
  const double T = path->horizon();
  ProcessPair pair;
  pair.target = path->target();
  pair.q.family = Family::kEscorted;
  pair.q.T = T;
  pair.q.dim = model->dim();
  if (langevin) {
    pair.q.drift = [model, path, sigma](const Value& x, double t) {
      double s2 = sigma(t) * sigma(t);
      return ad::add(model->eval(x, t), ad::cmul(path->grad_log_pi_graph(x, t), s2));
    };
  } else {
    pair.q.drift = [model](const Value& x, double t) { return model->eval(x, t); };
  }
  pair.q.sigma = sigma;
  pair.q.start = gaussian_endpoint(path->prior());
  pair.q.energy_counter = path->target()->counter();

  const double score_coeff = langevin ? 1.0 : 2.0;
  pair.p.family = Family::kEscorted;
  pair.p.T = T;
  pair.p.dim = model->dim();
  pair.p.drift = [model, path, sigma, score_coeff, T](const Value& y, double s) {
    double tt = T - s;
    double s2 = sigma(tt) * sigma(tt);
    Value f = model->eval(y, tt);
    Value score = path->grad_log_pi_graph(y, tt);
    return ad::neg(ad::sub(f, ad::cmul(score, score_coeff * s2)));
  };
  pair.p.sigma = [sigma, T](double s) { return sigma(T - s); };
  pair.p.start = target_endpoint(path->target());
  pair.p.energy_counter = path->target()->counter();
  return pair;
}

ProcessPair make_annealed(DriftPtr reversal_correction, PathPtr path,
                          std::function<double(double)> sigma) {
  const double T = path->horizon();
  ProcessPair pair;
  pair.target = path->target();
  pair.q.family = Family::kAnnealed;
  pair.q.T = T;
  pair.q.dim = path->target()->dim();
  pair.q.drift = [path, sigma](const Value& x, double t) {
    double s2 = sigma(t) * sigma(t);
    return ad::cmul(path->grad_log_pi_graph(x, t), s2);
  };
  pair.q.sigma = sigma;
  pair.q.start = gaussian_endpoint(path->prior());
  pair.q.energy_counter = path->target()->counter();

  pair.p.family = Family::kAnnealed;
  pair.p.T = T;
  pair.p.dim = pair.q.dim;
  pair.p.drift = [path, sigma, reversal_correction, T](const Value& y, double s) {
    double tt = T - s;
    double s2 = sigma(tt) * sigma(tt);
    Value langevin = ad::cmul(path->grad_log_pi_graph(y, tt), s2);
    return ad::add(langevin, reversal_correction->eval(y, tt));
  };
  pair.p.sigma = [sigma, T](double s) { return sigma(T - s); };
  pair.p.start = target_endpoint(path->target());
  pair.p.energy_counter = path->target()->counter();
  return pair;
}

ProcessSpec make_nf_forward(FlowPtr flow, std::function<double(double)> sigma) {
  ProcessSpec q;
  q.family = Family::kNfInduced;
  q.T = flow->horizon();
  q.dim = flow->dim();
  q.drift = [flow, sigma](const Value& x, double t) {
    double s2 = sigma(t) * sigma(t);
    Value vel = flow->velocity_at(x, t);
    if (s2 == 0.0) return vel;
    return ad::add(vel, ad::cmul(flow->score(x, t), s2));
  };
  q.sigma = sigma;
  q.start.dim = flow->dim();
  q.start.sample = [flow](int n, Rng& rng) { return flow->sample_route1(0.0, n, rng); };
  q.start.log_density = [flow](const Value& x) { return flow->log_q(x, 0.0); };
  return q;
}

void Trajectory::export_csv_slices(const std::string& path,
                                   const std::vector<double>& at_times) const {
  std::ofstream f(path);
  SLAB_REQUIRE(f.good(), "cannot open " + path);
  f << "t,path";
  for (int c = 0; c < dim; ++c) f << ",x" << c;
  f << "\n";
  for (double t : at_times) {
    int k = static_cast<int>(std::lround(t / T * steps));
    k = std::min(std::max(k, 0), steps);
    for (int i = 0; i < batch; ++i) {
      f << times[k] << "," << i;
      for (int c = 0; c < dim; ++c) f << "," << states[k](i, c);
      f << "\n";
    }
  }
}

void Trajectory::export_binary(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  SLAB_REQUIRE(f.good(), "cannot open " + path);
  f.write("SLABTRJ1", 8);
  auto w64 = [&](std::uint64_t x) { f.write(reinterpret_cast<char*>(&x), 8); };
  w64(steps);
  w64(batch);
  w64(dim);
  for (const Mat& s : states)
    f.write(reinterpret_cast<const char*>(s.data()),
            static_cast<std::streamsize>(sizeof(double) * s.size()));
  if (log_rnd_values.size())
    f.write(reinterpret_cast<const char*>(log_rnd_values.data()),
            static_cast<std::streamsize>(sizeof(double) * log_rnd_values.size()));
}

}  // namespace slab
