#include "slab/schedules.hpp"

#include <cmath>

namespace slab {

using ad::Value;

NoiseSchedule vp_schedule(double T, double beta_min, double beta_max, double v) {
  SLAB_REQUIRE(T > 0 && beta_min > 0 && beta_max >= beta_min && v > 0,
               "vp_schedule: invalid parameters");
  NoiseSchedule s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.v = v;
  return s;
}

AnnealingPath::AnnealingPath(AnnealKind kind, GaussianSpec prior, TargetPtr target, double T,
                             ExponentKind exponent)
    : kind_(kind), prior_(std::move(prior)), target_(std::move(target)), T_(T),
      exp_kind_(exponent) {
  SLAB_REQUIRE(prior_.dim() == target_->dim(), "AnnealingPath: dim mismatch");
  SLAB_REQUIRE(T_ > 0, "AnnealingPath: horizon must be positive");
  if (kind_ == AnnealKind::kMode) {
    SLAB_REQUIRE((prior_.variance.array() == prior_.variance[0]).all(),
                 "mode path requires an isotropic prior");
    SLAB_REQUIRE(prior_.mean.isZero(0.0), "mode path requires a zero-mean prior");
  }
}

double AnnealingPath::exponent(double t) const {
  double u = std::min(std::max(t / T_, 0.0), 1.0);
  if (exp_kind_ == ExponentKind::kLinear) return u;
  return 0.5 * (1.0 - std::cos(M_PI * u));
}

double AnnealingPath::exponent_dt(double t) const {
  double u = std::min(std::max(t / T_, 0.0), 1.0);
  if (exp_kind_ == ExponentKind::kLinear) return 1.0 / T_;
  return 0.5 * M_PI / T_ * std::sin(M_PI * u);
}

void AnnealingPath::mode_params(double t, Mat& means, Vec& vars) const {
  double b = exponent(t);
  double vp = prior_.variance[0];
  means = b * target_->means();
  vars = ((1.0 - b) * vp + b * target_->variances().array()).matrix();
}

Vec AnnealingPath::log_pi(const Mat& x, double t) const {
  double b = exponent(t);
  if (kind_ == AnnealKind::kGeometric) {
    if (b <= 0.0) return prior_.log_density(x);
    if (b >= 1.0) return target_->log_unnorm(x);
    return b * target_->log_unnorm(x) + (1.0 - b) * prior_.log_density(x);
  }
  Mat means;
  Vec vars;
  mode_params(t, means, vars);
  TargetDensity pi_t(means, vars, target_->weights());
  Vec lp = pi_t.log_unnorm(x);
  target_->counter()->fetch_add(x.rows());  // interpolant access costs a target call
  return lp;
}

Mat AnnealingPath::grad_log_pi(const Mat& x, double t) const {
  double b = exponent(t);
  if (kind_ == AnnealKind::kGeometric) {
    if (b <= 0.0) return prior_.grad_log_density(x);
    if (b >= 1.0) return target_->grad_log(x);
    return b * target_->grad_log(x) + (1.0 - b) * prior_.grad_log_density(x);
  }
  Mat means;
  Vec vars;
  mode_params(t, means, vars);
  TargetDensity pi_t(means, vars, target_->weights());
  Mat g = pi_t.grad_log(x);
  target_->counter()->fetch_add(x.rows());
  return g;
}

Vec AnnealingPath::dt_log_pi(const Mat& x, double t) const {
  double bdot = exponent_dt(t);
  if (kind_ == AnnealKind::kGeometric) {
    Vec lp = target_->log_unnorm(x);
    return bdot * (lp - prior_.log_density(x));
  }
  // Mode path: responsibilities-weighted derivative of the component logs.
  double b = exponent(t);
  double vp = prior_.variance[0];
  const Mat& m0 = target_->means();
  const Vec& v1 = target_->variances();
  const int k = target_->components();
  const int d = dim_check(x);
  Mat cl(x.rows(), k);
  Mat dt_a(x.rows(), k);
  for (int j = 0; j < k; ++j) {
    double vj = (1.0 - b) * vp + b * v1[j];
    double vdot = bdot * (v1[j] - vp);
    Eigen::RowVectorXd mu = b * m0.row(j);
    Eigen::RowVectorXd mudot = bdot * m0.row(j);
    Mat centered = x.rowwise() - mu;
    Vec sq = centered.rowwise().squaredNorm();
    double c = std::log(target_->weights()[j]) - 0.5 * d * (kLog2Pi + std::log(vj));
    cl.col(j) = Vec::Constant(x.rows(), c) - sq / (2.0 * vj);
    dt_a.col(j) = Vec::Constant(x.rows(), -0.5 * d * vdot / vj) +
                  sq * (vdot / (2.0 * vj * vj)) + (centered * mudot.transpose()) / vj;
  }
  Vec mx = cl.rowwise().maxCoeff();
  Mat resp = (cl.colwise() - mx).array().exp();
  Vec norm = resp.rowwise().sum();
  resp.array().colwise() /= norm.array();
  target_->counter()->fetch_add(x.rows());
  return (resp.array() * dt_a.array()).rowwise().sum();
}

int AnnealingPath::dim_check(const Mat& x) const {
  SLAB_REQUIRE(x.cols() == target_->dim(), "AnnealingPath: dim mismatch");
  return target_->dim();
}

Value AnnealingPath::log_pi_graph(const Value& x, double t) const {
  double b = exponent(t);
  if (kind_ == AnnealKind::kGeometric) {
    if (b <= 0.0) return prior_.log_density_graph(x);
    if (b >= 1.0) return target_->log_unnorm_graph(x);
    return ad::add(ad::cmul(target_->log_unnorm_graph(x), b),
                   ad::cmul(prior_.log_density_graph(x), 1.0 - b));
  }
  Mat means;
  Vec vars;
  mode_params(t, means, vars);
  const int k = target_->components();
  const int d = target_->dim();
  Value cl;
  for (int j = 0; j < k; ++j) {
    double c = std::log(target_->weights()[j]) - 0.5 * d * (kLog2Pi + std::log(vars[j]));
    Value centered = ad::sub(x, ad::constant(Mat(means.row(j))));
    Value col = ad::cadd(ad::cmul(ad::sum_cols(ad::square(centered)), -0.5 / vars[j]), c);
    cl = j == 0 ? col : ad::concat_cols(cl, col);
  }
  target_->counter()->fetch_add(x->val.rows());
  if (k == 1) return cl;
  Value mx = ad::row_max_const(cl);
  return ad::add(mx, ad::vlog(ad::sum_cols(ad::vexp(ad::sub(cl, mx)))));
}

Value AnnealingPath::grad_log_pi_graph(const Value& x, double t) const {
  Value xg = x->rg ? x : ad::leaf(x->val);
  Value lp = log_pi_graph(xg, t);
  target_->counter()->fetch_add(x->val.rows());  // gradient access
  return ad::grad(ad::sum_all(lp), {xg})[0];
}

PathPtr geometric_path(const GaussianSpec& prior, TargetPtr target, double T,
                       ExponentKind exponent) {
  return std::make_shared<AnnealingPath>(AnnealKind::kGeometric, prior, std::move(target), T,
                                        exponent);
}

PathPtr mode_path(const GaussianSpec& prior, TargetPtr target, double T, ExponentKind exponent) {
  return std::make_shared<AnnealingPath>(AnnealKind::kMode, prior, std::move(target), T, exponent);
}

}  // namespace slab
