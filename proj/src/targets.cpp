#include "slab/targets.hpp"

#include <cmath>
#include <fstream>

namespace slab {

using ad::Value;

Vec GaussianSpec::log_density(const Mat& x) const {
  SLAB_REQUIRE(x.cols() == dim(), "GaussianSpec: dim mismatch");
  double c = -0.5 * dim() * kLog2Pi - 0.5 * variance.array().log().sum();
  Mat centered = x.rowwise() - mean.transpose();
  Vec quad = (centered.array().square().rowwise() / (2.0 * variance.transpose().array()))
                 .rowwise()
                 .sum();
  return Vec::Constant(x.rows(), c) - quad;
}

Mat GaussianSpec::grad_log_density(const Mat& x) const {
  Mat centered = x.rowwise() - mean.transpose();
  return (-(centered.array().rowwise() / variance.transpose().array())).matrix();
}

Value GaussianSpec::log_density_graph(const Value& x) const {
  double c = -0.5 * dim() * kLog2Pi - 0.5 * variance.array().log().sum();
  Value centered = ad::sub(x, ad::constant(Mat(mean.transpose())));
  Mat inv2v = (0.5 / variance.array()).matrix().transpose();
  Value quad = ad::sum_cols(ad::mul(ad::square(centered), ad::constant(Mat(inv2v))));
  return ad::cadd(ad::neg(quad), c);
}

Mat GaussianSpec::sample(int n, Rng& rng) const {
  Mat z = rng.normal_mat(n, dim());
  Vec sd = variance.array().sqrt();
  return (z.array().rowwise() * sd.transpose().array()).matrix().rowwise() + mean.transpose();
}

TargetDensity::TargetDensity(Mat means, Vec variances, Vec weights)
    : means_(std::move(means)),
      variances_(std::move(variances)),
      weights_(std::move(weights)),
      counter_(std::make_shared<std::atomic<long long>>(0)) {
  SLAB_REQUIRE(means_.rows() == variances_.size() && means_.rows() == weights_.size(),
               "TargetDensity: component count mismatch");
  SLAB_REQUIRE((variances_.array() > 0).all(), "TargetDensity: variances must be positive");
  SLAB_REQUIRE(std::abs(weights_.sum() - 1.0) < 1e-12, "TargetDensity: weights must sum to 1");
  SLAB_REQUIRE((weights_.array() >= 0).all(), "TargetDensity: weights must be nonnegative");
  log_weights_ = weights_.array().max(1e-300).log();
}

namespace {

// Rows of the component log-density matrix: log w_k + log N(x; m_k, v_k I).
Mat component_logs(const Mat& x, const Mat& means, const Vec& vars, const Vec& logw) {
  const int k = static_cast<int>(means.rows());
  const int d = static_cast<int>(means.cols());
  Mat out(x.rows(), k);
  for (int j = 0; j < k; ++j) {
    double c = logw[j] - 0.5 * d * (kLog2Pi + std::log(vars[j]));
    Vec sq = (x.rowwise() - means.row(j)).rowwise().squaredNorm();
    out.col(j) = Vec::Constant(x.rows(), c) - sq / (2.0 * vars[j]);
  }
  return out;
}

}  // namespace

Vec TargetDensity::log_unnorm(const Mat& x) const {
  SLAB_REQUIRE(x.cols() == dim(), "TargetDensity: dim mismatch");
  if (!x.allFinite()) throw NumericalError("TargetDensity: non-finite input");
  counter_->fetch_add(x.rows());
  Mat cl = component_logs(x, means_, variances_, log_weights_);
  Vec m = cl.rowwise().maxCoeff();
  Vec s = ((cl.colwise() - m).array().exp().rowwise().sum()).log();
  return m + s;
}

Mat TargetDensity::grad_log(const Mat& x) const {
  SLAB_REQUIRE(x.cols() == dim(), "TargetDensity: dim mismatch");
  if (!x.allFinite()) throw NumericalError("TargetDensity: non-finite input");
  counter_->fetch_add(x.rows());
  Mat cl = component_logs(x, means_, variances_, log_weights_);
  Vec m = cl.rowwise().maxCoeff();
  Mat resp = (cl.colwise() - m).array().exp();
  Vec norm = resp.rowwise().sum();
  resp.array().colwise() /= norm.array();
  // grad = sum_k r_k * (m_k - x) / v_k
  Mat grad = Mat::Zero(x.rows(), dim());
  for (int j = 0; j < components(); ++j) {
    Mat diff = (means_.row(j).replicate(x.rows(), 1) - x) / variances_[j];
    grad += (diff.array().colwise() * resp.col(j).array()).matrix();
  }
  return grad;
}

std::pair<Vec, Mat> TargetDensity::log_and_grad(const Mat& x) const {
  return {log_unnorm(x), grad_log(x)};
}

Value TargetDensity::log_unnorm_graph(const Value& x) const {
  SLAB_REQUIRE(x->val.cols() == dim(), "TargetDensity: dim mismatch");
  counter_->fetch_add(x->val.rows());
  const int k = components();
  Value cl;
  for (int j = 0; j < k; ++j) {
    double c = log_weights_[j] - 0.5 * dim() * (kLog2Pi + std::log(variances_[j]));
    Value centered = ad::sub(x, ad::constant(Mat(means_.row(j))));
    Value col = ad::cadd(ad::cmul(ad::sum_cols(ad::square(centered)), -0.5 / variances_[j]), c);
    cl = j == 0 ? col : ad::concat_cols(cl, col);
  }
  if (k == 1) return cl;
  Value m = ad::row_max_const(cl);
  Value s = ad::vlog(ad::sum_cols(ad::vexp(ad::sub(cl, m))));
  return ad::add(m, s);
}

Value TargetDensity::grad_log_graph(const Value& x) const {
  return ad::inner_grad_scope([&] {
    Value xg = x->rg ? x : ad::leaf(x->val);
    Value lp = log_unnorm_graph(xg);
    counter_->fetch_add(x->val.rows());  // gradient call unit
    return ad::grad(ad::sum_all(lp), {xg})[0];
  });
}

Mat TargetDensity::sample_exact(int n, Rng& rng) const {
  Mat out(n, dim());
  for (int i = 0; i < n; ++i) {
    int j = rng.categorical(weights_);
    double sd = std::sqrt(variances_[j]);
    for (int c = 0; c < dim(); ++c) out(i, c) = means_(j, c) + sd * rng.normal();
  }
  return out;
}

Vec TargetDensity::mixture_mean() const { return means_.transpose() * weights_; }

Vec TargetDensity::mixture_variance() const {
  Vec mean = mixture_mean();
  Vec v = Vec::Zero(dim());
  for (int j = 0; j < components(); ++j) {
    Vec diff = means_.row(j).transpose() - mean;
    v += weights_[j] * (diff.array().square() + variances_[j]).matrix();
  }
  return v;
}

void TargetDensity::export_params_csv(const std::string& path) const {
  std::ofstream f(path);
  SLAB_REQUIRE(f.good(), "cannot open " + path);
  f << "weight,variance";
  for (int c = 0; c < dim(); ++c) f << ",mean" << c;
  f << "\n";
  for (int j = 0; j < components(); ++j) {
    f << weights_[j] << "," << variances_[j];
    for (int c = 0; c < dim(); ++c) f << "," << means_(j, c);
    f << "\n";
  }
}

TargetPtr make_gauss(const Vec& mean, double variance) {
  Mat m(1, mean.size());
  m.row(0) = mean.transpose();
  return std::make_shared<TargetDensity>(m, Vec::Constant(1, variance), Vec::Constant(1, 1.0));
}

TargetPtr make_gmm(const std::vector<Vec>& means, const std::vector<double>& variances,
                   const Vec& weights) {
  SLAB_REQUIRE(!means.empty(), "make_gmm: no components");
  SLAB_REQUIRE(means.size() == variances.size() &&
                   static_cast<int>(means.size()) == weights.size(),
               "make_gmm: component count mismatch");
  const int d = static_cast<int>(means[0].size());
  Mat m(means.size(), d);
  Vec v(means.size());
  for (std::size_t j = 0; j < means.size(); ++j) {
    SLAB_REQUIRE(means[j].size() == d, "make_gmm: mean dim mismatch");
    SLAB_REQUIRE(variances[j] > 0, "make_gmm: non-positive variance");
    m.row(j) = means[j].transpose();
    v[j] = variances[j];
  }
  return std::make_shared<TargetDensity>(m, v, weights);
}

TargetPtr make_gmm3() {
  const double r = 5.0;
  std::vector<Vec> means;
  for (int j = 0; j < 3; ++j) {
    double a = M_PI / 2 + 2.0 * M_PI * j / 3.0;
    Vec mu(2);
    mu << r * std::cos(a), r * std::sin(a);
    means.push_back(mu);
  }
  return make_gmm(means, {1.0, 1.0, 1.0}, Vec::Constant(3, 1.0 / 3.0));
}

TargetPtr make_gmm40(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> means;
  std::vector<double> vars;
  for (int j = 0; j < 40; ++j) {
    Vec mu(2);
    mu << (rng.uniform() * 80.0 - 40.0), (rng.uniform() * 80.0 - 40.0);
    means.push_back(mu);
    vars.push_back(1.0);
  }
  return make_gmm(means, vars, Vec::Constant(40, 1.0 / 40.0));
}

std::pair<double, Vec> log_density_and_grad(const TargetDensity& t, const Vec& x) {
  Mat xm(1, x.size());
  xm.row(0) = x.transpose();
  auto [lp, g] = t.log_and_grad(xm);
  return {lp[0], Vec(g.row(0).transpose())};
}

}  // namespace slab
