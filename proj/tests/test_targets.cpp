#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slab/targets.hpp"

using namespace slab;

namespace {

// central-difference oracle for grad log p~
Mat fd_grad_log(const TargetDensity& t, Mat x, double h = 1e-5) {
  Mat g(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      double keep = x(i, j);
      x(i, j) = keep + h;
      double up = t.log_unnorm(x.row(i))[0];
      x(i, j) = keep - h;
      double dn = t.log_unnorm(x.row(i))[0];
      x(i, j) = keep;
      g(i, j) = (up - dn) / (2 * h);
    }
  return g;
}

}  // namespace

TEST_CASE("standard normal log density at origin") {
  auto t = make_gauss(Vec::Zero(2), 1.0);
  Mat x = Mat::Zero(1, 2);
  CHECK(t->log_unnorm(x)[0] == doctest::Approx(-kLog2Pi).epsilon(1e-12));
  Mat x2(1, 2);
  x2 << 3.0, 4.0;
  CHECK(t->log_unnorm(x2)[0] == doctest::Approx(-kLog2Pi - 12.5).epsilon(1e-12));
}

TEST_CASE("normalized mixtures have exact_log_z = 0") {
  auto t = make_gmm3();
  CHECK(t->exact_log_z().value() == 0.0);
}

TEST_CASE("gradient matches central differences at 100 random points") {
  auto t3 = make_gmm3();
  auto t40 = make_gmm40(1);
  Rng rng(99);
  for (auto& t : {t3, t40}) {
    Mat x = 8.0 * rng.normal_mat(100, 2);
    Mat g = t->grad_log(x);
    Mat fd = fd_grad_log(*t, x);
    for (int i = 0; i < x.rows(); ++i) {
      double denom = std::max(1e-8, fd.row(i).norm());
      CHECK((g.row(i) - fd.row(i)).norm() / denom < 1e-5);
    }
  }
}

TEST_CASE("eval counter is exact") {
  auto t = make_gmm3();
  t->reset_counter();
  Mat x = Mat::Zero(7, 2);
  t->log_unnorm(x);
  CHECK(t->eval_calls() == 7);
  t->grad_log(x);
  CHECK(t->eval_calls() == 14);
  auto [lp, g] = log_density_and_grad(*t, Vec::Zero(2));
  (void)lp;
  (void)g;
  CHECK(t->eval_calls() == 16);
}

TEST_CASE("gmm40 is deterministic per seed with equal weights") {
  auto a = make_gmm40(123), b = make_gmm40(123), c = make_gmm40(124);
  CHECK(a->means() == b->means());
  CHECK(a->means() != c->means());
  CHECK((a->weights().array() == 1.0 / 40).all());
  CHECK((a->means().array().abs() <= 40.0).all());
}

TEST_CASE("exact sampler moments match analytic mixture moments (3 sigma, 1e5)") {
  auto t = make_gmm40(7);
  Rng rng(5);
  const int n = 100000;
  Mat s = t->sample_exact(n, rng);
  Vec mean = s.colwise().mean();
  Vec var = ((s.rowwise() - mean.transpose()).array().square().colwise().sum() / (n - 1))
                .matrix()
                .transpose();
  Vec m_true = t->mixture_mean();
  Vec v_true = t->mixture_variance();
  for (int c = 0; c < 2; ++c) {
    double se_mean = std::sqrt(v_true[c] / n);
    CHECK(std::abs(mean[c] - m_true[c]) < 3 * se_mean);
    double se_var = v_true[c] * std::sqrt(2.0 / (n - 1)) * 2.0;  // generous for non-Gaussian
    CHECK(std::abs(var[c] - v_true[c]) < 3 * se_var);
  }
}

TEST_CASE("graph log density agrees with fast path and counts calls") {
  auto t = make_gmm3();
  Rng rng(3);
  Mat x = 4.0 * rng.normal_mat(9, 2);
  Vec fast = t->log_unnorm(x);
  t->reset_counter();
  ad::Value node = t->log_unnorm_graph(ad::constant(x));
  CHECK(t->eval_calls() == 9);
  CHECK((node->val.col(0) - fast).norm() < 1e-12);
  t->reset_counter();
  ad::Value g = t->grad_log_graph(ad::constant(x));
  CHECK(t->eval_calls() == 18);  // density + gradient units
  CHECK((g->val - t->grad_log(x)).norm() / t->grad_log(x).norm() < 1e-12);
}

TEST_CASE("make_gmm validates inputs") {
  std::vector<Vec> means = {Vec::Zero(2), Vec::Ones(2)};
  CHECK_THROWS_AS(make_gmm(means, {1.0, -1.0}, Vec::Constant(2, 0.5)), InvalidArgument);
  CHECK_THROWS_AS(make_gmm(means, {1.0, 1.0}, Vec::Constant(2, 0.6)), InvalidArgument);
  std::vector<Vec> bad_dims = {Vec::Zero(2), Vec::Ones(3)};
  CHECK_THROWS_AS(make_gmm(bad_dims, {1.0, 1.0}, Vec::Constant(2, 0.5)), InvalidArgument);
  Mat bad(1, 2);
  bad << std::nan(""), 0.0;
  auto t = make_gmm3();
  CHECK_THROWS_AS(t->log_unnorm(bad), NumericalError);
}
