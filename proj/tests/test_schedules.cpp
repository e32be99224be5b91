#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slab/schedules.hpp"

using namespace slab;

TEST_CASE("lambda closed form: constant beta = 1") {
  auto s = vp_schedule(1.0, 1.0, 1.0, 1.0);
  CHECK(s.lambda(0.0) == 0.0);
  CHECK(s.lambda(1.0) == doctest::Approx(1.0 - std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("lambda matches trapezoid quadrature of the linear schedule") {
  auto s = vp_schedule(2.0, 0.03, 3.0, 1.5);
  for (double t : {0.3, 0.9, 1.7, 2.0}) {
    const int n = 200000;
    double acc = 0;
    double dt = t / n;
    for (int i = 0; i < n; ++i) acc += 0.5 * (s.beta(i * dt) + s.beta((i + 1) * dt)) * dt;
    double lam_q = 1.0 - std::exp(-2.0 * acc);
    CHECK(std::abs(s.lambda(t) - lam_q) < 1e-8);
  }
}

TEST_CASE("lambda is monotone on a 1000-point grid and sigma matches v sqrt(beta)") {
  auto s = vp_schedule(1.0, 0.03, 3.0, 2.0);
  double prev = -1;
  for (int i = 0; i <= 1000; ++i) {
    double t = i / 1000.0;
    double l = s.lambda(t);
    CHECK(l >= prev);
    prev = l;
    CHECK(s.sigma(t) == doctest::Approx(2.0 * std::sqrt(s.beta(1.0 - t))));
  }
  CHECK_THROWS_AS(vp_schedule(1.0, -0.1, 1.0, 1.0), InvalidArgument);
}

TEST_CASE("geometric path endpoints are exact") {
  auto target = make_gmm3();
  auto prior = GaussianSpec::isotropic(2, 9.0);
  auto path = geometric_path(prior, target, 1.0);
  Rng rng(4);
  Mat x = 3.0 * rng.normal_mat(16, 2);
  CHECK((path->log_pi(x, 0.0) - prior.log_density(x)).norm() == 0.0);
  CHECK((path->log_pi(x, 1.0) - target->log_unnorm(x)).norm() == 0.0);
}

TEST_CASE("mode path endpoints collapse to prior / target exactly") {
  auto target = make_gmm3();
  auto prior = GaussianSpec::isotropic(2, 2.0);
  auto path = mode_path(prior, target, 1.0);
  Rng rng(4);
  Mat x = 3.0 * rng.normal_mat(16, 2);
  CHECK((path->log_pi(x, 0.0) - prior.log_density(x)).norm() < 1e-12);
  CHECK((path->log_pi(x, 1.0) - target->log_unnorm(x)).norm() < 1e-12);
  CHECK_THROWS_AS(mode_path(GaussianSpec::isotropic(3, 1.0), target, 1.0), InvalidArgument);
}

TEST_CASE("path derivatives match finite differences") {
  auto target = make_gmm3();
  auto prior = GaussianSpec::isotropic(2, 4.0);
  Rng rng(8);
  Mat x = 3.0 * rng.normal_mat(12, 2);
  for (auto kind : {AnnealKind::kGeometric, AnnealKind::kMode}) {
    AnnealingPath path(kind, prior, target, 1.0);
    for (double t : {0.25, 0.5, 0.8}) {
      // d/dt
      double h = 1e-6;
      Vec fd_t = (path.log_pi(x, t + h) - path.log_pi(x, t - h)) / (2 * h);
      Vec dt = path.dt_log_pi(x, t);
      CHECK((dt - fd_t).norm() / std::max(1e-8, fd_t.norm()) < 1e-5);
      // d/dx
      Mat g = path.grad_log_pi(x, t);
      for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < 2; ++j) {
          Mat xp = x, xm = x;
          xp(i, j) += h;
          xm(i, j) -= h;
          double fd = (path.log_pi(xp.row(i), t)[0] - path.log_pi(xm.row(i), t)[0]) / (2 * h);
          CHECK(g(i, j) == doctest::Approx(fd).epsilon(2e-5));
        }
    }
  }
}

TEST_CASE("geometric path with Gaussian target has closed-form Gaussian scores") {
  // pi_t ~ N(0, s_t^2) with 1/s_t^2 = beta_t / s1^2 + (1-beta_t) / s0^2
  auto target = make_gauss(Vec::Zero(2), 4.0);
  auto prior = GaussianSpec::isotropic(2, 9.0);
  auto path = geometric_path(prior, target, 1.0);
  Rng rng(2);
  Mat x = 2.0 * rng.normal_mat(8, 2);
  for (double t : {0.2, 0.5, 0.9}) {
    double prec = t / 4.0 + (1 - t) / 9.0;
    Mat expected = -prec * x;
    CHECK((path->grad_log_pi(x, t) - expected).norm() / expected.norm() < 1e-10);
  }
}

TEST_CASE("graph versions agree with fast paths") {
  auto target = make_gmm3();
  auto prior = GaussianSpec::isotropic(2, 2.0);
  Rng rng(6);
  Mat x = 2.0 * rng.normal_mat(5, 2);
  for (auto kind : {AnnealKind::kGeometric, AnnealKind::kMode}) {
    AnnealingPath path(kind, prior, target, 1.0);
    for (double t : {0.0, 0.4, 1.0}) {
      ad::Value lp = path.log_pi_graph(ad::constant(x), t);
      CHECK((lp->val.col(0) - path.log_pi(x, t)).cwiseAbs().maxCoeff() < 1e-12);
      ad::Value g = path.grad_log_pi_graph(ad::constant(x), t);
      CHECK((g->val - path.grad_log_pi(x, t)).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}
