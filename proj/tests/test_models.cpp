#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slab/models.hpp"

using namespace slab;

namespace {

double loss_at(DriftModel& m, const Mat& x, double t) {
  ad::Value out = m.eval(ad::constant(x), t);
  return ad::cmul(ad::sum_all(ad::square(out)), 0.5)->val(0, 0);
}

// finite-difference check of d loss / d params on `coords` random coordinates
void check_drift_fd(DriftModel& m, const Mat& x, double t, int coords, double tol) {
  ParamGroup pg{&m.params()};
  pg.zero_grad();
  ad::Value out = m.eval(ad::constant(x), t);
  ad::backward(ad::cmul(ad::sum_all(ad::square(out)), 0.5));
  Vec g = pg.flat_grad();
  Vec p = pg.flat();
  Rng rng(17);
  const double h = 1e-5;
  double ref = std::max(1.0, g.norm());
  for (int c = 0; c < coords; ++c) {
    int i = static_cast<int>(rng.uniform() * p.size());
    Vec pp = p, pm = p;
    pp[i] += h;
    pm[i] -= h;
    pg.set_flat(pp);
    double up = loss_at(m, x, t);
    pg.set_flat(pm);
    double dn = loss_at(m, x, t);
    pg.set_flat(p);
    double fd = (up - dn) / (2 * h);
    CHECK(std::abs(g[i] - fd) / ref < tol);
  }
}

}  // namespace

TEST_CASE("plain drift with zero params outputs zero") {
  DriftConfig cfg;
  cfg.kind = DriftKind::kPlain;
  cfg.hidden = {8, 8};
  auto m = make_drift(cfg, nullptr, 1);
  m->params().set_flat(Vec::Zero(m->params().size()));
  Mat x = Mat::Random(5, 2);
  CHECK(m->eval_fast(x, 0.3).norm() == 0.0);
}

TEST_CASE("langevin-precond drift at init equals the target score") {
  auto target = make_gmm3();
  DriftConfig cfg;
  cfg.kind = DriftKind::kLangevinPrecond;
  cfg.hidden = {16, 16};
  auto m = make_drift(cfg, target, 2);
  Rng rng(3);
  Mat x = 3.0 * rng.normal_mat(6, 2);
  Mat out = m->eval_fast(x, 0.4);
  Mat score = target->grad_log(x);
  CHECK((out - score).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("potential drift realizes analytic gradients") {
  // phi(x) = ||x||^2 / 2 built from ops -> drift = x
  AnalyticDrift quad(2, [](const ad::Value& x, double) {
    ad::Value xg = x->rg ? x : ad::leaf(x->val);
    ad::Value phi = ad::cmul(ad::sum_cols(ad::square(xg)), 0.5);
    return ad::grad(ad::sum_all(phi), {xg})[0];
  });
  Mat x = Mat::Random(4, 2);
  CHECK((quad.eval_fast(x, 0.0) - x).norm() < 1e-12);
}

TEST_CASE("parameter gradients match finite differences for every kind") {
  auto target = make_gmm3();
  Rng rng(9);
  Mat x = 2.0 * rng.normal_mat(4, 2);
  for (auto kind : {DriftKind::kPlain, DriftKind::kLangevinPrecond, DriftKind::kEnergyCond,
                    DriftKind::kPotential}) {
    DriftConfig cfg;
    cfg.kind = kind;
    cfg.hidden = {8, 8};
    cfg.time_features = 8;
    auto m = make_drift(cfg, target, 5);
    // move off the zero init so gradients are informative
    Vec p = m->params().flat();
    Rng prng(11);
    for (int i = 0; i < p.size(); ++i) p[i] += 0.05 * prng.normal();
    m->params().set_flat(p);
    check_drift_fd(*m, x, 0.37, 32, 1e-4);
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  AdamState st;
  Vec p = Vec::Random(10);
  Vec out = adam_step(p, Vec::Zero(10), st, 0.1);
  CHECK((out - p).norm() == 0.0);
}

TEST_CASE("adam: first step moves by ~lr per coordinate under constant gradient") {
  AdamState st;
  Vec p = Vec::Zero(4);
  Vec g = Vec::Constant(4, 3.7);
  Vec out = adam_step(p, g, st, 5e-4);
  // m-hat = g, v-hat = g^2 -> step = lr * g / (|g| + eps) ~ lr * sign(g)
  for (int i = 0; i < 4; ++i) CHECK(std::abs(out[i] + 5e-4) < 1e-9);
  CHECK_THROWS_AS(adam_step(p, Vec::Zero(3), st, 1e-3), InvalidArgument);
}

TEST_CASE("training is deterministic per seed") {
  auto make_and_train = [&]() {
    DriftConfig cfg;
    cfg.kind = DriftKind::kPlain;
    cfg.hidden = {8};
    cfg.time_features = 4;
    auto m = make_drift(cfg, nullptr, 42);
    ParamGroup pg{&m->params()};
    Adam adam(1e-3);
    Rng rng(7);
    for (int it = 0; it < 20; ++it) {
      Mat x = rng.normal_mat(8, 2);
      ad::Value out = m->eval(ad::constant(x), 0.5);
      ad::Value loss = ad::mean_all(ad::square(ad::sub(out, ad::constant((2.0 * x).eval()))));
      pg.zero_grad();
      ad::backward(loss);
      adam.step(pg);
    }
    return m->params().flat();
  };
  Vec a = make_and_train();
  Vec b = make_and_train();
  CHECK((a - b).norm() == 0.0);
}

TEST_CASE("checkpoint round-trip preserves parameters and metadata") {
  DriftConfig cfg;
  cfg.kind = DriftKind::kPlain;
  cfg.hidden = {8, 8};
  auto m = make_drift(cfg, nullptr, 3);
  Vec p = Vec::LinSpaced(m->params().size(), -1.0, 1.0);
  m->params().set_flat(p);
  std::string path = "/tmp/slab_test_ckpt.bin";
  save_checkpoint(path, m->params(), {{"kind", "plain"}, {"hidden", "8,8"}});
  auto m2 = make_drift(cfg, nullptr, 99);
  auto meta = load_checkpoint(path, m2->params());
  CHECK(meta.at("kind") == "plain");
  CHECK((m2->params().flat() - p).norm() == 0.0);
  CHECK(peek_checkpoint_meta(path).at("hidden") == "8,8");
}

TEST_CASE("mlp jvp matches finite differences in the input direction") {
  ParamStore ps;
  Rng rng(21);
  Mlp net(MlpConfig{3, 2, {16}, false, "n"}, ps, rng);
  Mat x = rng.normal_mat(5, 3);
  Mat v = rng.normal_mat(5, 3);
  auto [y, ydot] = net.forward_jvp(ad::constant(x), ad::constant(v));
  double h = 1e-6;
  Mat yp = net.forward(ad::constant((x + h * v).eval()))->val;
  Mat ym = net.forward(ad::constant((x - h * v).eval()))->val;
  Mat fd = (yp - ym) / (2 * h);
  CHECK((ydot->val - fd).norm() / fd.norm() < 1e-6);
  CHECK((y->val - net.forward(ad::constant(x))->val).norm() == 0.0);
}
