#include <cmath>
#include <vector>

#include "doctest.h"
#include "lnn/lorentz_ops.hpp"
#include "lnn/optim.hpp"
#include "lnn/tape.hpp"

using namespace lnn;

TEST_CASE("adamw leaves parameters alone with zero grad and zero decay") {
  ParamStore<double> ps;
  auto id = ps.add("w", Tensor<double>::from({3}, {1.0, -2.0, 0.5}));
  OptimConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt(ps, {id}, cfg);
  for (int i = 0; i < 5; ++i) opt.step(ps, {Tensor<double>(Shape{3}, 0.0)});
  CHECK(ps.value(id)[0] == 1.0);
  CHECK(ps.value(id)[1] == -2.0);
  CHECK(ps.value(id)[2] == 0.5);
}

TEST_CASE("adamw first step has magnitude about lr") {
  ParamStore<double> ps;
  auto id = ps.add("w", Tensor<double>::from({2}, {0.0, 0.0}));
  OptimConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  AdamW<double> opt(ps, {id}, cfg);
  Tensor<double> g = Tensor<double>::from({2}, {0.37, -5.2});
  opt.step(ps, {g});
  // bias-corrected first step: lr * g / (|g| + eps') ~ lr * sign(g)
  CHECK(ps.value(id)[0] == doctest::Approx(-1e-3).epsilon(1e-4));
  CHECK(ps.value(id)[1] == doctest::Approx(1e-3).epsilon(1e-4));
}

TEST_CASE("adamw decoupled decay shrinks multiplicatively") {
  ParamStore<double> ps;
  auto id = ps.add("w", Tensor<double>::from({1}, {2.0}));
  OptimConfig cfg;
  cfg.lr = 2e-4;
  cfg.weight_decay = 0.1;
  AdamW<double> opt(ps, {id}, cfg);
  double expect = 2.0;
  for (int i = 0; i < 10; ++i) {
    opt.step(ps, {Tensor<double>(Shape{1}, 0.0)});
    expect *= 1.0 - 2e-4 * 0.1;
    CHECK(ps.value(id)[0] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("adamw is deterministic and validates shapes") {
  OptimConfig cfg;
  auto run = [&]() {
    ParamStore<double> ps;
    auto id = ps.add("w", Tensor<double>::from({2}, {1.0, 2.0}));
    AdamW<double> opt(ps, {id}, cfg);
    for (int i = 0; i < 25; ++i)
      opt.step(ps, {Tensor<double>::from({2}, {0.1 * i, -0.2})});
    return ps.value(id);
  };
  auto a = run(), b = run();
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);

  ParamStore<double> ps;
  auto id = ps.add("w", Tensor<double>(Shape{2}, 1.0));
  AdamW<double> opt(ps, {id}, cfg);
  CHECK_THROWS_AS(opt.step(ps, {Tensor<double>(Shape{3}, 0.0)}), state_error);
}

TEST_CASE("log scalars clamp exactly at their bounds") {
  LogScalar tau = LogScalar::init("tau", 0.07, 0.01, 100.0);
  OptimConfig cfg;
  cfg.lr = 0.5;  // huge steps to slam into the bounds
  ScalarAdam opt(cfg);
  for (int i = 0; i < 100; ++i) opt.step(tau, 1.0);  // positive grad drives value down
  CHECK(tau.value == 0.01);

  LogScalar c = LogScalar::init("c", 2.0, 0.1, 10.0);
  ScalarAdam opt2(cfg);
  for (int i = 0; i < 100; ++i) opt2.step(c, -1.0);
  CHECK(c.value == 10.0);

  LogScalar idle = LogScalar::init("idle", 0.3, 0.1, 10.0);
  ScalarAdam opt3(cfg);
  opt3.step(idle, 0.0);
  CHECK(idle.value == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("riemannian adam leaves the point alone on zero gradient") {
  Curvature c(1.0);
  Rng rng(3);
  auto x = random_point<double>(rng, 3, c);
  const auto keep = x;
  OptimConfig cfg;
  RiemannianAdam<double> opt(4, cfg);
  opt.step(x, std::vector<double>(4, 0.0), c);
  CHECK(x.time == doctest::Approx(keep.time).epsilon(1e-14));
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(x.spatial[j] == doctest::Approx(keep.spatial[j]).epsilon(1e-14));
}

TEST_CASE("riemannian adam keeps residency over 1000 random steps") {
  Curvature c(1.3);
  Rng rng(5);
  auto x = random_point<double>(rng, 4, c);
  OptimConfig cfg;
  cfg.lr = 0.01;
  RiemannianAdam<double> opt(5, cfg);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> g(5);
    for (auto& v : g) v = rng.normal(0.0, 1.0);
    opt.step(x, g, c);
    CHECK(residency_defect(x, c) < 1e-6);
  }
}

TEST_CASE("riemannian adam minimizes squared distance to a target") {
  Curvature c(1.0);
  Rng rng(11);
  auto target = random_point<double>(rng, 3, c, 0.9);
  auto x = random_point<double>(rng, 3, c, 0.9);
  OptimConfig cfg;
  cfg.lr = 0.05;
  RiemannianAdam<double> opt(4, cfg);
  for (int i = 0; i < 500; ++i) {
    // ambient gradient of d(x, target)^2 via the tape
    Tape<double> tp;
    auto xa = tp.leaf(Tensor<double>(Shape{1, 4}, x.ambient()), true);
    auto ta = tp.constant(Tensor<double>(Shape{1, 4}, target.ambient()));
    auto cv = tp.constant_scalar(1.0);
    auto xt = reshape(slice_last(xa, 0, 1), Shape{1});
    auto xs = slice_last(xa, 1, 3);
    auto tt = reshape(slice_last(ta, 0, 1), Shape{1});
    auto ts = slice_last(ta, 1, 3);
    LorentzBatch<double> bx{xt, xs, cv};
    LorentzBatch<double> bt{tt, ts, cv};
    auto loss = sum_all(square(distance_rows(bx, bt)));
    tp.backward(loss);
    Tensor<double> g = tp.grad(xa);
    opt.step(x, g.vec(), c);
  }
  CHECK(distance(x, target, c) < 1e-3);
}

TEST_CASE("riemannian adam rejects off-manifold state") {
  Curvature c(1.0);
  LorentzPoint<double> bad{2.0, {0.0, 0.0}};  // time inconsistent with spatial
  OptimConfig cfg;
  RiemannianAdam<double> opt(3, cfg);
  CHECK_THROWS_AS(opt.step(bad, std::vector<double>(3, 0.1), c), state_error);
}
