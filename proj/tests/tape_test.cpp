#include <cmath>
#include <vector>

#include "doctest.h"
#include "lnn/rng.hpp"
#include "lnn/tape.hpp"

using namespace lnn;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape, double sigma = 1.0) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, sigma);
  return t;
}

}  // namespace

TEST_CASE("matmul against identity") {
  Tape<double> tp;
  auto I = tp.constant(Tensor<double>::from({2, 2}, {1, 0, 0, 1}));
  auto A = tp.constant(Tensor<double>::from({2, 2}, {3, -1, 2, 5}));
  auto P = matmul(I, A);
  for (std::size_t i = 0; i < 4; ++i) CHECK(P.val()[i] == A.val()[i]);
}

TEST_CASE("matmul transpose flags agree with explicit loops") {
  Rng rng(11);
  Tensor<double> a = random_tensor(rng, {3, 4});
  Tensor<double> b = random_tensor(rng, {3, 4});
  Tape<double> tp;
  auto G = matmul(tp.constant(a), tp.constant(b), false, true);  // [3,3]
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t l = 0; l < 4; ++l) s += a.at(i, l) * b.at(j, l);
      CHECK(G.val().at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  auto H = matmul(tp.constant(a), tp.constant(b), true, false);  // [4,4]
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t l = 0; l < 3; ++l) s += a.at(l, i) * b.at(l, j);
      CHECK(H.val().at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("softmax of a constant row is uniform") {
  Tape<double> tp;
  auto x = tp.constant(Tensor<double>(Shape{2, 5}, 3.25));
  auto y = softmax_last(x);
  for (std::size_t i = 0; i < 10; ++i) CHECK(y.val()[i] == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("inverse trig edge values") {
  Tape<double> tp;
  auto z = asinh_v(tp.constant(Tensor<double>::scalar(0.0)));
  CHECK(z.val()[0] == 0.0);
  auto a = acos_v(tp.constant(Tensor<double>::scalar(1.0)));
  CHECK(a.val()[0] == 0.0);
}

TEST_CASE("sum gradient is all-ones") {
  Tape<double> tp;
  auto x = tp.leaf(Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6}), true);
  tp.backward(sum_all(x));
  auto g = tp.grad(x);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("hand-differentiated Lorentzian quadratic") {
  // loss = -x0^2 + x1^2 + x2^2, gradient (-2 x0, 2 x1, 2 x2)
  Tape<double> tp;
  auto x = tp.leaf(Tensor<double>::from({3}, {1.5, 0.5, -1.0}), true);
  auto t = slice_last(x, 0, 1);
  auto s = slice_last(x, 1, 2);
  auto loss = sub(sum_all(square(s)), sum_all(square(t)));
  tp.backward(loss);
  auto g = tp.grad(x);
  CHECK(g[0] == doctest::Approx(-3.0));
  CHECK(g[1] == doctest::Approx(1.0));
  CHECK(g[2] == doctest::Approx(-2.0));
}

TEST_CASE("untouched parameter receives zero gradient") {
  Tape<double> tp;
  auto x = tp.leaf(Tensor<double>::from({2}, {1, 2}), true);
  auto unused = tp.leaf(Tensor<double>::from({2}, {5, 6}), true);
  tp.backward(sum_all(x));
  auto g = tp.grad(unused);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
}

TEST_CASE("non-scalar backward is a usage error") {
  Tape<double> tp;
  auto x = tp.leaf(Tensor<double>::from({2}, {1, 2}), true);
  CHECK_THROWS_AS(tp.backward(x), usage_error);
}

TEST_CASE("shape mismatch raises dimension error") {
  Tape<double> tp;
  auto a = tp.constant(Tensor<double>(Shape{2, 3}, 1.0));
  auto b = tp.constant(Tensor<double>(Shape{3, 2}, 1.0));
  CHECK_THROWS_AS(add(a, b), dim_error);
  CHECK_THROWS_AS(matmul(a, a), dim_error);
}

TEST_CASE("sqrt of a negative trips the numeric check") {
  Tape<double> tp;
  auto x = tp.constant(Tensor<double>::scalar(-1.0));
  CHECK_THROWS_AS(sqrt_v(x), numeric_error);
}

TEST_CASE("suffix broadcast of a bias row") {
  Tape<double> tp;
  auto x = tp.leaf(Tensor<double>(Shape{3, 2}, 1.0), true);
  auto b = tp.leaf(Tensor<double>::from({2}, {10, 20}), true);
  auto y = add(x, b);
  CHECK(y.val().at(2, 1) == 21.0);
  tp.backward(sum_all(y));
  auto gb = tp.grad(b);
  CHECK(gb[0] == 3.0);  // summed over the broadcast rows
  CHECK(gb[1] == 3.0);
}

TEST_CASE("clamp gradient vanishes outside the open interior") {
  Tape<double> tp;
  auto x = tp.leaf(Tensor<double>::from({4}, {-2.0, 0.5, 1.0, 3.0}), true);
  auto y = clamp(x, 0.0, 1.0);
  tp.backward(sum_all(y));
  auto g = tp.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);  // boundary counts as outside
  CHECK(g[3] == 0.0);
}

TEST_CASE("grad_check is near-exact for a linear function") {
  Rng rng(3);
  std::vector<Tensor<double>> inputs{random_tensor(rng, {4})};
  double err = grad_check<double>(
      inputs,
      [](Tape<double>& tp, std::vector<Value<double>>& xs) {
        return sum_all(scale(xs[0], 3.7));
      });
  CHECK(err < 1e-10);
}

TEST_CASE("grad_check across the primitive set") {
  Rng rng(17);
  for (int rep = 0; rep < 25; ++rep) {
    std::vector<Tensor<double>> inputs{random_tensor(rng, {2, 3}, 0.4),
                                       random_tensor(rng, {2, 3}, 0.4)};
    double err = grad_check<double>(
        inputs,
        [](Tape<double>& tp, std::vector<Value<double>>& xs) {
          auto a = xs[0];
          auto b = xs[1];
          auto u = tanh_v(add(a, b));
          auto v = gelu(sub(a, b));
          auto w = softplus(mul(a, b));
          auto sm = softmax_last(add(u, v));
          auto mixed = add(mul(sm, w), asinh_v(v));
          auto q = div(shift(square(mixed), 1.0), shift(exp_v(neg(abs_v(u))), 2.0));
          return mean_all(log_v(shift(q, 1.0)));
        });
    CHECK(err < 1e-6);
  }
}

TEST_CASE("grad_check of matmul, slicing and row reductions") {
  Rng rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<Tensor<double>> inputs{random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2}),
                                       random_tensor(rng, {3})};
    double err = grad_check<double>(
        inputs,
        [](Tape<double>& tp, std::vector<Value<double>>& xs) {
          auto prod = matmul(xs[0], xs[1]);              // [3,2]
          auto scaled = mul_rows(prod, xs[2]);           // rows scaled
          auto left = slice_last(scaled, 0, 1);
          auto right = slice_last(scaled, 1, 1);
          auto cat = concat_last(std::vector<Value<double>>{right, left});
          auto m = row_mean(square(cat));
          return sum_all(sub_rows(cat, neg(m)));
        });
    CHECK(err < 1e-6);
  }
}

TEST_CASE("grad_check with transposed matmul and division") {
  Rng rng(29);
  std::vector<Tensor<double>> inputs{random_tensor(rng, {3, 4}), random_tensor(rng, {5, 4})};
  double err = grad_check<double>(
      inputs,
      [](Tape<double>& tp, std::vector<Value<double>>& xs) {
        auto g = matmul(xs[0], xs[1], false, true);  // [3,5]
        auto denom = shift(row_sum(square(g)), 1.0);
        return sum_all(div_rows(g, denom));
      });
  CHECK(err < 1e-6);
}

TEST_CASE("backward is bitwise deterministic") {
  Rng rng(41);
  Tensor<double> a = random_tensor(rng, {4, 4});
  Tensor<double> b = random_tensor(rng, {4, 4});
  auto run = [&]() {
    Tape<double> tp;
    auto x = tp.leaf(a, true);
    auto y = tp.leaf(b, true);
    auto loss = mean_all(square(softmax_last(matmul(x, y))));
    tp.backward(loss);
    return std::make_pair(tp.grad(x), tp.grad(y));
  };
  auto [g1x, g1y] = run();
  auto [g2x, g2y] = run();
  for (std::size_t i = 0; i < g1x.size(); ++i) {
    CHECK(g1x[i] == g2x[i]);
    CHECK(g1y[i] == g2y[i]);
  }
}

TEST_CASE("gradient is linear in the loss") {
  Rng rng(53);
  Tensor<double> xv = random_tensor(rng, {5});
  const double a = 1.7, b = -0.6;
  auto grads = [&](double ca, double cb) {
    Tape<double> tp;
    auto x = tp.leaf(xv, true);
    auto f = sum_all(square(x));
    auto g = sum_all(exp_v(scale(x, 0.3)));
    auto loss = add(scale(f, ca), scale(g, cb));
    tp.backward(loss);
    return tp.grad(x);
  };
  auto gf = grads(1.0, 0.0);
  auto gg = grads(0.0, 1.0);
  auto gmix = grads(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(gmix[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}

TEST_CASE("detach blocks gradient flow") {
  Tape<double> tp;
  auto x = tp.leaf(Tensor<double>::from({2}, {1, 2}), true);
  auto y = mul(detach(square(x)), x);
  tp.backward(sum_all(y));
  auto g = tp.grad(x);
  CHECK(g[0] == 1.0);  // only the direct factor, not through the square
  CHECK(g[1] == 4.0);
}

TEST_CASE("sign and row_max route gradients as documented") {
  Tape<double> tp;
  auto x = tp.leaf(Tensor<double>::from({3}, {-2.0, 0.0, 5.0}), true);
  auto s = sign_v(x);
  CHECK(s.val()[0] == -1.0);
  CHECK(s.val()[1] == 0.0);
  CHECK(s.val()[2] == 1.0);
  tp.backward(sum_all(s));
  for (std::size_t i = 0; i < 3; ++i) CHECK(tp.grad(x)[i] == 0.0);

  Tape<double> tp2;
  auto m = tp2.leaf(Tensor<double>::from({2, 3}, {1, 9, 2, 7, 3, 7}), true);
  auto mx = row_max(m);
  CHECK(mx.val()[0] == 9.0);
  CHECK(mx.val()[1] == 7.0);
  tp2.backward(sum_all(mx));
  auto g = tp2.grad(m);
  CHECK(g[1] == 1.0);
  CHECK(g[3] == 1.0);  // first attaining entry wins
  CHECK(g[5] == 0.0);
}

TEST_CASE("concat_rows stacks and routes gradients") {
  Tape<double> tp;
  auto a = tp.leaf(Tensor<double>::from({1, 2}, {1, 2}), true);
  auto b = tp.leaf(Tensor<double>::from({2, 2}, {3, 4, 5, 6}), true);
  auto s = concat_rows(std::vector<Value<double>>{a, b});
  CHECK(s.val().shape() == Shape{3, 2});
  CHECK(s.val().at(2, 1) == 6.0);
  tp.backward(sum_all(mul_rows(s, tp.constant(Tensor<double>::from({3}, {1, 10, 100})))));
  CHECK(tp.grad(a)[0] == 1.0);
  CHECK(tp.grad(b)[0] == 10.0);
  CHECK(tp.grad(b)[2] == 100.0);
}
