#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mvood/random.hpp"
#include "mvood/tensor.hpp"

#include <cmath>

using namespace mvood;

namespace {

Tensord random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vec<double> v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return Tensord(std::move(shape), std::move(v));
}

// Direct loop cross-correlation with zero padding.
Vec<double> naive_conv(const Tensord& x, const Tensord& k, const Tensord& b, int s, int p) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index oh = (h + 2 * p - kh) / s + 1, ow = (w + 2 * p - kw) / s + 1;
  Vec<double> out = Vec<double>::Zero(n * f * oh * ow);
  for (Index in = 0; in < n; ++in)
    for (Index of = 0; of < f; ++of)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          double acc = b.values()[of];
          for (Index ic = 0; ic < c; ++ic)
            for (Index ky = 0; ky < kh; ++ky)
              for (Index kx = 0; kx < kw; ++kx) {
                const Index y = oy * s - p + ky, xx = ox * s - p + kx;
                if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
                acc += k.values()[((of * c + ic) * kh + ky) * kw + kx] *
                       x.values()[((in * c + ic) * h + y) * w + xx];
              }
          out[((in * f + of) * oh + oy) * ow + ox] = acc;
        }
  return out;
}

ParamSet<double> op_params(std::uint64_t seed) {
  Rng rng(seed);
  ParamSet<double> ps;
  ps["x"] = random_tensor({2, 2, 6, 6}, rng);
  ps["k"] = random_tensor({3, 2, 4, 4}, rng);
  ps["b"] = random_tensor({3}, rng);
  ps["kt"] = random_tensor({3, 2, 4, 4}, rng);
  ps["bt"] = random_tensor({2}, rng);
  ps["w"] = random_tensor({27, 4}, rng);
  ps["wb"] = random_tensor({4}, rng);
  ps["lv"] = random_tensor({2, 4}, rng);
  ps["eps"] = random_tensor({2, 4}, rng);
  ps["t"] = random_tensor({2, 2, 6, 6}, rng, 0, 1);
  return ps;
}

}  // namespace

TEST_CASE("tensor construction validates shape") {
  CHECK_THROWS_AS(Tensord({2, 3}, Vec<double>::Zero(5)), ShapeError);
  CHECK_THROWS_AS(Tensord::zeros({0, 3}), ShapeError);
  const auto t = Tensord::from({2, 2}, {1, 2, 3, 4});
  CHECK(t.numel() == 4);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("conv2d matches a direct loop oracle") {
  Rng rng(11);
  for (int s : {1, 2})
    for (int p : {0, 1}) {
      const auto x = random_tensor({2, 3, 7, 6}, rng);
      const auto k = random_tensor({4, 3, 3, 4}, rng);
      const auto b = random_tensor({4}, rng);
      const auto y = conv2d(x, k, b, s, p);
      const auto ref = naive_conv(x, k, b, s, p);
      REQUIRE(y.numel() == ref.size());
      CHECK((y.values() - ref).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("conv2d rejects channel mismatch") {
  const auto x = Tensord::zeros({1, 2, 4, 4});
  const auto k = Tensord::zeros({3, 1, 2, 2});
  CHECK_THROWS_AS(conv2d(x, k, Tensord::zeros({3}), 1, 0), ShapeError);
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_tensor({2, 3, 8, 8}, rng);
    const auto kc = random_tensor({4, 3, 4, 4}, rng);
    const auto y = random_tensor({2, 4, 4, 4}, rng);
    // <conv(x), y> == <x, conv_T(y)> with zero biases.
    const auto cx = conv2d(x, kc, Tensord::zeros({4}), 2, 1);
    const auto ty = conv2d_transpose(y, kc, Tensord::zeros({3}), 2, 1);
    REQUIRE(ty.shape() == x.shape());
    const double lhs = cx.values().dot(y.values());
    const double rhs = x.values().dot(ty.values());
    CHECK(std::abs(lhs - rhs) < 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("conv2d_transpose output extent") {
  const auto y = conv2d_transpose(Tensord::zeros({1, 4, 4, 4}), Tensord::zeros({4, 1, 4, 4}),
                                  Tensord::zeros({1}), 2, 1);
  CHECK(y.shape() == Shape{1, 1, 8, 8});
}

TEST_CASE("loss values") {
  SUBCASE("mse") {
    const auto a = Tensord::from({4}, {1, 2, 3, 4});
    CHECK(mse_loss(a, a).item() == 0.0);
    CHECK(mse_loss(a, Tensord::from({4}, {0, 0, 0, 0})).item() == doctest::Approx(7.5));
    CHECK_THROWS_AS(mse_loss(a, Tensord::zeros({2, 2})), ShapeError);
  }
  SUBCASE("kl") {
    CHECK(kl_divergence_diag_gaussian(Tensord::zeros({3, 2}), Tensord::zeros({3, 2})).item() == 0.0);
    // 0.5 * (1 + e^0 - 1 - 0) = 0.5 for one element with mu = 1.
    CHECK(kl_divergence_diag_gaussian(Tensord::from({1, 1}, {1}), Tensord::zeros({1, 1})).item() ==
          doctest::Approx(0.5));
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      const auto mu = random_tensor({4, 3}, rng, -3, 3);
      const auto lv = random_tensor({4, 3}, rng, -3, 3);
      CHECK(kl_divergence_diag_gaussian(mu, lv).item() >= 0.0);
    }
  }
  SUBCASE("cross entropy") {
    const auto eq = Tensord::from({2, 2}, {0.3, 0.3, -1, -1});
    CHECK(cross_entropy_loss(eq, Tensord::from({2}, {0, 1})).item() == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(cross_entropy_loss(eq, Tensord::from({2}, {0, 2})), std::invalid_argument);
    const auto sure = Tensord::from({1, 2}, {0, 10});
    CHECK(cross_entropy_loss(sure, Tensord::from({1}, {1})).item() < 1e-4);
  }
}

TEST_CASE("relu subgradient at zero is zero") {
  auto x = Tensord::from({3}, {-1, 0, 2}, true);
  backward(sum(relu(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("backward requires a scalar") {
  auto x = Tensord::from({2}, {1, 2}, true);
  CHECK_THROWS(backward(relu(x)));
  CHECK_THROWS(backward(Tensord{}));
}

TEST_CASE("gradients accumulate across uses") {
  auto x = Tensord::from({1}, {3}, true);
  backward(add(mul(x, x), x));  // d/dx (x^2 + x) = 7
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("gradient check: conv, transposed conv, sigmoid, mse") {
  auto fn = [](const ParamSet<double>& p) {
    const auto h = sigmoid(conv2d(p.at("x"), p.at("k"), p.at("b"), 2, 1));
    const auto back = conv2d_transpose(h, p.at("kt"), p.at("bt"), 2, 1);
    return mse_loss(sigmoid(back), p.at("t"));
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ps = op_params(seed);
    CHECK(grad_check(fn, ps) < 1e-5);
  }
}

TEST_CASE("gradient check: linear, reparameterize, kl, cross entropy") {
  const auto labels = Tensord::from({2}, {0, 1});
  auto fn = [&](const ParamSet<double>& p) {
    const auto h = reshape(conv2d(p.at("x"), p.at("k"), p.at("b"), 2, 1), {2, 27});
    const auto mu = linear(h, p.at("w"), p.at("wb"));
    const auto z = reparameterize(mu, p.at("lv"), p.at("eps"));
    const auto logits =
        linear(z, Tensord::from({4, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8}), Tensord::zeros({2}));
    return add(cross_entropy_loss(logits, labels),
               scale(kl_divergence_diag_gaussian(mu, p.at("lv")), 0.3));
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ps = op_params(seed);
    CHECK(grad_check(fn, ps) < 1e-5);
  }
}

TEST_CASE("gradient check: concat, weighted sum, mul") {
  auto fn = [](const ParamSet<double>& p) {
    const auto a = concat_features<double>({p.at("lv"), p.at("eps")});
    return weighted_sum<double>({sum(mul(a, a)), sum(p.at("wb"))}, {0.5, 2.0});
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ps = op_params(seed);
    CHECK(grad_check(fn, ps) < 1e-5);
  }
}

TEST_CASE("adam") {
  SUBCASE("first step moves by about lr against the gradient sign") {
    ParamSet<double> ps;
    ps["p"] = Tensord::from({3}, {1, 1, 1}, true);
    ps["p"].mutable_grad() << 0.3, -2.0, 1e-3;
    AdamState<double> st;
    st.lr = 0.01;
    st.eps = 1e-12;
    adam_step(ps, st);
    CHECK(ps["p"].values()[0] == doctest::Approx(0.99).epsilon(1e-8));
    CHECK(ps["p"].values()[1] == doctest::Approx(1.01).epsilon(1e-8));
    CHECK(ps["p"].values()[2] == doctest::Approx(0.99).epsilon(1e-6));
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    ParamSet<double> ps;
    ps["p"] = Tensord::from({2}, {0.5, -0.25}, true);
    AdamState<double> st;
    for (int t = 0; t < 10; ++t) {
      ps["p"].mutable_grad().setZero();
      adam_step(ps, st);
      CHECK(ps["p"].values()[0] == 0.5);
      CHECK(ps["p"].values()[1] == -0.25);
    }
  }
  SUBCASE("missing gradient is an error") {
    ParamSet<double> ps;
    ps["p"] = Tensord::from({1}, {1}, true);
    AdamState<double> st;
    CHECK_THROWS_AS(adam_step(ps, st), std::logic_error);
  }
  SUBCASE("minimises a quadratic") {
    ParamSet<double> ps;
    ps["p"] = Tensord::from({2}, {3, -2}, true);
    AdamState<double> st;
    st.lr = 0.05;
    for (int t = 0; t < 2000; ++t) {
      zero_grads(ps);
      backward(sum(mul(ps["p"], ps["p"])));
      adam_step(ps, st);
    }
    CHECK(ps["p"].values().norm() < 1e-2);
  }
}

TEST_CASE("float and double forwards agree") {
  Rng rng(9);
  const auto x = random_tensor({1, 1, 8, 8}, rng);
  const auto k = random_tensor({2, 1, 4, 4}, rng);
  ParamSet<double> pd{{"x", x}, {"k", k}, {"b", Tensord::zeros({2})}};
  const auto pf = cast_params<float>(pd, false);
  const auto yd = conv2d(pd.at("x"), pd.at("k"), pd.at("b"), 2, 1);
  const auto yf = conv2d(pf.at("x"), pf.at("k"), pf.at("b"), 2, 1);
  CHECK((yd.values().cast<float>() - yf.values()).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, "train") == derive_seed(1, "train"));
  CHECK(derive_seed(1, "train") != derive_seed(1, "split"));
  CHECK(derive_seed(1, "train") != derive_seed(2, "train"));
  Rng a(7), b(7);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}
