#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "scenediff/common.hpp"
#include "scenediff/tensor/grad_check.hpp"
#include "scenediff/tensor/graph.hpp"
#include "scenediff/tensor/kernels.hpp"

using namespace scenediff;

namespace {

DenseArray random_array(std::vector<std::int64_t> shape, Prng& rng,
                        double scale = 1.0) {
  DenseArray a(std::move(shape));
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] = rng.gaussian() * scale;
  return a;
}

}  // namespace

TEST_CASE("elementwise basics") {
  Graph g;
  Var a = g.constant(DenseArray({2}, {-1.0, 2.0}));
  Var c = clip_min(a, 0.0);
  CHECK(g.value(c)[0] == 0.0);
  CHECK(g.value(c)[1] == 2.0);

  Var mask = g.constant(DenseArray({2}, {1.0, 0.0}));
  Var x = g.constant(DenseArray({2}, {5.0, 5.0}));
  Var y = g.constant(DenseArray({2}, {7.0, 7.0}));
  Var w = where(mask, x, y);
  CHECK(g.value(w)[0] == 5.0);
  CHECK(g.value(w)[1] == 7.0);
}

TEST_CASE("sigmoid derivative at 0 is 0.25") {
  auto f = [](Graph& g, Var x) { return reduce_sum(sigmoid(x), {0}); };
  DenseArray x({1}, {0.0});
  CHECK(grad_check(f, x, 1e-6) < 1e-6);

  Graph g;
  Var xv = g.leaf(x);
  Var loss = reduce_sum(sigmoid(xv), {0});
  g.backward(loss);
  CHECK(g.grad(xv)[0] == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("broadcasting shapes and errors") {
  auto s = broadcast_shape({2, 3}, {3});
  CHECK(s == std::vector<std::int64_t>{2, 3});
  // associativity of the shape computation
  auto l = broadcast_shape(broadcast_shape({4, 1, 3}, {2, 1}), {3});
  auto r = broadcast_shape({4, 1, 3}, broadcast_shape({2, 1}, {3}));
  CHECK(l == r);
  CHECK_THROWS_WITH_AS(broadcast_shape({2, 3}, {4}),
                       doctest::Contains("(2, 3)"), std::invalid_argument);
}

TEST_CASE("matmul identity and hand dot product") {
  Graph g;
  Var I = g.constant(DenseArray({2, 2}, {1, 0, 0, 1}));
  Var m = g.constant(DenseArray({2, 2}, {1, 2, 3, 4}));
  Var p = matmul(I, m);
  for (int i = 0; i < 4; ++i) CHECK(g.value(p)[i] == g.value(m)[i]);

  Var a = g.constant(DenseArray({1, 2}, {1, 2}));
  Var b = g.constant(DenseArray({2, 1}, {3, 4}));
  CHECK(g.value(matmul(a, b))[0] == 11.0);

  CHECK_THROWS_AS(matmul(a, g.constant(DenseArray({3, 1}, {1, 2, 3}))),
                  std::invalid_argument);
}

TEST_CASE("matmul gradient vs finite differences") {
  Prng rng(7);
  DenseArray a = random_array({3, 4}, rng);
  DenseArray b = random_array({4, 2}, rng);
  auto f = [&b](Graph& g, Var x) {
    Var bv = g.constant(b);
    return reduce_sum(matmul(x, bv), {0, 1});
  };
  CHECK(grad_check(f, a, 1e-6) < 1e-6);

  auto fb = [&a](Graph& g, Var x) {
    Var av = g.constant(a);
    return reduce_sum(matmul(av, x), {0, 1});
  };
  CHECK(grad_check(fb, b, 1e-6) < 1e-6);

  // batched against shared rhs
  DenseArray abat = random_array({2, 3, 4}, rng);
  auto fbat = [&abat](Graph& g, Var x) {
    Var av = g.constant(abat);
    return reduce_sum(mul(matmul(av, x), matmul(av, x)), {0, 1, 2});
  };
  CHECK(grad_check(fbat, b, 1e-6) < 1e-6);
}

TEST_CASE("reductions") {
  Graph g;
  Var a = g.constant(DenseArray({1, 2}, {1, 3}));
  CHECK(g.value(reduce_mean(a, {1}))[0] == 2.0);

  Var v = g.constant(DenseArray({2}, {3, 4}));
  CHECK(g.value(norm2(v, {0}))[0] == doctest::Approx(5.0));

  // min over T of a random (N, T) block matches a linear scan
  Prng rng(3);
  DenseArray blk = random_array({5, 7}, rng);
  Graph g2;
  DenseArray mn = g2.value(reduce_min(g2.constant(blk), {1}));
  for (int n = 0; n < 5; ++n) {
    double best = blk[n * 7];
    for (int t = 1; t < 7; ++t) best = std::min(best, blk[n * 7 + t]);
    CHECK(mn[n] == best);
  }

  CHECK_THROWS_AS(reduce_sum(a, {1, 1}), std::invalid_argument);
}

TEST_CASE("softmax properties") {
  Graph g;
  Var a = g.constant(DenseArray({2}, {0.0, 0.0}));
  DenseArray s = g.value(softmax(a, 0));
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));

  // shift invariance
  Var b = g.constant(DenseArray({3}, {1, 2, 3}));
  Var bs = g.constant(DenseArray({3}, {1 + 17.5, 2 + 17.5, 3 + 17.5}));
  DenseArray s1 = g.value(softmax(b, 0));
  DenseArray s2 = g.value(softmax(bs, 0));
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-12));
    sum += s1[i];
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);

  // against the exp-normalize oracle
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(s1[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(s1[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));

  Graph gn;
  Var nan_in = gn.constant(DenseArray({1}, {std::nan("")}));
  CHECK_THROWS_AS(softmax(nan_in, 0), NumericError);
}

TEST_CASE("layer_norm zero variance handled by epsilon") {
  Graph g;
  Var a = g.constant(DenseArray({3}, {1, 1, 1}));
  Var gain = g.constant(DenseArray::full({3}, 1.0));
  Var bias = g.constant(DenseArray({3}));
  DenseArray out = g.value(layer_norm(a, gain, bias));
  for (int i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(0.0));
}

TEST_CASE("concat and slice round trip") {
  Graph g;
  Var a = g.constant(DenseArray({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = g.constant(DenseArray({2, 1}, {7, 8}));
  Var c = concat({a, b}, 1);
  CHECK(g.shape(c) == std::vector<std::int64_t>{2, 4});
  Var back = slice(c, 1, 0, 3);
  for (std::int64_t i = 0; i < 6; ++i) CHECK(g.value(back)[i] == g.value(a)[i]);
  CHECK_THROWS_AS(slice(a, 2, 0, 1), std::invalid_argument);
}

TEST_CASE("backward basics and fan-out accumulation") {
  Graph g;
  Var x = g.leaf(DenseArray({1}, {3.0}));
  Var y = mul(x, x);
  g.backward(reduce_sum(y, {0}));
  CHECK(g.grad(x)[0] == doctest::Approx(6.0));

  Graph g2;
  Var x2 = g2.leaf(DenseArray({1}, {5.0}));
  Var s = add(x2, x2);
  g2.backward(reduce_sum(s, {0}));
  CHECK(g2.grad(x2)[0] == doctest::Approx(2.0));

  Graph g3;
  Var nx = g3.leaf(DenseArray({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(g3.backward(nx), std::invalid_argument);
}

TEST_CASE("backward is deterministic") {
  Prng rng(11);
  DenseArray x = random_array({4, 5}, rng);
  DenseArray w = random_array({5, 3}, rng);
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    Graph g;
    Var xv = g.leaf(x);
    Var wv = g.constant(w);
    Var h = sigmoid(matmul(xv, wv));
    Var loss = reduce_sum(mul(h, h), {0, 1});
    g.backward(loss);
    const DenseArray& gr = g.grad(xv);
    if (run == 0) {
      first.assign(gr.data(), gr.data() + gr.size());
    } else {
      for (std::int64_t i = 0; i < gr.size(); ++i) CHECK(gr[i] == first[i]);
    }
  }
}

TEST_CASE("grad_check on every primitive away from kinks") {
  Prng rng(23);
  // keep inputs away from clip kinks, abs zero, and min/max ties
  auto x = random_array({3, 4}, rng);
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] += (x[i] >= 0 ? 1.5 : -1.5);

  auto checks = std::vector<std::pair<const char*, ScalarFn>>{
      {"add", [](Graph& g, Var v) { return reduce_sum(add(v, v), {0, 1}); }},
      {"sub", [](Graph& g, Var v) { return reduce_sum(sub(v, mul(v, 0.3)), {0, 1}); }},
      {"mul", [](Graph& g, Var v) { return reduce_sum(mul(v, v), {0, 1}); }},
      {"div", [](Graph& g, Var v) { return reduce_sum(divide(g.constant_scalar(1.0), v), {0, 1}); }},
      {"neg", [](Graph& g, Var v) { return reduce_sum(mul(neg(v), v), {0, 1}); }},
      {"abs", [](Graph& g, Var v) { return reduce_sum(abs_of(v), {0, 1}); }},
      {"sin", [](Graph& g, Var v) { return reduce_sum(sin_of(v), {0, 1}); }},
      {"cos", [](Graph& g, Var v) { return reduce_sum(cos_of(v), {0, 1}); }},
      {"sqrt", [](Graph& g, Var v) { return reduce_sum(sqrt_of(abs_of(v)), {0, 1}); }},
      {"sigmoid", [](Graph& g, Var v) { return reduce_sum(sigmoid(v), {0, 1}); }},
      {"exp", [](Graph& g, Var v) { return reduce_sum(exp_of(mul(v, 0.1)), {0, 1}); }},
      {"log", [](Graph& g, Var v) { return reduce_sum(log_of(add(abs_of(v), 1.0)), {0, 1}); }},
      {"clip_min", [](Graph& g, Var v) { return reduce_sum(clip_min(v, 0.25), {0, 1}); }},
      {"clip_max", [](Graph& g, Var v) { return reduce_sum(clip_max(v, 0.25), {0, 1}); }},
      {"pow", [](Graph& g, Var v) { return reduce_sum(pow_of(mul(v, v), 1.5), {0, 1}); }},
      {"minimum", [](Graph& g, Var v) { return reduce_sum(minimum(v, mul(v, -0.5)), {0, 1}); }},
      {"maximum", [](Graph& g, Var v) { return reduce_sum(maximum(v, mul(v, -0.5)), {0, 1}); }},
      {"softmax", [](Graph& g, Var v) { return reduce_sum(mul(softmax(v, 1), softmax(v, 1)), {0, 1}); }},
      {"norm2", [](Graph& g, Var v) { return reduce_sum(norm2(v, {1}), {0}); }},
      {"mean", [](Graph& g, Var v) { return reduce_mean(mul(v, v), {0, 1}); }},
      {"max", [](Graph& g, Var v) { return reduce_sum(reduce_max(v, {1}), {0}); }},
      {"min", [](Graph& g, Var v) { return reduce_sum(reduce_min(v, {1}), {0}); }},
      {"layer_norm", [](Graph& g, Var v) {
         Var gain = g.constant(DenseArray::full({4}, 1.3));
         Var bias = g.constant(DenseArray::full({4}, 0.2));
         Var o = layer_norm(v, gain, bias);
         // weight the readout so the loss is not invariant to normalization
         Var w = g.constant(DenseArray({4}, {0.3, -1.1, 2.0, 0.7}));
         return reduce_sum(mul(mul(o, w), sigmoid(o)), {0, 1});
       }},
      {"where", [](Graph& g, Var v) {
         Var m = g.constant(DenseArray({3, 4}, {1, 0, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0}));
         return reduce_sum(where(m, mul(v, 2.0), mul(v, v)), {0, 1});
       }},
      {"transpose", [](Graph& g, Var v) {
         return reduce_sum(mul(transpose_last2(v), transpose_last2(v)), {0, 1});
       }},
      {"expand", [](Graph& g, Var v) {
         Var e = expand(reshape(v, {3, 1, 4}), {3, 5, 4});
         return reduce_sum(mul(e, e), {0, 1, 2});
       }},
      {"slice_concat", [](Graph& g, Var v) {
         Var s1 = slice(v, 1, 0, 2);
         Var s2 = slice(v, 1, 2, 4);
         Var c = concat({s2, s1}, 1);
         return reduce_sum(mul(c, c), {0, 1});
       }},
      {"permute", [](Graph& g, Var v) {
         Var p = permute(reshape(v, {3, 2, 2}), {2, 0, 1});
         Var q = mul(p, expand(reshape(g.constant(DenseArray({2}, {1.5, -0.5})), {2, 1, 1}), {2, 3, 2}));
         return reduce_sum(mul(q, p), {0, 1, 2});
       }},
  };
  for (auto& [name, fn] : checks) {
    INFO("primitive: " << std::string(name));
    CHECK(grad_check(fn, x, 1e-6) < 1e-6);
  }
}

TEST_CASE("gradient of sum(AB) w.r.t. A matches row sums of B^T") {
  Prng rng(5);
  DenseArray a = random_array({2, 3}, rng);
  DenseArray b = random_array({3, 4}, rng);
  Graph g;
  Var av = g.leaf(a);
  Var bv = g.constant(b);
  g.backward(reduce_sum(matmul(av, bv), {0, 1}));
  const DenseArray& ga = g.grad(av);
  // d sum(AB) / dA_ik = sum_j B_kj
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 3; ++k) {
      double expect = 0.0;
      for (int j = 0; j < 4; ++j) expect += b[k * 4 + j];
      CHECK(ga[i * 3 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("masked_softmax handles empty rows and sums to one") {
  Graph g;
  Var a = g.constant(DenseArray({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var m = g.constant(DenseArray({2, 3}, {1, 1, 0, 0, 0, 0}));
  DenseArray s = g.value(masked_softmax(a, m, 1));
  CHECK(s[0] + s[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s[2] == 0.0);
  CHECK(s[3] == 0.0);
  CHECK(s[4] == 0.0);
  CHECK(s[5] == 0.0);

  Prng rng(9);
  DenseArray x = random_array({2, 4}, rng);
  DenseArray mask({2, 4}, {1, 1, 0, 1, 1, 0, 1, 1});
  auto f = [&mask](Graph& gg, Var v) {
    Var mm = gg.constant(mask);
    Var sm = masked_softmax(v, mm, 1);
    return reduce_sum(mul(sm, sm), {0, 1});
  };
  CHECK(grad_check(f, x, 1e-6) < 1e-6);
}

TEST_CASE("parallel kernels match serial reference") {
  Prng rng(31);
  DenseArray a = random_array({6, 17, 9}, rng);
  DenseArray b = random_array({9, 13}, rng);

  DenseArray par = kernels::matmul(a, b);
  DenseArray ser = refk::matmul(a, b);
  REQUIRE(par.size() == ser.size());
  for (std::int64_t i = 0; i < par.size(); ++i) {
    CHECK(par[i] == doctest::Approx(ser[i]).epsilon(1e-13));
  }

  DenseArray rs_p = kernels::reduce_sum(a, {0, 2});
  DenseArray rs_s = refk::reduce_sum(a, {0, 2});
  for (std::int64_t i = 0; i < rs_p.size(); ++i) {
    CHECK(rs_p[i] == doctest::Approx(rs_s[i]).epsilon(1e-12));
  }

  DenseArray sm_p = kernels::softmax(a, 1);
  DenseArray sm_s = refk::softmax(a, 1);
  for (std::int64_t i = 0; i < sm_p.size(); ++i) {
    CHECK(sm_p[i] == doctest::Approx(sm_s[i]).epsilon(1e-13));
  }

  DenseArray c = random_array({17, 9}, rng);
  auto addf = [](double x, double y) { return x + y; };
  DenseArray eb_p = kernels::ew_binary(a, c, addf);
  DenseArray eb_s = refk::ew_binary(a, c, addf);
  for (std::int64_t i = 0; i < eb_p.size(); ++i) CHECK(eb_p[i] == eb_s[i]);
}

TEST_CASE("fmod and wrap_angle") {
  Graph g;
  Var a = g.constant(DenseArray({2}, {7.0, -7.0}));
  DenseArray f = g.value(fmod_of(a, 2.0 * kPi));
  CHECK(f[0] == doctest::Approx(std::fmod(7.0, 2 * kPi)));
  DenseArray w = g.value(wrap_angle_of(a));
  CHECK(w[0] == doctest::Approx(7.0 - 2 * kPi));
  CHECK(w[1] == doctest::Approx(2 * kPi - 7.0));
  CHECK(w[0] > -kPi);
  CHECK(w[0] <= kPi);
}
