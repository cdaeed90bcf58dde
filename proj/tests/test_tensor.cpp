#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "macu/gemm.hpp"
#include "macu/gradcheck.hpp"
#include "macu/ops.hpp"
#include "oracles.hpp"

using namespace macu;

namespace {

Tensor<double> rand_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(s);
  for (auto& v : t.v) v = rng.next_uniform(lo, hi);
  return t;
}

ConvSpec<double> rand_spec(int64_t co, int64_t ci, int64_t kh, int64_t kw,
                           Rng& rng, bool bias, int stride, int ph, int pw) {
  ConvSpec<double> s;
  s.weight = Var<double>(rand_tensor({co, ci, kh, kw}, rng), true);
  if (bias) s.bias = Var<double>(rand_tensor({1, co, 1, 1}, rng), true);
  s.stride = stride;
  s.pad_h = ph;
  s.pad_w = pw;
  return s;
}

std::vector<double> bias_of(const ConvSpec<double>& s) {
  return s.bias.defined() ? s.bias.value().v : std::vector<double>{};
}

}  // namespace

TEST_CASE("shape and tensor basics") {
  Shape s{2, 3, 4, 5};
  CHECK(s.numel() == 120);
  Tensor<double> t(s);
  CHECK(t.v.size() == 120);
  CHECK(t.all_finite());
  t.at(1, 2, 3, 4) = 7;
  CHECK(t.v.back() == 7);
  CHECK_THROWS_AS(Tensor<double>(s, std::vector<double>(7, 0.0)), ShapeError);
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.next_unit(), y = b.next_unit(), z = c.next_unit();
    all_equal = all_equal && x == y;
    any_diff = any_diff || x != z;
    CHECK(x >= 0);
    CHECK(x < 1);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("gemm against triple loop") {
  Rng rng(1);
  const int M = 7, K = 5, N = 6;
  std::vector<double> A(M * K), B(K * N), Bt(N * K), At(K * M);
  for (auto& v : A) v = rng.next_uniform(-1, 1);
  for (auto& v : B) v = rng.next_uniform(-1, 1);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < N; ++j) Bt[j * K + i] = B[i * N + j];
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < K; ++j) At[j * M + i] = A[i * K + j];

  std::vector<double> ref(M * N, 0.0);
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < N; ++j) ref[i * N + j] += A[i * K + k] * B[k * N + j];

  std::vector<double> C(M * N, 0.0);
  gemm_nn(M, K, N, A.data(), B.data(), C.data());
  for (int i = 0; i < M * N; ++i) CHECK(C[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  std::fill(C.begin(), C.end(), 0.0);
  gemm_nt(M, K, N, A.data(), Bt.data(), C.data());
  for (int i = 0; i < M * N; ++i) CHECK(C[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  std::fill(C.begin(), C.end(), 0.0);
  gemm_tn(K, M, N, At.data(), B.data(), C.data());
  for (int i = 0; i < M * N; ++i) CHECK(C[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d examples") {
  // [[1,2],[3,4]] under an all-ones 3x3, pad 1 -> all 10
  Var<double> x(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  ConvSpec<double> ones;
  ones.weight = Var<double>(Tensor<double>::full({1, 1, 3, 3}, 1.0));
  ones.pad_h = ones.pad_w = 1;
  auto y = conv2d(x, ones);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.value().v) CHECK(v == doctest::Approx(10.0).epsilon(1e-14));

  // 1x1 identity kernel leaves input unchanged
  Rng rng(3);
  Var<double> r(rand_tensor({2, 1, 3, 3}, rng));
  ConvSpec<double> ident;
  ident.weight = Var<double>(Tensor<double>::full({1, 1, 1, 1}, 1.0));
  auto yi = conv2d(r, ident);
  CHECK(yi.value().v == r.value().v);

  // zero kernel annihilates
  ConvSpec<double> zero;
  zero.weight = Var<double>(Tensor<double>({1, 1, 3, 3}));
  zero.pad_h = zero.pad_w = 1;
  auto yz = conv2d(r, zero).value();
  for (double v : yz.v) CHECK(v == 0.0);
}

TEST_CASE("conv2d against loop oracle, asymmetric kernels included") {
  Rng rng(11);
  struct Cfg { int64_t co, ci, kh, kw; int s, ph, pw; bool bias; };
  for (const Cfg& c : {Cfg{4, 3, 3, 3, 1, 1, 1, true}, Cfg{2, 3, 1, 3, 1, 0, 1, false},
                       Cfg{2, 3, 3, 1, 1, 1, 0, true}, Cfg{3, 2, 3, 3, 2, 0, 0, false}}) {
    auto spec = rand_spec(c.co, c.ci, c.kh, c.kw, rng, c.bias, c.s, c.ph, c.pw);
    Var<double> x(rand_tensor({2, c.ci, 8, 8}, rng));
    auto got = conv2d(x, spec).value();
    auto want = oracle::conv2d(x.value(), spec.weight.value(), bias_of(spec),
                               c.s, c.ph, c.pw);
    REQUIRE(got.shape == want.shape);
    for (size_t i = 0; i < got.v.size(); ++i)
      CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d shape errors") {
  Rng rng(5);
  Var<double> x(rand_tensor({1, 3, 4, 4}, rng));
  auto spec = rand_spec(2, 4, 3, 3, rng, false, 1, 1, 1);  // wrong in_channels
  CHECK_THROWS_AS(conv2d(x, spec), ShapeError);
  auto big = rand_spec(2, 3, 5, 5, rng, false, 1, 0, 0);
  Var<double> tiny(rand_tensor({1, 3, 3, 3}, rng));
  CHECK_THROWS_AS(conv2d(tiny, big), ShapeError);  // non-positive output
}

TEST_CASE("conv2d linearity for bias-free specs") {
  Rng rng(7);
  auto spec = rand_spec(3, 2, 3, 3, rng, false, 1, 1, 1);
  Var<double> x(rand_tensor({1, 2, 6, 6}, rng));
  Var<double> y(rand_tensor({1, 2, 6, 6}, rng));
  const double a = 1.7, b = -0.6;
  Tensor<double> mix({1, 2, 6, 6});
  for (size_t i = 0; i < mix.v.size(); ++i)
    mix.v[i] = a * x.value().v[i] + b * y.value().v[i];
  auto lhs = conv2d(Var<double>(mix), spec).value();
  auto cx = conv2d(x, spec).value();
  auto cy = conv2d(y, spec).value();
  for (size_t i = 0; i < lhs.v.size(); ++i)
    CHECK(std::fabs(lhs.v[i] - (a * cx.v[i] + b * cy.v[i])) < 1e-10);

  // same property in f32 at 1e-5
  ConvSpec<float> spec32;
  spec32.weight = Var<float>(spec.weight.value().cast<float>());
  spec32.pad_h = spec32.pad_w = 1;
  Var<float> x32(x.value().cast<float>()), y32(y.value().cast<float>());
  Var<float> mix32(mix.cast<float>());
  auto lhs32 = conv2d(mix32, spec32).value();
  auto cx32 = conv2d(x32, spec32).value();
  auto cy32 = conv2d(y32, spec32).value();
  for (size_t i = 0; i < lhs32.v.size(); ++i)
    CHECK(std::fabs(double(lhs32.v[i]) -
                    (a * double(cx32.v[i]) + b * double(cy32.v[i]))) < 1e-5);
}

TEST_CASE("conv_transpose2d examples") {
  // 2x2 input, all-ones 2x2 kernel, stride 2: each scalar fills its block
  Var<double> x(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  ConvSpec<double> s;
  s.weight = Var<double>(Tensor<double>::full({1, 1, 2, 2}, 1.0));
  s.stride = 2;
  auto y = conv_transpose2d(x, s).value();
  REQUIRE(y.shape == Shape{1, 1, 4, 4});
  const double want[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(y.v[size_t(i)] == want[i]);

  // single element scatter: v * (a,b,c,d)
  Var<double> one(Tensor<double>({1, 1, 1, 1}, {2.5}));
  ConvSpec<double> k;
  k.weight = Var<double>(Tensor<double>({1, 1, 2, 2}, {1, -2, 3, -4}));
  k.stride = 2;
  auto z = conv_transpose2d(one, k).value();
  CHECK(z.v == std::vector<double>{2.5, -5, 7.5, -10});

  // zero input -> zero output of shape [N,out,2H,2W]
  Var<double> zero(Tensor<double>({2, 1, 3, 3}));
  auto zz = conv_transpose2d(zero, s).value();
  CHECK(zz.shape == Shape{2, 1, 6, 6});
  for (double v : zz.v) CHECK(v == 0.0);
}

TEST_CASE("conv_transpose2d against scatter oracle") {
  Rng rng(13);
  for (int stride : {2, 4}) {
    ConvSpec<double> s;
    s.weight = Var<double>(rand_tensor({2, 3, stride, stride}, rng), true);
    s.bias = Var<double>(rand_tensor({1, 2, 1, 1}, rng), true);
    s.stride = stride;
    Var<double> x(rand_tensor({2, 3, 4, 4}, rng));
    auto got = conv_transpose2d(x, s).value();
    auto want = oracle::conv_transpose2d(x.value(), s.weight.value(),
                                         s.bias.value().v, stride);
    REQUIRE(got.shape == want.shape);
    for (size_t i = 0; i < got.v.size(); ++i)
      CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("maxpool2d examples") {
  Var<double> x(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(maxpool2d(x, 2, 2).value().v == std::vector<double>{4});

  Var<double> c(Tensor<double>::full({2, 3, 4, 4}, 2.5));
  auto pc = maxpool2d(c, 2, 2).value();
  CHECK(pc.shape == Shape{2, 3, 2, 2});
  for (double v : pc.v) CHECK(v == 2.5);

  Tensor<double> ramp({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) ramp.v[size_t(i)] = i;
  auto pr = maxpool2d(Var<double>(ramp), 2, 2).value();
  CHECK(pr.v == std::vector<double>{5, 7, 13, 15});

  Var<double> odd(Tensor<double>({1, 1, 5, 5}));
  CHECK_THROWS_AS(maxpool2d(odd, 2, 2), ShapeError);

  Rng rng(17);
  Var<double> r(rand_tensor({2, 2, 8, 8}, rng));
  auto got = maxpool2d(r, 4, 4).value();
  auto want = oracle::maxpool(r.value(), 4, 4);
  CHECK(got.v == want.v);
}

TEST_CASE("global_pool examples") {
  Var<double> x(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(global_pool(x, PoolMode::avg).value().v == std::vector<double>{2.5});
  CHECK(global_pool(x, PoolMode::max).value().v == std::vector<double>{4});
  Var<double> c(Tensor<double>::full({2, 3, 5, 7}, -1.25));
  for (auto mode : {PoolMode::avg, PoolMode::max}) {
    auto y = global_pool(c, mode).value();
    CHECK(y.shape == Shape{2, 3, 1, 1});
    for (double v : y.v) CHECK(v == -1.25);
  }
}

TEST_CASE("batchnorm2d examples") {
  // x=[1,3]: mean 2, population variance 1 -> [-1,1]
  BnParams<double> bn;
  bn.gamma = Var<double>(Tensor<double>::full({1, 1, 1, 1}, 1.0), true);
  bn.beta = Var<double>(Tensor<double>({1, 1, 1, 1}), true);
  bn.running_mean = Var<double>(Tensor<double>({1, 1, 1, 1}));
  bn.running_var = Var<double>(Tensor<double>::full({1, 1, 1, 1}, 1.0));
  bn.eps = 0;
  Var<double> x(Tensor<double>({1, 1, 1, 2}, {1, 3}));
  auto y = batchnorm2d(x, bn, true).value();
  CHECK(y.v[0] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(y.v[1] == doctest::Approx(1.0).epsilon(1e-14));
  // running stats updated toward batch stats with momentum 0.1
  CHECK(bn.running_mean.value().v[0] == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(bn.running_var.value().v[0] == doctest::Approx(0.9 + 0.1).epsilon(1e-14));

  // constant input -> all outputs equal beta
  BnParams<double> bn2;
  bn2.gamma = Var<double>(Tensor<double>::full({1, 2, 1, 1}, 1.5), true);
  bn2.beta = Var<double>(Tensor<double>::full({1, 2, 1, 1}, 0.75), true);
  bn2.running_mean = Var<double>(Tensor<double>({1, 2, 1, 1}));
  bn2.running_var = Var<double>(Tensor<double>::full({1, 2, 1, 1}, 1.0));
  Var<double> c(Tensor<double>::full({2, 2, 3, 3}, 4.0));
  auto yc = batchnorm2d(c, bn2, true).value();
  for (double v : yc.v) CHECK(v == doctest::Approx(0.75).epsilon(1e-9));

  // x=[0,2,4,6], gamma=2, beta=1, eps=1e-5 -> 2*(x-3)/sqrt(5+1e-5)+1
  BnParams<double> bn3;
  bn3.gamma = Var<double>(Tensor<double>::full({1, 1, 1, 1}, 2.0), true);
  bn3.beta = Var<double>(Tensor<double>::full({1, 1, 1, 1}, 1.0), true);
  bn3.running_mean = Var<double>(Tensor<double>({1, 1, 1, 1}));
  bn3.running_var = Var<double>(Tensor<double>::full({1, 1, 1, 1}, 1.0));
  bn3.eps = 1e-5;
  Var<double> x3(Tensor<double>({1, 1, 1, 4}, {0, 2, 4, 6}));
  auto y3 = batchnorm2d(x3, bn3, true).value();
  for (int i = 0; i < 4; ++i) {
    const double want = 2.0 * (2.0 * i - 3.0) / std::sqrt(5.0 + 1e-5) + 1.0;
    CHECK(y3.v[size_t(i)] == doctest::Approx(want).epsilon(1e-12));
  }

  // inference mode uses the running stats, not batch stats
  BnParams<double> bn4;
  bn4.gamma = Var<double>(Tensor<double>::full({1, 1, 1, 1}, 1.0), true);
  bn4.beta = Var<double>(Tensor<double>({1, 1, 1, 1}), true);
  bn4.running_mean = Var<double>(Tensor<double>::full({1, 1, 1, 1}, 10.0));
  bn4.running_var = Var<double>(Tensor<double>::full({1, 1, 1, 1}, 4.0));
  bn4.eps = 0;
  Var<double> x4(Tensor<double>({1, 1, 1, 1}, {12.0}));
  CHECK(batchnorm2d(x4, bn4, false).value().v[0] ==
        doctest::Approx(1.0).epsilon(1e-12));

  // random case against the loop oracle
  Rng rng(19);
  BnParams<double> bn5;
  bn5.gamma = Var<double>(rand_tensor({1, 3, 1, 1}, rng, 0.5, 1.5), true);
  bn5.beta = Var<double>(rand_tensor({1, 3, 1, 1}, rng), true);
  bn5.running_mean = Var<double>(Tensor<double>({1, 3, 1, 1}));
  bn5.running_var = Var<double>(Tensor<double>::full({1, 3, 1, 1}, 1.0));
  Var<double> xr(rand_tensor({2, 3, 4, 4}, rng));
  auto got = batchnorm2d(xr, bn5, true).value();
  auto want = oracle::batchnorm_train(xr.value(), bn5.gamma.value().v,
                                      bn5.beta.value().v, 1e-5);
  for (size_t i = 0; i < got.v.size(); ++i)
    CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-10));
}

TEST_CASE("elementwise examples") {
  Var<double> x(Tensor<double>({1, 1, 1, 3}, {-1, 0, 2}));
  CHECK(relu(x).value().v == std::vector<double>{0, 0, 2});

  Var<double> zero(Tensor<double>({1, 1, 1, 1}), true);
  auto s = sigmoid(zero);
  CHECK(s.value().v[0] == 0.5);
  backward(sum_all(s));
  CHECK(zero.node()->grad.v[0] == doctest::Approx(0.25).epsilon(1e-14));

  Rng rng(23);
  Var<double> r(rand_tensor({1, 2, 3, 3}, rng));
  Var<double> zeros(Tensor<double>({1, 2, 3, 3}));
  Var<double> ones(Tensor<double>::full({1, 2, 3, 3}, 1.0));
  CHECK(add(r, zeros).value().v == r.value().v);
  CHECK(mul(r, ones).value().v == r.value().v);

  Var<double> wrong(Tensor<double>({1, 2, 3, 4}));
  CHECK_THROWS_AS(add(r, wrong), ShapeError);
  CHECK_THROWS_AS(mul(r, wrong), ShapeError);

  // per-channel [1,C,1,1] broadcast add
  Var<double> b(Tensor<double>({1, 2, 1, 1}, {10, 20}));
  auto y = add(r, b).value();
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t i = 0; i < 9; ++i)
      CHECK(y.v[size_t(c * 9 + i)] ==
            r.value().v[size_t(c * 9 + i)] + (c == 0 ? 10 : 20));
}

TEST_CASE("concat and slice") {
  Rng rng(29);
  Var<double> a(rand_tensor({2, 3, 4, 4}, rng));
  Var<double> b(rand_tensor({2, 5, 4, 4}, rng));
  auto cat = concat_channels<double>({a, b});
  CHECK(cat.shape() == Shape{2, 8, 4, 4});

  auto single = concat_channels<double>({a});
  CHECK(single.value().v == a.value().v);

  auto a2 = slice_channels(cat, 0, 3).value();
  auto b2 = slice_channels(cat, 3, 8).value();
  CHECK(a2.v == a.value().v);
  CHECK(b2.v == b.value().v);

  Var<double> mism(rand_tensor({2, 3, 5, 4}, rng));
  CHECK_THROWS_AS(concat_channels<double>({a, mism}), ShapeError);
}

TEST_CASE("softmax_channels examples") {
  Var<double> eq(Tensor<double>::full({1, 6, 2, 2}, 3.0));
  auto pe = softmax_channels(eq).value();
  for (double v : pe.v) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-12));

  Var<double> two(Tensor<double>({1, 2, 1, 1}, {std::log(2.0), 0.0}));
  auto p = softmax_channels(two).value();
  CHECK(p.v[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(p.v[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Rng rng(31);
  Var<double> r(rand_tensor({2, 6, 3, 3}, rng, -5, 5));
  auto pr = softmax_channels(r).value();
  Tensor<double> shifted = r.value();
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 6; ++c)
      for (int64_t i = 0; i < 9; ++i)
        shifted.v[size_t((n * 6 + c) * 9 + i)] += 100.0;
  auto ps = softmax_channels(Var<double>(shifted)).value();
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t x = 0; x < 3; ++x) {
        double sum = 0;
        for (int64_t c = 0; c < 6; ++c) {
          sum += pr.at(n, c, y, x);
          CHECK(std::fabs(pr.at(n, c, y, x) - ps.at(n, c, y, x)) < 1e-6);
        }
        CHECK(std::fabs(sum - 1.0) < 1e-6);
      }
}

TEST_CASE("backward examples") {
  Var<double> x(Tensor<double>({1, 1, 1, 2}, {-1, 2}), true);
  backward(sum_all(relu(x)));
  CHECK(x.node()->grad.v == std::vector<double>{0, 1});

  Var<double> q(Tensor<double>({1, 1, 1, 3}, {1, 2, 3}), true);
  backward(sum_all(mul(q, q)));
  CHECK(q.node()->grad.v == std::vector<double>{2, 4, 6});

  // non-scalar rejected
  Var<double> v(Tensor<double>({1, 1, 1, 2}), true);
  CHECK_THROWS_AS(backward(relu(v)), ShapeError);
}

TEST_CASE("gradient accumulation across shared use and repeated backward") {
  // loss = sum(x*x) built by using x twice equals duplicated-leaf sum of paths
  Var<double> x(Tensor<double>({1, 1, 1, 2}, {1.5, -2.0}), true);
  backward(sum_all(mul(x, x)));
  const auto both_paths = x.node()->grad.v;

  Var<double> l1(Tensor<double>({1, 1, 1, 2}, {1.5, -2.0}), true);
  Var<double> l2(Tensor<double>({1, 1, 1, 2}, {1.5, -2.0}), true);
  backward(sum_all(mul(l1, l2)));
  for (size_t i = 0; i < 2; ++i)
    CHECK(both_paths[i] ==
          doctest::Approx(l1.node()->grad.v[i] + l2.node()->grad.v[i])
              .epsilon(1e-14));

  // leaf grads accumulate across backward() calls; zeroing resets exactly
  Var<double> y(Tensor<double>({1, 1, 1, 1}, {3.0}), true);
  backward(sum_all(mul(y, y)));
  const double once = y.node()->grad.v[0];
  backward(sum_all(mul(y, y)));
  CHECK(y.node()->grad.v[0] == doctest::Approx(2 * once).epsilon(1e-14));
  y.zero_grad();
  backward(sum_all(mul(y, y)));
  CHECK(y.node()->grad.v[0] == doctest::Approx(once).epsilon(1e-14));
}

TEST_CASE("grad_check examples") {
  Rng rng(37);
  // sum of squares: error < 1e-8
  Var<double> x(rand_tensor({1, 1, 2, 3}, rng), true);
  CHECK(grad_check([&] { return sum_all(mul(x, x)); }, x) < 1e-8);

  // conv2d + relu + sum on 1x2x5x5: error < 1e-4
  Var<double> xc(rand_tensor({1, 2, 5, 5}, rng), true);
  auto spec = rand_spec(3, 2, 3, 3, rng, true, 1, 1, 1);
  const double err = grad_check_multi(
      [&] { return sum_all(relu(conv2d(xc, spec))); },
      {xc, spec.weight, spec.bias});
  CHECK(err < 1e-4);

  // sum(x): all-ones gradient, error < 1e-10
  Var<double> xl(rand_tensor({1, 1, 2, 2}, rng), true);
  CHECK(grad_check([&] { return sum_all(xl); }, xl) < 1e-10);
  xl.zero_grad();
  backward(sum_all(xl));
  for (double g : xl.node()->grad.v) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("shape algebra over randomized valid shapes") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const int64_t n = 1 + int64_t(rng.next_below(2));
    const int64_t ci = 1 + int64_t(rng.next_below(4));
    const int64_t co = 1 + int64_t(rng.next_below(4));
    const int64_t hw = 4 + 2 * int64_t(rng.next_below(4));
    const int stride = 1 + int(rng.next_below(2));
    auto spec = rand_spec(co, ci, 3, 3, rng, false, stride, 1, 1);
    Var<double> x(rand_tensor({n, ci, hw, hw}, rng));
    const auto ys = conv2d(x, spec).shape();
    CHECK(ys.n == n);
    CHECK(ys.c == co);
    CHECK(ys.h == (hw + 2 - 3) / stride + 1);
    CHECK(ys.w == (hw + 2 - 3) / stride + 1);
  }
}

TEST_CASE("determinism and finiteness of forward ops") {
  Rng rng(43);
  Var<double> x(rand_tensor({2, 3, 8, 8}, rng));
  auto spec = rand_spec(4, 3, 3, 3, rng, true, 1, 1, 1);
  auto a = conv2d(x, spec).value();
  auto b = conv2d(x, spec).value();
  CHECK(a.v == b.v);
  CHECK(a.all_finite());
  auto m = maxpool2d(Var<double>(a), 2, 2).value();
  CHECK(m.all_finite());
  CHECK(softmax_channels(Var<double>(m)).value().all_finite());
}
