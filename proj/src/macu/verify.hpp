#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "macu/gradcheck.hpp"
#include "macu/train.hpp"

namespace macu {

struct GradCheckResult {
  std::string name;
  double err = 0;
  double tol = 0;
  bool pass = false;
};

namespace detail {

inline Tensor<double> rand_tensor(const Shape& s, Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.v) v = rng.next_uniform(lo, hi);
  return t;
}

inline Var<double> leaf(const Shape& s, Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
  return Var<double>(rand_tensor(s, rng, lo, hi), true);
}

}  // namespace detail

// Central-difference verification of every differentiable primitive, the
// composite blocks, and a tiny end-to-end network. tol applies to primitives
// and blocks; the end-to-end case uses 10x tol (1e-3 at the default 1e-4).
inline std::vector<GradCheckResult> run_gradient_suite(double tol = 1e-4,
                                                       double h = 1e-5,
                                                       bool end_to_end = true) {
  std::vector<GradCheckResult> results;
  auto record = [&](const std::string& name, double err, double t) {
    results.push_back({name, err, t, err <= t});
  };
  auto check = [&](const std::string& name,
                   const std::function<Var<double>()>& f,
                   const std::vector<Var<double>>& leaves) {
    record(name, grad_check_multi(f, leaves, h), tol);
  };
  using detail::leaf;

  {
    Rng rng(101);
    ConvSpec<double> spec;
    spec.weight = leaf({4, 3, 3, 3}, rng);
    spec.bias = leaf({1, 4, 1, 1}, rng);
    spec.stride = 1;
    spec.pad_h = spec.pad_w = 1;
    Var<double> x = leaf({2, 3, 6, 6}, rng);
    check("conv2d_s1p1", [&] { return sum_all(conv2d(x, spec)); },
          {x, spec.weight, spec.bias});
  }
  {
    Rng rng(102);
    ConvSpec<double> spec;
    spec.weight = leaf({2, 3, 3, 3}, rng);
    spec.stride = 2;
    Var<double> x = leaf({1, 3, 7, 7}, rng);
    check("conv2d_s2p0_nobias", [&] { return sum_all(conv2d(x, spec)); },
          {x, spec.weight});
  }
  {
    Rng rng(103);
    ConvSpec<double> spec;
    spec.weight = leaf({3, 2, 1, 3}, rng);
    spec.pad_w = 1;
    Var<double> x = leaf({2, 2, 5, 5}, rng);
    check("conv2d_1x3", [&] { return sum_all(conv2d(x, spec)); },
          {x, spec.weight});
  }
  {
    Rng rng(104);
    ConvSpec<double> spec;
    spec.weight = leaf({3, 4, 2, 2}, rng);
    spec.bias = leaf({1, 3, 1, 1}, rng);
    spec.stride = 2;
    Var<double> x = leaf({2, 4, 5, 5}, rng);
    check("conv_transpose2d_k2s2", [&] { return sum_all(conv_transpose2d(x, spec)); },
          {x, spec.weight, spec.bias});
  }
  {
    Rng rng(105);
    ConvSpec<double> spec;
    spec.weight = leaf({2, 3, 4, 4}, rng);
    spec.stride = 4;
    Var<double> x = leaf({1, 3, 3, 3}, rng);
    check("conv_transpose2d_k4s4", [&] { return sum_all(conv_transpose2d(x, spec)); },
          {x, spec.weight});
  }
  {
    Rng rng(106);
    Var<double> x = leaf({2, 3, 6, 6}, rng);
    Var<double> r(detail::rand_tensor({2, 3, 3, 3}, rng), false);
    check("maxpool2d_k2s2", [&] { return sum_all(mul(maxpool2d(x, 2, 2), r)); },
          {x});
  }
  {
    Rng rng(107);
    Var<double> x = leaf({2, 4, 6, 6}, rng);
    Var<double> r(detail::rand_tensor({2, 4, 1, 1}, rng), false);
    check("global_pool_avg",
          [&] { return sum_all(mul(global_pool(x, PoolMode::avg), r)); }, {x});
    check("global_pool_max",
          [&] { return sum_all(mul(global_pool(x, PoolMode::max), r)); }, {x});
  }
  {
    Rng rng(108);
    BnParams<double> bn;
    bn.gamma = leaf({1, 3, 1, 1}, rng, 0.5, 1.5);
    bn.beta = leaf({1, 3, 1, 1}, rng);
    bn.running_mean = Var<double>(Tensor<double>::zeros({1, 3, 1, 1}), false);
    bn.running_var = Var<double>(Tensor<double>::full({1, 3, 1, 1}, 1.0), false);
    Var<double> x = leaf({2, 3, 4, 4}, rng);
    Var<double> r(detail::rand_tensor({2, 3, 4, 4}, rng), false);
    check("batchnorm2d_training",
          [&] { return sum_all(mul(batchnorm2d(x, bn, true), r)); },
          {x, bn.gamma, bn.beta});
    bn.running_mean.value() = detail::rand_tensor({1, 3, 1, 1}, rng);
    bn.running_var.value() = detail::rand_tensor({1, 3, 1, 1}, rng, 0.5, 2.0);
    check("batchnorm2d_inference",
          [&] { return sum_all(mul(batchnorm2d(x, bn, false), r)); },
          {x, bn.gamma, bn.beta});
  }
  {
    Rng rng(109);
    Var<double> x = leaf({2, 3, 4, 4}, rng);
    check("relu", [&] { return sum_all(mul(relu(x), x)); }, {x});
    check("sigmoid", [&] { return sum_all(mul(sigmoid(x), x)); }, {x});
  }
  {
    Rng rng(110);
    Var<double> x = leaf({2, 3, 4, 4}, rng);
    Var<double> y = leaf({2, 3, 4, 4}, rng);
    Var<double> b = leaf({1, 3, 1, 1}, rng);
    Var<double> nb = leaf({2, 3, 1, 1}, rng);
    check("add_equal", [&] { return sum_all(mul(add(x, y), x)); }, {x, y});
    check("add_broadcast", [&] { return sum_all(mul(add(x, b), x)); }, {x, b});
    check("mul_equal", [&] { return sum_all(mul(mul(x, y), y)); }, {x, y});
    check("mul_broadcast_1C", [&] { return sum_all(mul(mul(x, b), x)); }, {x, b});
    check("mul_broadcast_NC", [&] { return sum_all(mul(mul(x, nb), x)); }, {x, nb});
  }
  {
    Rng rng(111);
    Var<double> a = leaf({2, 2, 3, 3}, rng);
    Var<double> b = leaf({2, 3, 3, 3}, rng);
    Var<double> r(detail::rand_tensor({2, 5, 3, 3}, rng), false);
    check("concat_channels",
          [&] { return sum_all(mul(concat_channels<double>({a, b}), r)); }, {a, b});
    Var<double> x = leaf({2, 5, 3, 3}, rng);
    Var<double> r2(detail::rand_tensor({2, 2, 3, 3}, rng), false);
    check("slice_channels",
          [&] { return sum_all(mul(slice_channels(x, 1, 3), r2)); }, {x});
  }
  {
    Rng rng(112);
    Var<double> x = leaf({2, 4, 3, 3}, rng);
    Var<double> r(detail::rand_tensor({2, 4, 3, 3}, rng), false);
    check("softmax_channels",
          [&] { return sum_all(mul(softmax_channels(x), r)); }, {x});
  }
  {
    Rng rng(113);
    Var<double> x = leaf({2, 3, 4, 4}, rng);
    Var<double> sc = leaf({1, 3, 1, 1}, rng, 0.5, 1.5);
    Var<double> sh = leaf({1, 3, 1, 1}, rng);
    check("channel_affine", [&] { return sum_all(channel_affine(x, sc, sh)); },
          {x, sc, sh});
  }
  {
    Rng rng(114);
    Var<double> logits = leaf({2, 3, 4, 4}, rng);
    ClassMask mask;
    mask.n = 2;
    mask.h = mask.w = 4;
    mask.v.resize(32);
    for (auto& v : mask.v) v = int32_t(rng.next_below(3));
    check("cross_entropy_loss",
          [&] { return cross_entropy_loss(logits, mask); }, {logits});
  }

  {
    Rng rng(120);
    AcbParams<double> p;
    p.mask = kMaskFull;
    p.k_sq.weight = leaf({4, 3, 3, 3}, rng);
    p.k_sq.pad_h = p.k_sq.pad_w = 1;
    p.k_hor.weight = leaf({4, 3, 1, 3}, rng);
    p.k_hor.pad_w = 1;
    p.k_ver.weight = leaf({4, 3, 3, 1}, rng);
    p.k_ver.pad_h = 1;
    p.bn.gamma = leaf({1, 4, 1, 1}, rng, 0.5, 1.5);
    p.bn.beta = leaf({1, 4, 1, 1}, rng);
    p.bn.running_mean = Var<double>(Tensor<double>::zeros({1, 4, 1, 1}), false);
    p.bn.running_var = Var<double>(Tensor<double>::full({1, 4, 1, 1}, 1.0), false);
    Var<double> x = leaf({2, 3, 5, 5}, rng);
    Var<double> r(detail::rand_tensor({2, 4, 5, 5}, rng), false);
    check("acb_forward",
          [&] { return sum_all(mul(acb_forward(x, p, true), r)); },
          {x, p.k_sq.weight, p.k_hor.weight, p.k_ver.weight, p.bn.gamma,
           p.bn.beta});
  }
  {
    Rng rng(121);
    CabParams<double> p;
    p.r = 4;
    auto conv1 = [&](int64_t ci, int64_t co) {
      ConvSpec<double> s;
      s.weight = leaf({co, ci, 1, 1}, rng);
      s.bias = leaf({1, co, 1, 1}, rng);
      return s;
    };
    p.reduce = conv1(8, 8);
    p.compress_avg = conv1(8, 2);
    p.compress_max = conv1(8, 2);
    p.restore_avg = conv1(2, 8);
    p.restore_max = conv1(2, 8);
    Var<double> x = leaf({1, 8, 4, 4}, rng);
    Var<double> r(detail::rand_tensor({1, 8, 4, 4}, rng), false);
    std::vector<Var<double>> leaves{x};
    for (auto* s : {&p.reduce, &p.compress_avg, &p.compress_max, &p.restore_avg,
                    &p.restore_max}) {
      leaves.push_back(s->weight);
      leaves.push_back(s->bias);
    }
    check("cab_forward", [&] { return sum_all(mul(cab_forward(x, p), r)); },
          leaves);
  }
  {
    // aggregate node at i=2 of a 3-level stack: one pooled encoder branch,
    // the same-level branch, one upsampled decoder branch, then CAB
    Rng rng(122);
    DecoderNode<double> node;
    node.i = 2;
    node.levels = 3;
    auto mk_block = [&](int64_t ci, int64_t co) {
      AcbParams<double> p;
      p.mask = kMaskFull;
      p.k_sq.weight = leaf({co, ci, 3, 3}, rng);
      p.k_sq.pad_h = p.k_sq.pad_w = 1;
      p.k_hor.weight = leaf({co, ci, 1, 3}, rng);
      p.k_hor.pad_w = 1;
      p.k_ver.weight = leaf({co, ci, 3, 1}, rng);
      p.k_ver.pad_h = 1;
      p.bn.gamma = leaf({1, co, 1, 1}, rng, 0.5, 1.5);
      p.bn.beta = leaf({1, co, 1, 1}, rng);
      p.bn.running_mean = Var<double>(Tensor<double>::zeros({1, co, 1, 1}), false);
      p.bn.running_var =
          Var<double>(Tensor<double>::full({1, co, 1, 1}, 1.0), false);
      return p;
    };
    node.down.push_back({mk_block(2, 4)});
    typename DecoderNode<double>::UpBranch ub;
    ub.up.weight = leaf({4, 8, 2, 2}, rng);
    ub.up.stride = 2;
    ub.block = mk_block(4, 4);
    node.up.push_back(std::move(ub));
    auto conv1 = [&](int64_t ci, int64_t co) {
      ConvSpec<double> s;
      s.weight = leaf({co, ci, 1, 1}, rng);
      s.bias = leaf({1, co, 1, 1}, rng);
      return s;
    };
    node.cab.r = 4;
    node.cab.reduce = conv1(12, 8);
    node.cab.compress_avg = conv1(8, 2);
    node.cab.compress_max = conv1(8, 2);
    node.cab.restore_avg = conv1(2, 8);
    node.cab.restore_max = conv1(2, 8);

    Var<double> e1 = leaf({1, 2, 8, 8}, rng);
    Var<double> e2 = leaf({1, 4, 4, 4}, rng);
    Var<double> d3 = leaf({1, 8, 2, 2}, rng);
    Var<double> r(detail::rand_tensor({1, 8, 4, 4}, rng), false);
    std::vector<Var<double>> leaves{e1, e2, d3};
    auto push_block = [&](AcbParams<double>& p) {
      leaves.push_back(p.k_sq.weight);
      leaves.push_back(p.k_hor.weight);
      leaves.push_back(p.k_ver.weight);
      leaves.push_back(p.bn.gamma);
      leaves.push_back(p.bn.beta);
    };
    push_block(node.down[0].block);
    leaves.push_back(node.up[0].up.weight);
    push_block(node.up[0].block);
    for (auto* s : {&node.cab.reduce, &node.cab.compress_avg,
                    &node.cab.compress_max, &node.cab.restore_avg,
                    &node.cab.restore_max}) {
      leaves.push_back(s->weight);
      leaves.push_back(s->bias);
    }
    check("aggregate_node",
          [&] {
            std::vector<Var<double>> enc{e1, e2};
            std::vector<Var<double>> deeper{d3};
            return sum_all(mul(aggregate_node(node, enc, deeper, true), r));
          },
          leaves);
  }

  if (end_to_end) {
    Rng rng(130);
    NetworkConfig cfg;
    cfg.levels = 3;
    cfg.base_width = 4;
    cfg.classes = 2;
    cfg.cab_ratio = 4;
    cfg.variant = Variant::macu;
    auto net = build_network<double>(cfg, 31);
    Var<double> x(detail::rand_tensor({1, 3, 16, 16}, rng), false);
    ClassMask mask;
    mask.n = 1;
    mask.h = mask.w = 16;
    mask.v.resize(256);
    for (auto& v : mask.v) v = int32_t(rng.next_below(2));
    std::vector<Var<double>> leaves;
    for (auto& e : net.params(ParamView::unfused))
      if (e.trainable) leaves.push_back(e.var);
    const double err = grad_check_multi(
        [&] { return cross_entropy_loss(net.forward_logits(x, true), mask); },
        leaves, h);
    record("network_end_to_end", err, tol * 10);
  }

  return results;
}

struct BenchResult {
  double median_ms_unfused = 0;
  double median_ms_fused = 0;
  MacTotals macs;
};

inline BenchResult run_bench(const NetworkConfig& cfg, int size, int reps) {
  if (reps < 1) throw ValueError("bench: reps must be positive");
  auto net = build_network<float>(cfg, 0);
  net.fuse();
  Rng rng(1);
  Tensor<float> x({1, cfg.in_channels, size, size});
  for (auto& v : x.v) v = float(rng.next_uniform(0, 1));
  Var<float> xv(x, false);

  auto time_path = [&](bool fused) {
    std::vector<double> ms;
    net.forward_logits(xv, false, fused);  // warm-up, excluded
    for (int i = 0; i < reps; ++i) {
      auto t0 = std::chrono::steady_clock::now();
      net.forward_logits(xv, false, fused);
      auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
  };
  BenchResult r;
  r.median_ms_unfused = time_path(false);
  r.median_ms_fused = time_path(true);
  r.macs = mac_totals(mac_report(cfg, size, size));
  return r;
}

}  // namespace macu
