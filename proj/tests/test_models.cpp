#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "macu/network.hpp"
#include "oracles.hpp"

using namespace macu;

namespace {

NetworkConfig tiny_cfg(Variant v = Variant::macu) {
  NetworkConfig cfg;
  cfg.variant = v;
  cfg.levels = 3;
  cfg.base_width = 4;
  cfg.classes = 6;
  cfg.cab_ratio = 4;
  return cfg;
}

Tensor<float> rand_input(Shape s, Rng& rng) {
  Tensor<float> t(s);
  for (auto& v : t.v) v = float(rng.next_uniform(0, 1));
  return t;
}

std::map<std::string, int64_t> module_table(Network<float>& net,
                                            ParamView view) {
  std::vector<ModuleCount> rows;
  count_params(net, view, &rows);
  std::map<std::string, int64_t> out;
  for (auto& r : rows) out[r.module] = r.count;
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  NetworkConfig cfg = tiny_cfg();
  CHECK_NOTHROW(cfg.validate());
  cfg.levels = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_cfg();
  cfg.classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_cfg();
  cfg.cab_ratio = 16;  // D_1 = 8 not divisible by 16
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.variant = Variant::unet;  // no CAB, divisibility not required
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS_AS(parse_variant("resnet"), ConfigError);
  CHECK(parse_variant("unet_h") == Variant::unet_h);
  CHECK(std::string(variant_name(Variant::mu)) == "mu");
}

TEST_CASE("encoder and decoder widths") {
  NetworkConfig cfg;  // defaults: N=5, base 16
  CHECK(cfg.enc_width(1) == 16);
  CHECK(cfg.enc_width(3) == 64);
  CHECK(cfg.enc_width(5) == 256);
  CHECK(cfg.dec_width(1) == 32);
  CHECK(cfg.dec_width(3) == 128);
  CHECK(cfg.dec_width(5) == 256);  // D_N = C_N
}

TEST_CASE("default macu level-3 attention reduce is 320 -> 128") {
  NetworkConfig cfg;
  auto net = build_network<float>(cfg, 1);
  bool found = false;
  for (auto& e : net.params(ParamView::unfused)) {
    if (e.name == "dec3.cab.reduce.w") {
      CHECK(e.var.shape() == Shape{128, 320, 1, 1});
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("build determinism and name uniqueness") {
  auto cfg = tiny_cfg();
  auto a = build_network<float>(cfg, 9);
  auto b = build_network<float>(cfg, 9);
  auto pa = a.params(ParamView::unfused);
  auto pb = b.params(ParamView::unfused);
  REQUIRE(pa.size() == pb.size());
  std::set<std::string> names;
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].var.value().v == pb[i].var.value().v);
    CHECK(names.insert(pa[i].name).second);  // unique
  }
  auto c = build_network<float>(cfg, 10);
  bool any_diff = false;
  auto pc = c.params(ParamView::unfused);
  for (size_t i = 0; i < pa.size(); ++i)
    if (pa[i].trainable && pa[i].var.value().v != pc[i].var.value().v)
      any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("unet and acu share their BN parameter names") {
  auto uc = tiny_cfg(Variant::unet);
  auto ac = tiny_cfg(Variant::acu);
  auto un = build_network<float>(uc, 1);
  auto an = build_network<float>(ac, 1);
  auto bn_names = [](Network<float>& n) {
    std::set<std::string> s;
    for (auto& e : n.params(ParamView::unfused))
      if (e.name.find(".bn.") != std::string::npos) s.insert(e.name);
    return s;
  };
  CHECK(bn_names(un) == bn_names(an));
}

TEST_CASE("count_params closed-form examples") {
  // single 3x3 conv 3->16 with bias
  ConvSpec<float> c;
  c.weight = Var<float>(Tensor<float>({16, 3, 3, 3}), true);
  c.bias = Var<float>(Tensor<float>({1, 16, 1, 1}), true);
  CHECK(c.weight.value().numel() + c.bias.value().numel() == 448);

  // one ACB 3->16: (9+3+3)*3*16 kernel scalars + gamma,beta
  NetworkConfig cfg;  // default macu: enc1.b1 is exactly that block
  auto net = build_network<float>(cfg, 0);
  auto table = module_table(net, ParamView::unfused);
  CHECK(table.at("enc1.b1") == 752);

  // default macu total, also used by the acceptance gate
  const int64_t total = count_params(net, ParamView::unfused);
  CHECK(total == 5384882);
}

TEST_CASE("forward shape contract across variants and sizes") {
  Rng rng(5);
  for (auto v : {Variant::macu, Variant::mu, Variant::unet, Variant::unet_h,
                 Variant::unet_v, Variant::acu}) {
    auto cfg = tiny_cfg(v);
    auto net = build_network<float>(cfg, 3);
    for (int64_t hw : {8, 16}) {
      Var<float> x(rand_input({2, 3, hw, hw}, rng));
      auto y = net.forward_logits(x, false, false);
      CHECK(y.shape() == Shape{2, 6, hw, hw});
      CHECK(y.value().all_finite());
    }
  }
}

TEST_CASE("forward rejects bad spatial dims and fused misuse") {
  auto net = build_network<float>(tiny_cfg(), 1);
  Rng rng(7);
  Var<float> odd(rand_input({1, 3, 10, 10}, rng));  // not divisible by 4
  CHECK_THROWS_AS(net.forward_logits(odd, false, false), ShapeError);
  Var<float> wrongc(rand_input({1, 4, 8, 8}, rng));
  CHECK_THROWS_AS(net.forward_logits(wrongc, false, false), ShapeError);
  Var<float> ok(rand_input({1, 3, 8, 8}, rng));
  CHECK_FALSE(net.fused_ready);
  CHECK_NOTHROW(net.forward_logits(ok, false, true));  // fuses on demand
  CHECK(net.fused_ready);
  CHECK_THROWS_AS(net.forward_logits(ok, true, true), ConfigError);
  CHECK_NOTHROW(net.forward_logits(ok, false, true));
}

TEST_CASE("probabilities sum to one per pixel") {
  auto net = build_network<float>(tiny_cfg(), 11);
  Rng rng(11);
  Var<float> x(rand_input({1, 3, 8, 8}, rng));
  auto p = net.probabilities(x, false).value();
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t xx = 0; xx < 8; ++xx) {
      double s = 0;
      for (int64_t c = 0; c < 6; ++c) s += p.at(0, c, y, xx);
      CHECK(std::fabs(s - 1.0) < 1e-5);
    }
}

TEST_CASE("whole-network fusion: names, counts, closeness") {
  auto net = build_network<float>(tiny_cfg(), 13);
  // push running stats away from init so fusion is non-trivial
  Rng rng(17);
  for (auto& e : net.params(ParamView::unfused)) {
    if (e.name.find("running_mean") != std::string::npos)
      for (auto& v : e.var.value().v) v = float(rng.next_uniform(-0.3, 0.3));
    if (e.name.find("running_var") != std::string::npos)
      for (auto& v : e.var.value().v) v = float(rng.next_uniform(0.5, 1.5));
  }
  const int64_t unfused_count = count_params(net, ParamView::unfused);
  net.fuse();
  const int64_t fused_count = count_params(net, ParamView::fused);
  CHECK(fused_count <= unfused_count);

  // non-ACB parameter names survive fusion unchanged
  std::set<std::string> before, after;
  for (auto& e : net.params(ParamView::unfused)) before.insert(e.name);
  for (auto& e : net.params(ParamView::fused)) after.insert(e.name);
  auto is_acb_internal = [](const std::string& n) {
    for (const char* tag : {".sq.", ".hor.", ".ver.", ".bn.", ".fused."})
      if (n.find(tag) != std::string::npos) return true;
    return false;
  };
  for (const auto& n : before)
    if (!is_acb_internal(n)) CHECK(after.count(n) == 1);
  for (const auto& n : after)
    if (!is_acb_internal(n)) CHECK(before.count(n) == 1);

  // fused inference stays close to unfused inference
  Var<float> x(rand_input({2, 3, 16, 16}, rng));
  auto a = net.forward_logits(x, false, false).value();
  auto b = net.forward_logits(x, false, true).value();
  int agree = 0, total = 0;
  double max_dev = 0;
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t y = 0; y < 16; ++y)
      for (int64_t xx = 0; xx < 16; ++xx) {
        int64_t ba = 0, bb = 0;
        for (int64_t c = 0; c < 6; ++c) {
          if (a.at(n, c, y, xx) > a.at(n, ba, y, xx)) ba = c;
          if (b.at(n, c, y, xx) > b.at(n, bb, y, xx)) bb = c;
          max_dev = std::max(max_dev,
                             double(std::fabs(a.at(n, c, y, xx) -
                                              b.at(n, c, y, xx))));
        }
        agree += ba == bb;
        ++total;
      }
  CHECK(max_dev < 1e-4);
  CHECK(double(agree) / double(total) >= 0.99);
}

TEST_CASE("variant parameter-count ordering") {
  std::map<Variant, int64_t> count;
  for (auto v : {Variant::macu, Variant::mu, Variant::unet, Variant::unet_h,
                 Variant::unet_v, Variant::acu}) {
    auto net = build_network<float>(tiny_cfg(v), 1);
    count[v] = count_params(net, ParamView::unfused);
  }
  CHECK(count[Variant::unet] < count[Variant::unet_h]);
  CHECK(count[Variant::unet_h] == count[Variant::unet_v]);
  CHECK(count[Variant::unet_h] < count[Variant::acu]);
  CHECK(count[Variant::mu] < count[Variant::macu]);
}

TEST_CASE("analytic MAC table: every conv block is exactly 9/15") {
  for (auto v : {Variant::macu, Variant::acu}) {
    auto cfg = tiny_cfg(v);
    auto entries = mac_report(cfg, 32, 32);
    int blocks = 0;
    for (auto& e : entries)
      if (e.conv_block) {
        ++blocks;
        CHECK(e.fused * 15 == e.unfused * 9);
      }
    CHECK(blocks > 0);
    auto t = mac_totals(entries);
    CHECK(t.block_fused * 15 == t.block_unfused * 9);
    CHECK(t.fused < t.unfused);
  }
}

TEST_CASE("mac accounting is invariant under fusion-free variants") {
  // a square-only block costs 9 both ways
  auto entries = mac_report(tiny_cfg(Variant::unet), 32, 32);
  for (auto& e : entries)
    if (e.conv_block) CHECK(e.fused == e.unfused);
}
