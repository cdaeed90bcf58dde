#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "macu/blocks.hpp"

namespace macu {

enum class Variant { macu, unet, unet_h, unet_v, acu, mu };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::macu: return "macu";
    case Variant::unet: return "unet";
    case Variant::unet_h: return "unet_h";
    case Variant::unet_v: return "unet_v";
    case Variant::acu: return "acu";
    case Variant::mu: return "mu";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::macu, Variant::unet, Variant::unet_h,
                    Variant::unet_v, Variant::acu, Variant::mu})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown model variant '" + s + "'");
}

struct NetworkConfig {
  int levels = 5;
  int base_width = 16;
  int classes = 6;
  int in_channels = 3;
  int cab_ratio = 16;
  Variant variant = Variant::macu;

  // multi-scale skip aggregation with channel attention vs plain U-Net skips
  bool multiscale() const { return variant == Variant::macu || variant == Variant::mu; }

  BranchMask mask() const {
    switch (variant) {
      case Variant::macu:
      case Variant::acu: return kMaskFull;
      case Variant::unet_h: return BranchMask{true, true, false};
      case Variant::unet_v: return BranchMask{true, false, true};
      case Variant::unet:
      case Variant::mu: return kMaskSquare;
    }
    return kMaskSquare;
  }

  // encoder width at level i (1-based): base_width * 2^(i-1)
  int64_t enc_width(int i) const { return int64_t(base_width) << (i - 1); }
  // decoder width: 2*C_i below the bottom, C_N at the bottom
  int64_t dec_width(int i) const {
    return i < levels ? 2 * enc_width(i) : enc_width(i);
  }

  void validate() const {
    if (levels < 2) throw ConfigError("levels must be at least 2");
    if (levels > 12) throw ConfigError("levels out of range");
    if (base_width < 1) throw ConfigError("base_width must be positive");
    if (classes < 2) throw ConfigError("classes must be at least 2");
    if (in_channels < 1) throw ConfigError("in_channels must be positive");
    if (cab_ratio < 1) throw ConfigError("cab_ratio must be positive");
    if (multiscale())
      for (int i = 1; i < levels; ++i)
        if (dec_width(i) % cab_ratio != 0)
          throw ConfigError("decoder width " + std::to_string(dec_width(i)) +
                            " at level " + std::to_string(i) +
                            " is not divisible by cab_ratio " +
                            std::to_string(cab_ratio));
  }
};

// One conv block (full or masked ACB) plus its optional re-parameterized form.
template <typename T>
struct ConvBlock {
  AcbParams<T> acb;
  std::optional<FusedConv<T>> fused;
};

// Plain-skip decoder level: upsample, concat with the encoder map, two blocks.
template <typename T>
struct PlainDecoder {
  ConvSpec<T> up;  // transposed conv D_{i+1} -> C_i, kernel 2 stride 2
  ConvBlock<T> b1, b2;
};

template <typename T>
struct ParamEntry {
  std::string name;
  Var<T> var;
  bool trainable = true;  // running statistics are carried but not counted
};

enum class ParamView { unfused, fused };

template <typename T>
struct Network {
  NetworkConfig cfg;
  bool fused_ready = false;  // fused parameters populated
  bool fused_only = false;   // no trainable parameters (loaded from a fused file)

  std::vector<ConvBlock<T>> enc;        // 2 per level: [(L-1)*2 + j]
  std::vector<DecoderNode<T>> ms_dec;   // levels N-1 .. 1, in that order
  std::vector<PlainDecoder<T>> pl_dec;  // levels N-1 .. 1, in that order
  ConvSpec<T> head;                     // 1x1, D_1 -> K, with bias

  ParamView default_view() const {
    return fused_only ? ParamView::fused : ParamView::unfused;
  }

  Var<T> block_forward(ConvBlock<T>& blk, const Var<T>& x, bool training,
                       bool use_fused) {
    if (use_fused) {
      if (!blk.fused) throw ConfigError("fused forward requested before fuse()");
      return fused_forward(x, *blk.fused);
    }
    return acb_forward(x, blk.acb, training);
  }

  void fuse() {
    if (fused_only) {
      fused_ready = true;
      return;
    }
    for (auto& blk : enc) blk.fused = acb_fuse(blk.acb);
    for (auto& node : ms_dec) {
      node.down_fused.clear();
      node.up_fused.clear();
      for (auto& d : node.down) node.down_fused.push_back(acb_fuse(d.block));
      for (auto& u : node.up) node.up_fused.push_back(acb_fuse(u.block));
    }
    for (auto& pd : pl_dec) {
      pd.b1.fused = acb_fuse(pd.b1.acb);
      pd.b2.fused = acb_fuse(pd.b2.acb);
    }
    fused_ready = true;
  }

  Var<T> forward_logits(const Var<T>& x, bool training, bool use_fused = false) {
    if (use_fused && training)
      throw ConfigError("fused evaluation is inference-only");
    if (!use_fused && fused_only)
      throw ConfigError("network holds only fused parameters");
    if (use_fused && !fused_ready) fuse();
    const Shape xs = x.shape();
    if (xs.c != cfg.in_channels)
      throw ShapeError("forward: input has " + std::to_string(xs.c) +
                       " channels, network expects " +
                       std::to_string(cfg.in_channels));
    const int64_t div = int64_t(1) << (cfg.levels - 1);
    if (xs.h % div != 0 || xs.w % div != 0)
      throw ShapeError("forward: spatial dims of " + xs.str() +
                       " must be divisible by " + std::to_string(div));

    const int N = cfg.levels;
    std::vector<Var<T>> encf;
    encf.reserve(N);
    Var<T> e = x;
    for (int L = 1; L <= N; ++L) {
      e = block_forward(enc[(L - 1) * 2], e, training, use_fused);
      e = block_forward(enc[(L - 1) * 2 + 1], e, training, use_fused);
      encf.push_back(e);
      if (L < N) e = maxpool2d(e, 2, 2);
    }

    Var<T> out;
    if (cfg.multiscale()) {
      std::vector<Var<T>> dec(N + 1);  // 1-based by level
      dec[N] = encf[N - 1];
      for (auto& node : ms_dec) {
        const int i = node.i;
        std::vector<Var<T>> deeper(dec.begin() + i + 1, dec.begin() + N + 1);
        dec[i] = aggregate_node(node, encf, deeper, training, use_fused);
      }
      out = dec[1];
    } else {
      Var<T> d = encf[N - 1];
      for (auto& pd : pl_dec) {
        const int i = int(&pd - pl_dec.data());  // 0 => level N-1
        const int level = N - 1 - i;
        Var<T> u = conv_transpose2d(d, pd.up);
        d = concat_channels<T>({encf[level - 1], u});
        d = block_forward(pd.b1, d, training, use_fused);
        d = block_forward(pd.b2, d, training, use_fused);
      }
      out = d;
    }
    return conv2d(out, head);
  }

  Var<T> probabilities(const Var<T>& x, bool use_fused = false) {
    return softmax_channels(forward_logits(x, false, use_fused));
  }

  // Stable, ordered listing of every parameter tensor. The fused view lists
  // the re-parameterized block tensors instead of branch kernels + BN.
  std::vector<ParamEntry<T>> params(ParamView view) {
    if (view == ParamView::fused && !fused_ready)
      throw ConfigError("fused parameters not populated; call fuse() first");
    if (view == ParamView::unfused && fused_only)
      throw ConfigError("network holds only fused parameters");
    std::vector<ParamEntry<T>> out;
    auto emit = [&](const std::string& name, const Var<T>& v, bool trainable) {
      out.push_back({name, v, trainable});
    };
    auto emit_block = [&](const std::string& prefix, ConvBlock<T>& blk) {
      if (view == ParamView::unfused) {
        if (blk.acb.mask.sq) emit(prefix + ".sq.w", blk.acb.k_sq.weight, true);
        if (blk.acb.mask.hor) emit(prefix + ".hor.w", blk.acb.k_hor.weight, true);
        if (blk.acb.mask.ver) emit(prefix + ".ver.w", blk.acb.k_ver.weight, true);
        emit(prefix + ".bn.gamma", blk.acb.bn.gamma, true);
        emit(prefix + ".bn.beta", blk.acb.bn.beta, true);
        emit(prefix + ".bn.running_mean", blk.acb.bn.running_mean, false);
        emit(prefix + ".bn.running_var", blk.acb.bn.running_var, false);
      } else {
        FusedConv<T>& f = *blk.fused;
        emit(prefix + ".fused.w", f.spec.weight, true);
        if (f.spec.bias.defined()) emit(prefix + ".fused.b", f.spec.bias, true);
        emit(prefix + ".fused.scale", f.affine_scale, true);
        emit(prefix + ".fused.shift", f.affine_shift, true);
      }
    };
    auto emit_fused_direct = [&](const std::string& prefix, FusedConv<T>& f) {
      emit(prefix + ".fused.w", f.spec.weight, true);
      if (f.spec.bias.defined()) emit(prefix + ".fused.b", f.spec.bias, true);
      emit(prefix + ".fused.scale", f.affine_scale, true);
      emit(prefix + ".fused.shift", f.affine_shift, true);
    };
    auto emit_acb = [&](const std::string& prefix, AcbParams<T>& p) {
      if (p.mask.sq) emit(prefix + ".sq.w", p.k_sq.weight, true);
      if (p.mask.hor) emit(prefix + ".hor.w", p.k_hor.weight, true);
      if (p.mask.ver) emit(prefix + ".ver.w", p.k_ver.weight, true);
      emit(prefix + ".bn.gamma", p.bn.gamma, true);
      emit(prefix + ".bn.beta", p.bn.beta, true);
      emit(prefix + ".bn.running_mean", p.bn.running_mean, false);
      emit(prefix + ".bn.running_var", p.bn.running_var, false);
    };
    auto emit_cab = [&](const std::string& prefix, CabParams<T>& c) {
      emit(prefix + ".reduce.w", c.reduce.weight, true);
      emit(prefix + ".reduce.b", c.reduce.bias, true);
      emit(prefix + ".compress_avg.w", c.compress_avg.weight, true);
      emit(prefix + ".compress_avg.b", c.compress_avg.bias, true);
      emit(prefix + ".compress_max.w", c.compress_max.weight, true);
      emit(prefix + ".compress_max.b", c.compress_max.bias, true);
      emit(prefix + ".restore_avg.w", c.restore_avg.weight, true);
      emit(prefix + ".restore_avg.b", c.restore_avg.bias, true);
      emit(prefix + ".restore_max.w", c.restore_max.weight, true);
      emit(prefix + ".restore_max.b", c.restore_max.bias, true);
    };

    const int N = cfg.levels;
    for (int L = 1; L <= N; ++L)
      for (int j = 1; j <= 2; ++j)
        emit_block("enc" + std::to_string(L) + ".b" + std::to_string(j),
                   enc[(L - 1) * 2 + (j - 1)]);
    if (cfg.multiscale()) {
      for (auto& node : ms_dec) {
        const std::string dp = "dec" + std::to_string(node.i);
        for (int k = 1; k < node.i; ++k) {
          const std::string bp = dp + ".from_enc" + std::to_string(k);
          if (view == ParamView::unfused)
            emit_acb(bp, node.down[k - 1].block);
          else
            emit_fused_direct(bp, node.down_fused[k - 1]);
        }
        for (int k = node.i + 1; k <= N; ++k) {
          const std::string bp = dp + ".from_dec" + std::to_string(k);
          emit(bp + ".up.w", node.up[k - node.i - 1].up.weight, true);
          if (view == ParamView::unfused)
            emit_acb(bp, node.up[k - node.i - 1].block);
          else
            emit_fused_direct(bp, node.up_fused[k - node.i - 1]);
        }
        emit_cab(dp + ".cab", node.cab);
      }
    } else {
      for (auto& pd : pl_dec) {
        const int i = cfg.levels - 1 - int(&pd - pl_dec.data());
        const std::string dp = "dec" + std::to_string(i);
        emit(dp + ".up.w", pd.up.weight, true);
        emit_block(dp + ".b1", pd.b1);
        emit_block(dp + ".b2", pd.b2);
      }
    }
    emit("head.w", head.weight, true);
    emit("head.b", head.bias, true);
    return out;
  }

  std::vector<ParamEntry<T>> params() { return params(default_view()); }
};

struct ModuleCount {
  std::string module;
  int64_t count = 0;
};

template <typename T>
int64_t count_params(Network<T>& net, ParamView view,
                     std::vector<ModuleCount>* table = nullptr) {
  int64_t total = 0;
  std::vector<ModuleCount> rows;
  auto module_of = [](const std::string& name) {
    size_t first = name.find('.');
    if (first == std::string::npos) return name;
    size_t second = name.find('.', first + 1);
    if (second == std::string::npos) return name.substr(0, first);
    return name.substr(0, second);
  };
  for (auto& e : net.params(view)) {
    if (!e.trainable) continue;
    const int64_t n = e.var.value().shape.numel();
    total += n;
    const std::string mod = module_of(e.name);
    if (!rows.empty() && rows.back().module == mod)
      rows.back().count += n;
    else
      rows.push_back({mod, n});
  }
  if (table) *table = std::move(rows);
  return total;
}

template <typename T>
int64_t count_params(Network<T>& net) {
  return count_params(net, net.default_view());
}

namespace detail {

template <typename T>
class NetworkBuilder {
 public:
  NetworkBuilder(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg), rng_(seed) {}

  Network<T> build() {
    cfg_.validate();
    Network<T> net;
    net.cfg = cfg_;
    const int N = cfg_.levels;
    const BranchMask m = cfg_.mask();

    int64_t prev = cfg_.in_channels;
    for (int L = 1; L <= N; ++L) {
      net.enc.push_back(make_block(prev, cfg_.enc_width(L), m));
      net.enc.push_back(make_block(cfg_.enc_width(L), cfg_.enc_width(L), m));
      prev = cfg_.enc_width(L);
    }

    if (cfg_.multiscale()) {
      for (int i = N - 1; i >= 1; --i) {
        DecoderNode<T> node;
        node.i = i;
        node.levels = N;
        for (int k = 1; k < i; ++k) {
          typename DecoderNode<T>::DownBranch db;
          db.block = make_block(cfg_.enc_width(k), cfg_.enc_width(i), m).acb;
          node.down.push_back(std::move(db));
        }
        for (int k = i + 1; k <= N; ++k) {
          typename DecoderNode<T>::UpBranch br;
          int scale = 1 << (k - i);
          br.up = make_conv(cfg_.dec_width(k), cfg_.enc_width(i), scale, scale,
                            scale, 0, 0, false);
          br.block = make_block(cfg_.enc_width(i), cfg_.enc_width(i), m).acb;
          node.up.push_back(std::move(br));
        }
        node.cab = make_cab(N * cfg_.enc_width(i), cfg_.dec_width(i));
        net.ms_dec.push_back(std::move(node));
      }
    } else {
      for (int i = N - 1; i >= 1; --i) {
        PlainDecoder<T> pd;
        pd.up = make_conv(cfg_.dec_width(i + 1), cfg_.enc_width(i), 2, 2, 2, 0,
                          0, false);
        pd.b1 = make_block(2 * cfg_.enc_width(i), cfg_.dec_width(i), m);
        pd.b2 = make_block(cfg_.dec_width(i), cfg_.dec_width(i), m);
        net.pl_dec.push_back(std::move(pd));
      }
    }

    net.head = make_conv(cfg_.dec_width(1), cfg_.classes, 1, 1, 1, 0, 0, true);
    return net;
  }

 private:
  Var<T> kaiming_weight(int64_t Co, int64_t Ci, int64_t kh, int64_t kw) {
    Tensor<T> w({Co, Ci, kh, kw});
    const double bound = std::sqrt(6.0 / double(Ci * kh * kw));
    for (auto& v : w.v) v = T(rng_.next_uniform(-bound, bound));
    return Var<T>(std::move(w), true);
  }

  ConvSpec<T> make_conv(int64_t Ci, int64_t Co, int64_t kh, int64_t kw,
                        int stride, int ph, int pw, bool with_bias) {
    ConvSpec<T> s;
    s.weight = kaiming_weight(Co, Ci, kh, kw);
    if (with_bias) s.bias = Var<T>(Tensor<T>::zeros({1, Co, 1, 1}), true);
    s.stride = stride;
    s.pad_h = ph;
    s.pad_w = pw;
    return s;
  }

  BnParams<T> make_bn(int64_t C) {
    BnParams<T> bn;
    bn.gamma = Var<T>(Tensor<T>::full({1, C, 1, 1}, T(1)), true);
    bn.beta = Var<T>(Tensor<T>::zeros({1, C, 1, 1}), true);
    bn.running_mean = Var<T>(Tensor<T>::zeros({1, C, 1, 1}), false);
    bn.running_var = Var<T>(Tensor<T>::full({1, C, 1, 1}, T(1)), false);
    return bn;
  }

  ConvBlock<T> make_block(int64_t Ci, int64_t Co, BranchMask m) {
    ConvBlock<T> blk;
    blk.acb.mask = m;
    if (m.sq) blk.acb.k_sq = make_conv(Ci, Co, 3, 3, 1, 1, 1, false);
    if (m.hor) blk.acb.k_hor = make_conv(Ci, Co, 1, 3, 1, 0, 1, false);
    if (m.ver) blk.acb.k_ver = make_conv(Ci, Co, 3, 1, 1, 1, 0, false);
    blk.acb.bn = make_bn(Co);
    return blk;
  }

  CabParams<T> make_cab(int64_t cat_channels, int64_t D) {
    CabParams<T> c;
    c.r = cfg_.cab_ratio;
    const int64_t mid = D / cfg_.cab_ratio;
    c.reduce = make_conv(cat_channels, D, 1, 1, 1, 0, 0, true);
    c.compress_avg = make_conv(D, mid, 1, 1, 1, 0, 0, true);
    c.compress_max = make_conv(D, mid, 1, 1, 1, 0, 0, true);
    c.restore_avg = make_conv(mid, D, 1, 1, 1, 0, 0, true);
    c.restore_max = make_conv(mid, D, 1, 1, 1, 0, 0, true);
    return c;
  }

  NetworkConfig cfg_;
  Rng rng_;
};

}  // namespace detail

template <typename T>
Network<T> build_network(const NetworkConfig& cfg, uint64_t seed) {
  return detail::NetworkBuilder<T>(cfg, seed).build();
}

// Analytic multiply-accumulate counts for the convolutions of one forward
// pass, per named module, for the unfused and the re-parameterized path.
struct MacEntry {
  std::string name;
  int64_t unfused = 0;
  int64_t fused = 0;
  bool conv_block = false;  // true for ACB-style blocks (fusion applies)
};

inline std::vector<MacEntry> mac_report(const NetworkConfig& cfg, int64_t H,
                                        int64_t W) {
  cfg.validate();
  const int64_t div = int64_t(1) << (cfg.levels - 1);
  if (H % div != 0 || W % div != 0 || H <= 0 || W <= 0)
    throw ShapeError("mac_report: spatial dims must be divisible by " +
                     std::to_string(div));
  const BranchMask m = cfg.mask();
  const int64_t fp_unfused = 9 * m.sq + 3 * m.hor + 3 * m.ver;
  std::vector<MacEntry> out;
  auto res_h = [&](int level) { return H >> (level - 1); };
  auto res_w = [&](int level) { return W >> (level - 1); };
  auto block_entry = [&](const std::string& name, int64_t Ci, int64_t Co,
                         int level) {
    const int64_t hw = res_h(level) * res_w(level);
    out.push_back({name, fp_unfused * Ci * Co * hw, 9 * Ci * Co * hw, true});
  };
  auto plain_entry = [&](const std::string& name, int64_t macs) {
    out.push_back({name, macs, macs, false});
  };

  const int N = cfg.levels;
  int64_t prev = cfg.in_channels;
  for (int L = 1; L <= N; ++L) {
    block_entry("enc" + std::to_string(L) + ".b1", prev, cfg.enc_width(L), L);
    block_entry("enc" + std::to_string(L) + ".b2", cfg.enc_width(L),
                cfg.enc_width(L), L);
    prev = cfg.enc_width(L);
  }
  if (cfg.multiscale()) {
    for (int i = N - 1; i >= 1; --i) {
      const std::string dp = "dec" + std::to_string(i);
      for (int k = 1; k < i; ++k)
        block_entry(dp + ".from_enc" + std::to_string(k), cfg.enc_width(k),
                    cfg.enc_width(i), i);
      for (int k = i + 1; k <= N; ++k) {
        const std::string bp = dp + ".from_dec" + std::to_string(k);
        const int64_t kk = int64_t(1) << (k - i);
        plain_entry(bp + ".up", kk * kk * cfg.dec_width(k) * cfg.enc_width(i) *
                                    res_h(k) * res_w(k));
        block_entry(bp, cfg.enc_width(i), cfg.enc_width(i), i);
      }
      const int64_t D = cfg.dec_width(i), mid = D / cfg.cab_ratio;
      const int64_t hw = res_h(i) * res_w(i);
      plain_entry(dp + ".cab", N * cfg.enc_width(i) * D * hw +
                                   2 * (D * mid + mid * D));
    }
  } else {
    for (int i = N - 1; i >= 1; --i) {
      const std::string dp = "dec" + std::to_string(i);
      plain_entry(dp + ".up", 4 * cfg.dec_width(i + 1) * cfg.enc_width(i) *
                                  res_h(i + 1) * res_w(i + 1));
      block_entry(dp + ".b1", 2 * cfg.enc_width(i), cfg.dec_width(i), i);
      block_entry(dp + ".b2", cfg.dec_width(i), cfg.dec_width(i), i);
    }
  }
  plain_entry("head", cfg.dec_width(1) * cfg.classes * H * W);
  return out;
}

struct MacTotals {
  int64_t unfused = 0, fused = 0;            // whole network
  int64_t block_unfused = 0, block_fused = 0;  // conv blocks only
};

inline MacTotals mac_totals(const std::vector<MacEntry>& entries) {
  MacTotals t;
  for (const auto& e : entries) {
    t.unfused += e.unfused;
    t.fused += e.fused;
    if (e.conv_block) {
      t.block_unfused += e.unfused;
      t.block_fused += e.fused;
    }
  }
  return t;
}

}  // namespace macu
