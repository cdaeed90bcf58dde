#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "macu/ops.hpp"

namespace macu {

// Which asymmetric branches a block carries. The full block uses all three;
// ablation variants drop the 1x3 / 3x1 branches.
struct BranchMask {
  bool sq = true;
  bool hor = false;
  bool ver = false;

  int count() const { return int(sq) + int(hor) + int(ver); }
};

inline const BranchMask kMaskFull{true, true, true};
inline const BranchMask kMaskSquare{true, false, false};

// Asymmetric convolution block: parallel 3x3 / 1x3 / 3x1 convolutions summed,
// then one shared batch norm and ReLU. Branch convolutions are bias-free; the
// BN shift plays that role.
template <typename T>
struct AcbParams {
  ConvSpec<T> k_sq;   // 3x3, padding (1,1)
  ConvSpec<T> k_hor;  // 1x3, padding (0,1)
  ConvSpec<T> k_ver;  // 3x1, padding (1,0)
  BnParams<T> bn;
  BranchMask mask = kMaskFull;

  int64_t in_channels() const { return k_sq.in_channels(); }
  int64_t out_channels() const { return k_sq.out_channels(); }
};

// Inference-time replacement for an AcbParams: a single biased 3x3 conv
// followed by a per-channel affine (the folded BN) and ReLU.
template <typename T>
struct FusedConv {
  ConvSpec<T> spec;  // 3x3, padding 1, with bias
  Var<T> affine_scale, affine_shift;  // [1,C,1,1]
};

namespace detail {

template <typename T>
Var<T> acb_preact(const Var<T>& x, const AcbParams<T>& p) {
  std::optional<Var<T>> acc;
  auto take = [&](const ConvSpec<T>& spec) {
    Var<T> y = conv2d(x, spec);
    acc = acc ? add(*acc, y) : y;
  };
  if (p.mask.sq) take(p.k_sq);
  if (p.mask.hor) take(p.k_hor);
  if (p.mask.ver) take(p.k_ver);
  if (!acc) throw ShapeError("acb_forward: block has no branches");
  return *acc;
}

}  // namespace detail

template <typename T>
Var<T> acb_forward(const Var<T>& x, AcbParams<T>& p, bool training) {
  Var<T> sum = detail::acb_preact(x, p);
  return relu(batchnorm2d(sum, p.bn, training));
}

// Folds the branch kernels into one 3x3 kernel (1x3 into the middle row, 3x1
// into the middle column) and the batch-norm statistics into a per-channel
// affine. relu(affine(conv(x))) then matches inference-mode acb_forward.
template <typename T>
FusedConv<T> acb_fuse(const AcbParams<T>& p) {
  const int64_t Co = p.out_channels(), Ci = p.in_channels();
  const T* rm = p.bn.running_mean.value().data();
  const T* rv = p.bn.running_var.value().data();
  const T* gam = p.bn.gamma.value().data();
  const T* bet = p.bn.beta.value().data();
  for (int64_t c = 0; c < Co; ++c) {
    if (!std::isfinite(double(rm[c])) || !std::isfinite(double(rv[c])))
      throw NumericError("acb_fuse: non-finite running statistics");
    if (double(rv[c]) + double(p.bn.eps) <= 0.0)
      throw NumericError("acb_fuse: running_var + eps not positive");
  }

  Tensor<T> kernel({Co, Ci, 3, 3});
  Tensor<T> bias({1, Co, 1, 1});
  bool any_bias = false;
  auto add_sq = [&](const ConvSpec<T>& s) {
    const T* w = s.weight.value().data();
    for (size_t i = 0; i < kernel.v.size(); ++i) kernel.v[i] += w[i];
  };
  auto add_hor = [&](const ConvSpec<T>& s) {
    const T* w = s.weight.value().data();
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t ci = 0; ci < Ci; ++ci)
        for (int64_t kj = 0; kj < 3; ++kj)
          kernel.v[((co * Ci + ci) * 3 + 1) * 3 + kj] += w[(co * Ci + ci) * 3 + kj];
  };
  auto add_ver = [&](const ConvSpec<T>& s) {
    const T* w = s.weight.value().data();
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t ci = 0; ci < Ci; ++ci)
        for (int64_t ki = 0; ki < 3; ++ki)
          kernel.v[((co * Ci + ci) * 3 + ki) * 3 + 1] += w[(co * Ci + ci) * 3 + ki];
  };
  auto add_bias = [&](const ConvSpec<T>& s) {
    if (!s.bias.defined()) return;
    any_bias = true;
    const T* b = s.bias.value().data();
    for (int64_t co = 0; co < Co; ++co) bias.v[co] += b[co];
  };
  if (p.mask.sq) { add_sq(p.k_sq); add_bias(p.k_sq); }
  if (p.mask.hor) { add_hor(p.k_hor); add_bias(p.k_hor); }
  if (p.mask.ver) { add_ver(p.k_ver); add_bias(p.k_ver); }

  Tensor<T> scale({1, Co, 1, 1}), shift({1, Co, 1, 1});
  for (int64_t c = 0; c < Co; ++c) {
    scale.v[c] = gam[c] / std::sqrt(rv[c] + p.bn.eps);
    shift.v[c] = bet[c] - scale.v[c] * rm[c];
  }

  FusedConv<T> out;
  out.spec.weight = Var<T>(std::move(kernel), true);
  if (any_bias) out.spec.bias = Var<T>(std::move(bias), true);
  out.spec.stride = 1;
  out.spec.pad_h = 1;
  out.spec.pad_w = 1;
  out.affine_scale = Var<T>(std::move(scale), true);
  out.affine_shift = Var<T>(std::move(shift), true);
  return out;
}

template <typename T>
Var<T> fused_forward(const Var<T>& x, const FusedConv<T>& fc) {
  return relu(channel_affine(conv2d(x, fc.spec), fc.affine_scale, fc.affine_shift));
}

// Channel attention block. A 1x1 conv first maps the concatenated features to
// the target width D, then per-channel weights in (0,1) are built from pooled
// statistics through a bottleneck of ratio r and multiplied back on.
template <typename T>
struct CabParams {
  ConvSpec<T> reduce;                      // cat_channels -> D
  ConvSpec<T> compress_avg, compress_max;  // D -> D/r
  ConvSpec<T> restore_avg, restore_max;    // D/r -> D
  int r = 16;

  int64_t in_channels() const { return reduce.in_channels(); }
  int64_t out_channels() const { return reduce.out_channels(); }
};

template <typename T>
struct CabTrace {
  Var<T> fprime;   // reduced features [N,D,H,W]
  Var<T> weights;  // attention [N,D,1,1]
  Var<T> out;      // weights * fprime
};

template <typename T>
CabTrace<T> cab_forward_traced(const Var<T>& f_cat, const CabParams<T>& p) {
  CabTrace<T> t;
  t.fprime = conv2d(f_cat, p.reduce);
  Var<T> a = conv2d(relu(conv2d(global_pool(t.fprime, PoolMode::avg), p.compress_avg)),
                    p.restore_avg);
  Var<T> m = conv2d(relu(conv2d(global_pool(t.fprime, PoolMode::max), p.compress_max)),
                    p.restore_max);
  t.weights = sigmoid(add(a, m));
  t.out = mul(t.fprime, t.weights);
  return t;
}

template <typename T>
Var<T> cab_forward(const Var<T>& f_cat, const CabParams<T>& p) {
  return cab_forward_traced(f_cat, p).out;
}

// One decoder aggregation node. Level i receives the same-level encoder map
// directly, every shallower encoder map through max-pool + conv block, and
// every deeper decoder map through transposed conv + conv block; the N
// branches are concatenated and passed through channel attention.
template <typename T>
struct DecoderNode {
  int i = 0;  // 1-based level, 1 <= i < N
  int levels = 0;

  struct DownBranch {      // from encoder level k < i
    AcbParams<T> block;    // C_k -> C_i after pooling by 2^(i-k)
  };
  struct UpBranch {        // from decoder level k > i
    ConvSpec<T> up;        // transposed conv D_k -> C_i, kernel = stride = 2^(k-i)
    AcbParams<T> block;    // C_i -> C_i
  };
  std::vector<DownBranch> down;  // k = 1 .. i-1 in order
  std::vector<UpBranch> up;      // k = i+1 .. N in order
  CabParams<T> cab;

  // populated by fuse(); used when running a re-parameterized network
  std::vector<FusedConv<T>> down_fused, up_fused;
};

// enc holds X_En^1..X_En^N (index 0 = level 1); dec_deeper holds
// X_De^{i+1}..X_De^N in that order. For i = N callers simply reuse enc[N-1];
// this function covers i < N.
template <typename T>
Var<T> aggregate_node(DecoderNode<T>& node, const std::vector<Var<T>>& enc,
                      const std::vector<Var<T>>& dec_deeper, bool training,
                      bool use_fused = false) {
  const int i = node.i, N = node.levels;
  if (i < 1 || i >= N) throw ShapeError("aggregate_node: level out of range");
  if (int64_t(enc.size()) < i)
    throw ShapeError("aggregate_node: missing encoder levels");
  if (int64_t(dec_deeper.size()) != N - i)
    throw ShapeError("aggregate_node: expected " + std::to_string(N - i) +
                     " deeper decoder maps, got " + std::to_string(dec_deeper.size()));
  if (use_fused && node.down_fused.size() != node.down.size())
    throw ShapeError("aggregate_node: fused parameters not prepared");

  const Shape ref = enc[i - 1].shape();
  std::vector<Var<T>> branches;
  branches.reserve(N);
  for (int k = 1; k < i; ++k) {
    int pool = 1 << (i - k);
    Var<T> y = maxpool2d(enc[k - 1], pool, pool);
    y = use_fused ? fused_forward(y, node.down_fused[k - 1])
                  : acb_forward(y, node.down[k - 1].block, training);
    branches.push_back(y);
  }
  branches.push_back(enc[i - 1]);
  for (int k = i + 1; k <= N; ++k) {
    auto& br = node.up[k - i - 1];
    Var<T> y = conv_transpose2d(dec_deeper[k - i - 1], br.up);
    y = use_fused ? fused_forward(y, node.up_fused[k - i - 1])
                  : acb_forward(y, br.block, training);
    branches.push_back(y);
  }
  for (const auto& b : branches) {
    const Shape s = b.shape();
    if (s.h != ref.h || s.w != ref.w)
      throw ShapeError("aggregate_node: branch resolution " + s.str() +
                       " does not match level " + std::to_string(i));
  }
  return cab_forward(concat_channels(branches), node.cab);
}

}  // namespace macu
