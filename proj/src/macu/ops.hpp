#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "macu/autograd.hpp"
#include "macu/gemm.hpp"
#include "macu/tensor.hpp"

namespace macu {

// Convolution parameters: weight [out,in,kh,kw], optional bias carried as
// [1,out,1,1]. Used for both conv2d and conv_transpose2d (for the latter the
// in dimension matches the input feature map).
template <typename T>
struct ConvSpec {
  Var<T> weight;
  Var<T> bias;  // undefined => bias-free
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;

  int64_t out_channels() const { return weight.shape().n; }
  int64_t in_channels() const { return weight.shape().c; }
  int64_t kh() const { return weight.shape().h; }
  int64_t kw() const { return weight.shape().w; }
};

template <typename T>
struct BnParams {
  Var<T> gamma, beta;               // [1,C,1,1], trainable
  Var<T> running_mean, running_var; // [1,C,1,1], updated in training forward
  T eps = T(1e-5);
  T momentum = T(0.1);

  int64_t channels() const { return gamma.shape().c; }
};

enum class PoolMode { avg, max };

namespace detail {

template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t ph, int64_t pw, int64_t Ho, int64_t Wo,
            T* col) {
  for (int64_t c = 0; c < C; ++c) {
    const T* xc = x + c * H * W;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          int64_t ih = oh * stride + ki - ph;
          T* dst = row + oh * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = xc + ih * W;
          for (int64_t ow = 0; ow < Wo; ++ow) {
            int64_t iw = ow * stride + kj - pw;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh,
                int64_t kw, int64_t stride, int64_t ph, int64_t pw, int64_t Ho,
                int64_t Wo, T* x) {
  for (int64_t c = 0; c < C; ++c) {
    T* xc = x + c * H * W;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          int64_t ih = oh * stride + ki - ph;
          if (ih < 0 || ih >= H) continue;
          const T* src = row + oh * Wo;
          T* dst = xc + ih * W;
          for (int64_t ow = 0; ow < Wo; ++ow) {
            int64_t iw = ow * stride + kj - pw;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_input(const Var<T>& x, const ConvSpec<T>& spec, const char* op) {
  const Shape& ws = spec.weight.shape();
  if (x.shape().c != ws.c)
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.shape().c) +
                     " channels, kernel expects " + std::to_string(ws.c));
  if (spec.bias.defined() && spec.bias.shape().c != ws.n)
    throw ShapeError(std::string(op) + ": bias length " +
                     std::to_string(spec.bias.shape().c) + " != out channels " +
                     std::to_string(ws.n));
  if (spec.stride < 1) throw ShapeError(std::string(op) + ": stride must be positive");
  if (spec.pad_h < 0 || spec.pad_w < 0)
    throw ShapeError(std::string(op) + ": negative padding");
}

}  // namespace detail

// Standard cross-correlation with symmetric zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const ConvSpec<T>& spec) {
  detail::check_conv_input(x, spec, "conv2d");
  const Shape xs = x.shape();
  const int64_t Cout = spec.out_channels(), Cin = spec.in_channels();
  const int64_t kh = spec.kh(), kw = spec.kw();
  const int64_t s = spec.stride, ph = spec.pad_h, pw = spec.pad_w;
  const int64_t Ho = (xs.h + 2 * ph - kh) / s + 1;
  const int64_t Wo = (xs.w + 2 * pw - kw) / s + 1;
  if (xs.h + 2 * ph < kh || xs.w + 2 * pw < kw || Ho < 1 || Wo < 1)
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " does not fit input " + xs.str() + " with padding (" +
                     std::to_string(ph) + "," + std::to_string(pw) + ")");

  const int64_t K = Cin * kh * kw, HWo = Ho * Wo;
  Tensor<T> out({xs.n, Cout, Ho, Wo});
  std::vector<T> col(static_cast<size_t>(K * HWo));
  const T* bias = spec.bias.defined() ? spec.bias.value().data() : nullptr;
  for (int64_t n = 0; n < xs.n; ++n) {
    detail::im2col(x.value().data() + n * Cin * xs.h * xs.w, Cin, xs.h, xs.w, kh,
                   kw, s, ph, pw, Ho, Wo, col.data());
    T* on = out.data() + n * Cout * HWo;
    if (bias)
      for (int64_t co = 0; co < Cout; ++co)
        std::fill(on + co * HWo, on + (co + 1) * HWo, bias[co]);
    gemm_nn(Cout, K, HWo, spec.weight.value().data(), col.data(), on);
  }

  auto bwd = [xs, Cout, Cin, kh, kw, s, ph, pw, Ho, Wo, K, HWo](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    Node<T>* bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    std::vector<T> col(static_cast<size_t>(K * HWo));
    std::vector<T> dcol;
    if (xn.requires_grad) dcol.resize(static_cast<size_t>(K * HWo));
    for (int64_t n = 0; n < xs.n; ++n) {
      const T* dy = self.grad.data() + n * Cout * HWo;
      if (wn.requires_grad || xn.requires_grad)
        detail::im2col(xn.value.data() + n * Cin * xs.h * xs.w, Cin, xs.h, xs.w,
                       kh, kw, s, ph, pw, Ho, Wo, col.data());
      if (wn.requires_grad)
        gemm_nt(Cout, HWo, K, dy, col.data(), wn.ensure_grad().data());
      if (xn.requires_grad) {
        std::fill(dcol.begin(), dcol.end(), T(0));
        gemm_tn(Cout, K, HWo, wn.value.data(), dy, dcol.data());
        detail::col2im_add(dcol.data(), Cin, xs.h, xs.w, kh, kw, s, ph, pw, Ho,
                           Wo, xn.ensure_grad().data() + n * Cin * xs.h * xs.w);
      }
      if (bn && bn->requires_grad) {
        T* db = bn->ensure_grad().data();
        for (int64_t co = 0; co < Cout; ++co) {
          T acc = T(0);
          const T* row = dy + co * HWo;
          for (int64_t i = 0; i < HWo; ++i) acc += row[i];
          db[co] += acc;
        }
      }
    }
  };
  std::vector<Var<T>> parents{x, spec.weight};
  if (spec.bias.defined()) parents.push_back(spec.bias);
  return make_op_node(std::move(out), std::move(parents), std::move(bwd));
}

// Transposed convolution (gradient of conv2d w.r.t. its input). With
// kernel == stride and padding 0 this upsamples H x W to sH x sW.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const ConvSpec<T>& spec) {
  detail::check_conv_input(x, spec, "conv_transpose2d");
  const Shape xs = x.shape();
  const int64_t Cout = spec.out_channels(), Cin = spec.in_channels();
  const int64_t kh = spec.kh(), kw = spec.kw();
  const int64_t s = spec.stride, ph = spec.pad_h, pw = spec.pad_w;
  const int64_t Ho = (xs.h - 1) * s + kh - 2 * ph;
  const int64_t Wo = (xs.w - 1) * s + kw - 2 * pw;
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv_transpose2d: empty output for input " + xs.str());

  const int64_t CoKK = Cout * kh * kw, HWi = xs.h * xs.w;
  // weight rearranged to [Cout*kh*kw, Cin] so the scatter source is one GEMM
  std::vector<T> wmat(static_cast<size_t>(CoKK * Cin));
  {
    const T* w = spec.weight.value().data();
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t ci = 0; ci < Cin; ++ci)
        for (int64_t ki = 0; ki < kh; ++ki)
          for (int64_t kj = 0; kj < kw; ++kj)
            wmat[(((co * kh + ki) * kw + kj)) * Cin + ci] =
                w[((co * Cin + ci) * kh + ki) * kw + kj];
  }

  Tensor<T> out({xs.n, Cout, Ho, Wo});
  std::vector<T> col(static_cast<size_t>(CoKK * HWi));
  const T* bias = spec.bias.defined() ? spec.bias.value().data() : nullptr;
  for (int64_t n = 0; n < xs.n; ++n) {
    std::fill(col.begin(), col.end(), T(0));
    gemm_nn(CoKK, Cin, HWi, wmat.data(), x.value().data() + n * Cin * HWi,
            col.data());
    T* on = out.data() + n * Cout * Ho * Wo;
    if (bias)
      for (int64_t co = 0; co < Cout; ++co)
        std::fill(on + co * Ho * Wo, on + (co + 1) * Ho * Wo, bias[co]);
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t ki = 0; ki < kh; ++ki)
        for (int64_t kj = 0; kj < kw; ++kj) {
          const T* src = col.data() + ((co * kh + ki) * kw + kj) * HWi;
          for (int64_t i = 0; i < xs.h; ++i) {
            int64_t oh = i * s + ki - ph;
            if (oh < 0 || oh >= Ho) continue;
            T* dst = on + (co * Ho + oh) * Wo;
            for (int64_t j = 0; j < xs.w; ++j) {
              int64_t ow = j * s + kj - pw;
              if (ow >= 0 && ow < Wo) dst[ow] += src[i * xs.w + j];
            }
          }
        }
  }

  auto bwd = [xs, Cout, Cin, kh, kw, s, ph, pw, Ho, Wo, CoKK, HWi,
              wmat](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    Node<T>* bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    std::vector<T> dcol(static_cast<size_t>(CoKK * HWi));
    std::vector<T> dwmat;
    if (wn.requires_grad) dwmat.assign(static_cast<size_t>(CoKK * Cin), T(0));
    for (int64_t n = 0; n < xs.n; ++n) {
      const T* dy = self.grad.data() + n * Cout * Ho * Wo;
      // gather the scattered positions back into column form
      for (int64_t co = 0; co < Cout; ++co)
        for (int64_t ki = 0; ki < kh; ++ki)
          for (int64_t kj = 0; kj < kw; ++kj) {
            T* dst = dcol.data() + ((co * kh + ki) * kw + kj) * HWi;
            for (int64_t i = 0; i < xs.h; ++i) {
              int64_t oh = i * s + ki - ph;
              const T* src = (oh >= 0 && oh < Ho) ? dy + (co * Ho + oh) * Wo : nullptr;
              for (int64_t j = 0; j < xs.w; ++j) {
                int64_t ow = j * s + kj - pw;
                dst[i * xs.w + j] =
                    (src && ow >= 0 && ow < Wo) ? src[ow] : T(0);
              }
            }
          }
      if (xn.requires_grad)
        gemm_tn(CoKK, Cin, HWi, wmat.data(), dcol.data(),
                xn.ensure_grad().data() + n * Cin * HWi);
      if (wn.requires_grad)
        gemm_nt(CoKK, HWi, Cin, dcol.data(), xn.value.data() + n * Cin * HWi,
                dwmat.data());
      if (bn && bn->requires_grad) {
        T* db = bn->ensure_grad().data();
        for (int64_t co = 0; co < Cout; ++co) {
          T acc = T(0);
          const T* row = dy + co * Ho * Wo;
          for (int64_t i = 0; i < Ho * Wo; ++i) acc += row[i];
          db[co] += acc;
        }
      }
    }
    if (wn.requires_grad) {
      T* dw = wn.ensure_grad().data();
      for (int64_t co = 0; co < Cout; ++co)
        for (int64_t ci = 0; ci < Cin; ++ci)
          for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj)
              dw[((co * Cin + ci) * kh + ki) * kw + kj] +=
                  dwmat[((co * kh + ki) * kw + kj) * Cin + ci];
    }
  };
  std::vector<Var<T>> parents{x, spec.weight};
  if (spec.bias.defined()) parents.push_back(spec.bias);
  return make_op_node(std::move(out), std::move(parents), std::move(bwd));
}

// Window maximum. Ties route the gradient to the first maximum in row-major
// window order, keeping backward deterministic.
template <typename T>
Var<T> maxpool2d(const Var<T>& x, int k, int s) {
  const Shape xs = x.shape();
  if (k < 1 || s < 1) throw ShapeError("maxpool2d: window and stride must be positive");
  if (xs.h < k || xs.w < k || (xs.h - k) % s != 0 || (xs.w - k) % s != 0)
    throw ShapeError("maxpool2d: window " + std::to_string(k) + " stride " +
                     std::to_string(s) + " does not tile input " + xs.str());
  const int64_t Ho = (xs.h - k) / s + 1, Wo = (xs.w - k) / s + 1;
  Tensor<T> out({xs.n, xs.c, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.v.size());
  const T* xv = x.value().data();
  size_t o = 0;
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t c = 0; c < xs.c; ++c) {
      const int64_t plane = (n * xs.c + c) * xs.h * xs.w;
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow, ++o) {
          int64_t best = plane + (oh * s) * xs.w + ow * s;
          T bv = xv[best];
          for (int64_t ki = 0; ki < k; ++ki)
            for (int64_t kj = 0; kj < k; ++kj) {
              int64_t idx = plane + (oh * s + ki) * xs.w + (ow * s + kj);
              if (xv[idx] > bv) {
                bv = xv[idx];
                best = idx;
              }
            }
          out.v[o] = bv;
          (*argmax)[o] = best;
        }
    }

  auto bwd = [argmax](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T* dx = xn.ensure_grad().data();
    for (size_t i = 0; i < self.grad.v.size(); ++i)
      dx[(*argmax)[i]] += self.grad.v[i];
  };
  return make_op_node(std::move(out), {x}, std::move(bwd));
}

// Spatial squeeze to [N,C,1,1]; avg spreads gradient uniformly, max routes it
// to the first maximum.
template <typename T>
Var<T> global_pool(const Var<T>& x, PoolMode mode) {
  const Shape xs = x.shape();
  if (xs.h < 1 || xs.w < 1) throw ShapeError("global_pool: empty spatial dims");
  const int64_t HW = xs.h * xs.w;
  Tensor<T> out({xs.n, xs.c, 1, 1});
  auto argmax = std::make_shared<std::vector<int64_t>>();
  if (mode == PoolMode::max) argmax->resize(out.v.size());
  const T* xv = x.value().data();
  for (int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* plane = xv + nc * HW;
    if (mode == PoolMode::avg) {
      T acc = T(0);
      for (int64_t i = 0; i < HW; ++i) acc += plane[i];
      out.v[nc] = acc / T(HW);
    } else {
      int64_t best = 0;
      for (int64_t i = 1; i < HW; ++i)
        if (plane[i] > plane[best]) best = i;
      out.v[nc] = plane[best];
      (*argmax)[nc] = nc * HW + best;
    }
  }

  auto bwd = [mode, HW, argmax](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T* dx = xn.ensure_grad().data();
    if (mode == PoolMode::avg) {
      for (size_t nc = 0; nc < self.grad.v.size(); ++nc) {
        T g = self.grad.v[nc] / T(HW);
        T* plane = dx + nc * HW;
        for (int64_t i = 0; i < HW; ++i) plane[i] += g;
      }
    } else {
      for (size_t nc = 0; nc < self.grad.v.size(); ++nc)
        dx[(*argmax)[nc]] += self.grad.v[nc];
    }
  };
  return make_op_node(std::move(out), {x}, std::move(bwd));
}

// Batch normalization over N*H*W per channel. Training mode normalizes with
// the batch mean and population variance and updates the running statistics
// in place; inference mode applies the stored statistics.
template <typename T>
Var<T> batchnorm2d(const Var<T>& x, BnParams<T>& bn, bool training) {
  const Shape xs = x.shape();
  const int64_t C = bn.channels();
  if (xs.c != C)
    throw ShapeError("batchnorm2d: input channels " + std::to_string(xs.c) +
                     " != parameter channels " + std::to_string(C));
  const int64_t HW = xs.h * xs.w, m = xs.n * HW;

  std::vector<T> mean(C), var(C);
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      T acc = T(0);
      for (int64_t n = 0; n < xs.n; ++n) {
        const T* plane = x.value().data() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) acc += plane[i];
      }
      mean[c] = acc / T(m);
      T sq = T(0);
      for (int64_t n = 0; n < xs.n; ++n) {
        const T* plane = x.value().data() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          T d = plane[i] - mean[c];
          sq += d * d;
        }
      }
      var[c] = sq / T(m);
    }
    T* rm = bn.running_mean.value().data();
    T* rv = bn.running_var.value().data();
    for (int64_t c = 0; c < C; ++c) {
      rm[c] = (T(1) - bn.momentum) * rm[c] + bn.momentum * mean[c];
      rv[c] = (T(1) - bn.momentum) * rv[c] + bn.momentum * var[c];
    }
  } else {
    std::copy(bn.running_mean.value().v.begin(), bn.running_mean.value().v.end(),
              mean.begin());
    std::copy(bn.running_var.value().v.begin(), bn.running_var.value().v.end(),
              var.begin());
  }

  std::vector<T> invstd(C);
  for (int64_t c = 0; c < C; ++c) invstd[c] = T(1) / std::sqrt(var[c] + bn.eps);

  Tensor<T> out(xs);
  const T* gam = bn.gamma.value().data();
  const T* bet = bn.beta.value().data();
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = x.value().data() + (n * C + c) * HW;
      T* dst = out.data() + (n * C + c) * HW;
      const T a = gam[c] * invstd[c];
      const T b = bet[c] - a * mean[c];
      for (int64_t i = 0; i < HW; ++i) dst[i] = a * src[i] + b;
    }

  auto bwd = [xs, C, HW, m, training, mean, invstd](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& gn = *self.parents[1];
    Node<T>& bn_ = *self.parents[2];
    const T* gam = gn.value.data();
    for (int64_t c = 0; c < C; ++c) {
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (int64_t n = 0; n < xs.n; ++n) {
        const T* dy = self.grad.data() + (n * C + c) * HW;
        const T* xv = xn.value.data() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * (xv[i] - mean[c]) * invstd[c];
        }
      }
      if (gn.requires_grad) gn.ensure_grad().data()[c] += sum_dy_xhat;
      if (bn_.requires_grad) bn_.ensure_grad().data()[c] += sum_dy;
      if (xn.requires_grad) {
        T* dxall = xn.ensure_grad().data();
        const T a = gam[c] * invstd[c];
        for (int64_t n = 0; n < xs.n; ++n) {
          const T* dy = self.grad.data() + (n * C + c) * HW;
          const T* xv = xn.value.data() + (n * C + c) * HW;
          T* dx = dxall + (n * C + c) * HW;
          if (training) {
            for (int64_t i = 0; i < HW; ++i) {
              T xhat = (xv[i] - mean[c]) * invstd[c];
              dx[i] += a * (dy[i] - sum_dy / T(m) - xhat * sum_dy_xhat / T(m));
            }
          } else {
            for (int64_t i = 0; i < HW; ++i) dx[i] += a * dy[i];
          }
        }
      }
    }
  };
  return make_op_node(std::move(out), {x, bn.gamma, bn.beta}, std::move(bwd));
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = xv[i] > T(0) ? xv[i] : T(0);
  auto bwd = [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T* dx = xn.ensure_grad().data();
    const T* xv = xn.value.data();
    for (size_t i = 0; i < self.grad.v.size(); ++i)
      if (xv[i] > T(0)) dx[i] += self.grad.v[i];  // subgradient at 0 is 0
  };
  return make_op_node(std::move(out), {x}, std::move(bwd));
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = T(1) / (T(1) + std::exp(-xv[i]));
  auto bwd = [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T* dx = xn.ensure_grad().data();
    for (size_t i = 0; i < self.grad.v.size(); ++i) {
      T s = self.value.v[i];
      dx[i] += self.grad.v[i] * s * (T(1) - s);
    }
  };
  return make_op_node(std::move(out), {x}, std::move(bwd));
}

namespace detail {

// y may broadcast against x when it is [1,C,1,1] or [N,C,1,1].
template <typename T>
bool broadcast_ok(const Shape& x, const Shape& y) {
  return y.h == 1 && y.w == 1 && y.c == x.c && (y.n == 1 || y.n == x.n);
}

template <typename T>
void reduce_into_broadcast(const Tensor<T>& dy, const Shape& ys, T* out) {
  const int64_t HW = dy.shape.h * dy.shape.w;
  for (int64_t n = 0; n < dy.shape.n; ++n)
    for (int64_t c = 0; c < dy.shape.c; ++c) {
      const T* plane = dy.data() + (n * dy.shape.c + c) * HW;
      T acc = T(0);
      for (int64_t i = 0; i < HW; ++i) acc += plane[i];
      out[(ys.n == 1 ? 0 : n) * ys.c + c] += acc;
    }
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& x, const Var<T>& y) {
  const Shape xs = x.shape(), ys = y.shape();
  const bool bcast = !(xs == ys);
  if (bcast && !detail::broadcast_ok<T>(xs, ys))
    throw ShapeError("add: shapes " + xs.str() + " and " + ys.str() +
                     " are neither equal nor channel-broadcastable");
  Tensor<T> out(xs);
  const T* xv = x.value().data();
  const T* yv = y.value().data();
  if (!bcast) {
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = xv[i] + yv[i];
  } else {
    const int64_t HW = xs.h * xs.w;
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t c = 0; c < xs.c; ++c) {
        const T b = yv[(ys.n == 1 ? 0 : n) * ys.c + c];
        const T* src = xv + (n * xs.c + c) * HW;
        T* dst = out.data() + (n * xs.c + c) * HW;
        for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] + b;
      }
  }
  auto bwd = [bcast, ys](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& yn = *self.parents[1];
    if (xn.requires_grad) {
      T* dx = xn.ensure_grad().data();
      for (size_t i = 0; i < self.grad.v.size(); ++i) dx[i] += self.grad.v[i];
    }
    if (yn.requires_grad) {
      if (!bcast) {
        T* dy = yn.ensure_grad().data();
        for (size_t i = 0; i < self.grad.v.size(); ++i) dy[i] += self.grad.v[i];
      } else {
        detail::reduce_into_broadcast(self.grad, ys, yn.ensure_grad().data());
      }
    }
  };
  return make_op_node(std::move(out), {x, y}, std::move(bwd));
}

template <typename T>
Var<T> mul(const Var<T>& x, const Var<T>& y) {
  const Shape xs = x.shape(), ys = y.shape();
  const bool bcast = !(xs == ys);
  if (bcast && !detail::broadcast_ok<T>(xs, ys))
    throw ShapeError("mul: shapes " + xs.str() + " and " + ys.str() +
                     " are neither equal nor channel-broadcastable");
  Tensor<T> out(xs);
  const T* xv = x.value().data();
  const T* yv = y.value().data();
  if (!bcast) {
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = xv[i] * yv[i];
  } else {
    const int64_t HW = xs.h * xs.w;
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t c = 0; c < xs.c; ++c) {
        const T b = yv[(ys.n == 1 ? 0 : n) * ys.c + c];
        const T* src = xv + (n * xs.c + c) * HW;
        T* dst = out.data() + (n * xs.c + c) * HW;
        for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] * b;
      }
  }
  auto bwd = [bcast, xs, ys](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& yn = *self.parents[1];
    const T* xv = xn.value.data();
    const T* yv = yn.value.data();
    const int64_t HW = xs.h * xs.w;
    if (xn.requires_grad) {
      T* dx = xn.ensure_grad().data();
      if (!bcast) {
        for (size_t i = 0; i < self.grad.v.size(); ++i)
          dx[i] += self.grad.v[i] * yv[i];
      } else {
        for (int64_t n = 0; n < xs.n; ++n)
          for (int64_t c = 0; c < xs.c; ++c) {
            const T b = yv[(ys.n == 1 ? 0 : n) * ys.c + c];
            const T* g = self.grad.data() + (n * xs.c + c) * HW;
            T* d = dx + (n * xs.c + c) * HW;
            for (int64_t i = 0; i < HW; ++i) d[i] += g[i] * b;
          }
      }
    }
    if (yn.requires_grad) {
      T* dy = yn.ensure_grad().data();
      if (!bcast) {
        for (size_t i = 0; i < self.grad.v.size(); ++i)
          dy[i] += self.grad.v[i] * xv[i];
      } else {
        for (int64_t n = 0; n < xs.n; ++n)
          for (int64_t c = 0; c < xs.c; ++c) {
            const T* g = self.grad.data() + (n * xs.c + c) * HW;
            const T* src = xv + (n * xs.c + c) * HW;
            T acc = T(0);
            for (int64_t i = 0; i < HW; ++i) acc += g[i] * src[i];
            dy[(ys.n == 1 ? 0 : n) * ys.c + c] += acc;
          }
      }
    }
  };
  return make_op_node(std::move(out), {x, y}, std::move(bwd));
}

// Channel-dimension concatenation in argument order.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape s0 = parts[0].shape();
  int64_t Ctot = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw ShapeError("concat_channels: mismatched shapes " + s0.str() + " vs " +
                       s.str());
    Ctot += s.c;
  }
  const int64_t HW = s0.h * s0.w;
  Tensor<T> out({s0.n, Ctot, s0.h, s0.w});
  std::vector<int64_t> offsets;  // channel offset per part
  {
    int64_t off = 0;
    for (const auto& p : parts) {
      offsets.push_back(off);
      for (int64_t n = 0; n < s0.n; ++n)
        std::memcpy(out.data() + (n * Ctot + off) * HW,
                    p.value().data() + n * p.shape().c * HW,
                    sizeof(T) * p.shape().c * HW);
      off += p.shape().c;
    }
  }
  auto bwd = [offsets, Ctot, HW, s0](Node<T>& self) {
    for (size_t k = 0; k < self.parents.size(); ++k) {
      Node<T>& pn = *self.parents[k];
      if (!pn.requires_grad) continue;
      const int64_t pc = pn.value.shape.c;
      T* dst = pn.ensure_grad().data();
      for (int64_t n = 0; n < s0.n; ++n) {
        const T* src = self.grad.data() + (n * Ctot + offsets[k]) * HW;
        T* d = dst + n * pc * HW;
        for (int64_t i = 0; i < pc * HW; ++i) d[i] += src[i];
      }
    }
  };
  return make_op_node(std::move(out), parts, std::move(bwd));
}

// Channel slice [c0, c1); the inverse of concat_channels.
template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t c0, int64_t c1) {
  const Shape xs = x.shape();
  if (c0 < 0 || c1 > xs.c || c0 >= c1)
    throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") of " + xs.str());
  const int64_t HW = xs.h * xs.w, Cs = c1 - c0;
  Tensor<T> out({xs.n, Cs, xs.h, xs.w});
  for (int64_t n = 0; n < xs.n; ++n)
    std::memcpy(out.data() + n * Cs * HW, x.value().data() + (n * xs.c + c0) * HW,
                sizeof(T) * Cs * HW);
  auto bwd = [xs, c0, Cs, HW](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T* dx = xn.ensure_grad().data();
    for (int64_t n = 0; n < xs.n; ++n) {
      const T* src = self.grad.data() + n * Cs * HW;
      T* dst = dx + (n * xs.c + c0) * HW;
      for (int64_t i = 0; i < Cs * HW; ++i) dst[i] += src[i];
    }
  };
  return make_op_node(std::move(out), {x}, std::move(bwd));
}

// Per-pixel softmax over channels, max-subtracted for stability.
template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  const Shape xs = x.shape();
  if (xs.c < 1) throw ShapeError("softmax_channels: need at least one channel");
  const int64_t HW = xs.h * xs.w;
  Tensor<T> out(xs);
  const T* xv = x.value().data();
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      const int64_t base = n * xs.c * HW + i;
      T mx = xv[base];
      for (int64_t c = 1; c < xs.c; ++c)
        mx = std::max(mx, xv[base + c * HW]);
      T sum = T(0);
      for (int64_t c = 0; c < xs.c; ++c) {
        T e = std::exp(xv[base + c * HW] - mx);
        out.v[base + c * HW] = e;
        sum += e;
      }
      for (int64_t c = 0; c < xs.c; ++c) out.v[base + c * HW] /= sum;
    }
  auto bwd = [xs, HW](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T* dx = xn.ensure_grad().data();
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t i = 0; i < HW; ++i) {
        const int64_t base = n * xs.c * HW + i;
        T dot = T(0);
        for (int64_t c = 0; c < xs.c; ++c)
          dot += self.value.v[base + c * HW] * self.grad.v[base + c * HW];
        for (int64_t c = 0; c < xs.c; ++c)
          dx[base + c * HW] += self.value.v[base + c * HW] *
                               (self.grad.v[base + c * HW] - dot);
      }
  };
  return make_op_node(std::move(out), {x}, std::move(bwd));
}

// Sum of all elements as a [1,1,1,1] scalar.
template <typename T>
Var<T> sum_all(const Var<T>& x) {
  Tensor<T> out({1, 1, 1, 1});
  T acc = T(0);
  for (T v : x.value().v) acc += v;
  out.v[0] = acc;
  auto bwd = [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T* dx = xn.ensure_grad().data();
    const T g = self.grad.v[0];
    for (size_t i = 0; i < xn.value.v.size(); ++i) dx[i] += g;
  };
  return make_op_node(std::move(out), {x}, std::move(bwd));
}

// Per-channel affine y = scale_c * x + shift_c; the inference-time tail of a
// fused block.
template <typename T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& scale, const Var<T>& shift) {
  const Shape xs = x.shape();
  if (scale.shape().c != xs.c || shift.shape().c != xs.c)
    throw ShapeError("channel_affine: scale/shift channels do not match input " +
                     xs.str());
  const int64_t HW = xs.h * xs.w;
  Tensor<T> out(xs);
  const T* sv = scale.value().data();
  const T* tv = shift.value().data();
  const T* xv = x.value().data();
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t c = 0; c < xs.c; ++c) {
      const T* src = xv + (n * xs.c + c) * HW;
      T* dst = out.data() + (n * xs.c + c) * HW;
      for (int64_t i = 0; i < HW; ++i) dst[i] = sv[c] * src[i] + tv[c];
    }
  auto bwd = [xs, HW](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& sn = *self.parents[1];
    Node<T>& tn = *self.parents[2];
    for (int64_t c = 0; c < xs.c; ++c) {
      T sum_g = T(0), sum_gx = T(0);
      for (int64_t n = 0; n < xs.n; ++n) {
        const T* g = self.grad.data() + (n * xs.c + c) * HW;
        const T* xv = xn.value.data() + (n * xs.c + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          sum_g += g[i];
          sum_gx += g[i] * xv[i];
        }
      }
      if (sn.requires_grad) sn.ensure_grad().data()[c] += sum_gx;
      if (tn.requires_grad) tn.ensure_grad().data()[c] += sum_g;
      if (xn.requires_grad) {
        const T s = sn.value.data()[c];
        T* dx = xn.ensure_grad().data();
        for (int64_t n = 0; n < xs.n; ++n) {
          const T* g = self.grad.data() + (n * xs.c + c) * HW;
          T* d = dx + (n * xs.c + c) * HW;
          for (int64_t i = 0; i < HW; ++i) d[i] += s * g[i];
        }
      }
    }
  };
  return make_op_node(std::move(out), {x, scale, shift}, std::move(bwd));
}

}  // namespace macu
