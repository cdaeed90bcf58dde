#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "macu/data.hpp"
#include "macu/metrics.hpp"
#include "macu/network.hpp"

namespace macu {

// Mean over all pixels of -log softmax(logits)[label], in the log-sum-exp
// form. Gradient w.r.t. logits is (softmax - onehot) / pixel_count.
template <typename T>
Var<T> cross_entropy_loss(const Var<T>& logits, const ClassMask& mask) {
  const Shape ls = logits.shape();
  if (mask.n != ls.n || mask.h != ls.h || mask.w != ls.w)
    throw ShapeError("cross_entropy: mask [" + std::to_string(mask.n) + "," +
                     std::to_string(mask.h) + "," + std::to_string(mask.w) +
                     "] does not match logits " + ls.str());
  const int64_t K = ls.c, HW = ls.h * ls.w, P = ls.n * HW;
  for (int32_t v : mask.v)
    if (v < 0 || v >= K)
      throw ValueError("cross_entropy: label " + std::to_string(v) +
                       " outside 0.." + std::to_string(K - 1));

  const T* lv = logits.value().data();
  double acc = 0;
  for (int64_t n = 0; n < ls.n; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      const int64_t base = n * K * HW + i;
      T mx = lv[base];
      for (int64_t c = 1; c < K; ++c) mx = std::max(mx, lv[base + c * HW]);
      double se = 0;
      for (int64_t c = 0; c < K; ++c) se += std::exp(double(lv[base + c * HW] - mx));
      const int64_t lbl = mask.v[n * HW + i];
      acc += double(mx) + std::log(se) - double(lv[base + lbl * HW]);
    }
  Tensor<T> out({1, 1, 1, 1});
  out.v[0] = T(acc / double(P));

  auto mask_copy = std::make_shared<ClassMask>(mask);
  auto bwd = [ls, K, HW, P, mask_copy](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const T g = self.grad.v[0] / T(P);
    const T* lv = xn.value.data();
    T* dx = xn.ensure_grad().data();
    for (int64_t n = 0; n < ls.n; ++n)
      for (int64_t i = 0; i < HW; ++i) {
        const int64_t base = n * K * HW + i;
        T mx = lv[base];
        for (int64_t c = 1; c < K; ++c) mx = std::max(mx, lv[base + c * HW]);
        double se = 0;
        for (int64_t c = 0; c < K; ++c)
          se += std::exp(double(lv[base + c * HW] - mx));
        const int64_t lbl = mask_copy->v[n * HW + i];
        for (int64_t c = 0; c < K; ++c) {
          T sm = T(std::exp(double(lv[base + c * HW] - mx)) / se);
          dx[base + c * HW] += g * (sm - (c == lbl ? T(1) : T(0)));
        }
      }
  };
  return make_op_node(std::move(out), {logits}, std::move(bwd));
}

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;  // parallel to the trainable entries
  int64_t t = 0;
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);

  template <typename Entries>
  void init(const Entries& entries) {
    m.clear();
    v.clear();
    for (const auto& e : entries) {
      m.push_back(Tensor<T>::zeros(e.var.shape()));
      v.push_back(Tensor<T>::zeros(e.var.shape()));
    }
    t = 0;
  }
};

// One Adam update over the trainable entries; gradients left empty count as
// zero. Non-finite gradients abort the step.
template <typename T>
void adam_step(std::vector<ParamEntry<T>>& entries, AdamState<T>& st, T lr_t) {
  if (st.m.size() != entries.size())
    throw ConfigError("adam_step: state not initialized for these parameters");
  ++st.t;
  const T bc1 = T(1) - T(std::pow(double(st.beta1), double(st.t)));
  const T bc2 = T(1) - T(std::pow(double(st.beta2), double(st.t)));
  for (size_t k = 0; k < entries.size(); ++k) {
    auto node = entries[k].var.node();
    T* theta = node->value.data();
    const size_t n = node->value.v.size();
    const bool has_grad = !node->grad.empty();
    const T* g = has_grad ? node->grad.data() : nullptr;
    T* mm = st.m[k].data();
    T* vv = st.v[k].data();
    for (size_t i = 0; i < n; ++i) {
      const T gi = g ? g[i] : T(0);
      if (!std::isfinite(double(gi)))
        throw NumericError("non-finite gradient in " + entries[k].name);
      mm[i] = st.beta1 * mm[i] + (T(1) - st.beta1) * gi;
      vv[i] = st.beta2 * vv[i] + (T(1) - st.beta2) * gi * gi;
      const T mhat = mm[i] / bc1;
      const T vhat = vv[i] / bc2;
      theta[i] -= lr_t * mhat / (T(std::sqrt(double(vhat))) + st.eps);
    }
  }
}

inline double cosine_lr(double lr0, int64_t t, int64_t total, double lr_min = 0.0) {
  if (total < 1) throw ValueError("cosine_lr: total steps must be >= 1");
  if (t < 0 || t > total) throw ValueError("cosine_lr: step outside [0, total]");
  return lr_min + 0.5 * (lr0 - lr_min) *
                      (1.0 + std::cos(M_PI * double(t) / double(total)));
}

// In-memory training sample.
template <typename T>
struct Sample {
  Tensor<T> image;  // [1,C,H,W]
  ClassMask mask;   // [1,H,W]
  std::string stem;
};

template <typename T>
Sample<T> to_sample(const TilePair& t, int classes) {
  Sample<T> s;
  s.image = image_to_tensor<T>(t.image);
  s.mask = mask_from_pgm(t.mask);
  validate_mask(s.mask, classes);
  s.stem = t.stem;
  return s;
}

namespace detail {

template <typename T>
Tensor<T> stack_images(const std::vector<Sample<T>>& samples,
                       const std::vector<size_t>& idx) {
  const Shape s0 = samples[idx[0]].image.shape;
  Tensor<T> out({int64_t(idx.size()), s0.c, s0.h, s0.w});
  const int64_t per = s0.c * s0.h * s0.w;
  for (size_t b = 0; b < idx.size(); ++b) {
    const auto& img = samples[idx[b]].image;
    if (!(img.shape == s0))
      throw ShapeError("batch images disagree in shape: " + img.shape.str() +
                       " vs " + s0.str());
    std::copy(img.v.begin(), img.v.end(), out.v.begin() + int64_t(b) * per);
  }
  return out;
}

template <typename T>
ClassMask stack_masks(const std::vector<Sample<T>>& samples,
                      const std::vector<size_t>& idx) {
  const auto& m0 = samples[idx[0]].mask;
  ClassMask out;
  out.n = int64_t(idx.size());
  out.h = m0.h;
  out.w = m0.w;
  out.v.resize(size_t(out.n) * m0.h * m0.w);
  for (size_t b = 0; b < idx.size(); ++b) {
    const auto& m = samples[idx[b]].mask;
    std::copy(m.v.begin(), m.v.end(), out.v.begin() + int64_t(b) * m0.h * m0.w);
  }
  return out;
}

}  // namespace detail

// Per-pixel argmax classes of the (optionally fused) forward pass.
template <typename T>
ClassMask predict_mask(Network<T>& net, const Tensor<T>& images, bool fused = false) {
  Var<T> x(images, false);
  Var<T> logits = net.forward_logits(x, false, fused);
  const Shape ls = logits.shape();
  ClassMask out;
  out.n = ls.n;
  out.h = ls.h;
  out.w = ls.w;
  out.v.resize(size_t(ls.n) * ls.h * ls.w);
  const T* lv = logits.value().data();
  const int64_t HW = ls.h * ls.w;
  for (int64_t n = 0; n < ls.n; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      const int64_t base = n * ls.c * HW + i;
      int32_t best = 0;
      T bv = lv[base];
      for (int64_t c = 1; c < ls.c; ++c)
        if (lv[base + c * HW] > bv) {
          bv = lv[base + c * HW];
          best = int32_t(c);
        }
      out.v[n * HW + i] = best;
    }
  return out;
}

template <typename T>
ConfusionMatrix evaluate_network(Network<T>& net, const std::vector<Sample<T>>& set,
                                 int batch_size, bool fused = false) {
  ConfusionMatrix cm(net.cfg.classes);
  for (size_t at = 0; at < set.size(); at += size_t(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = at; i < std::min(set.size(), at + size_t(batch_size)); ++i)
      idx.push_back(i);
    Tensor<T> batch = detail::stack_images(set, idx);
    ClassMask pred = predict_mask(net, batch, fused);
    ClassMask truth = detail::stack_masks(set, idx);
    cm.accumulate(pred, truth);
  }
  return cm;
}

struct FitOptions {
  int epochs = 50;
  int batch_size = 8;
  uint64_t seed = 0;
  double lr0 = 3e-4;
  double lr_min = 0.0;
  int64_t max_steps = -1;  // optional cap; < 0 means run all epochs
};

struct FitLogRow {
  int epoch = 0;        // 1-based
  int64_t step = 0;     // global step count after this epoch
  double lr = 0;        // last learning rate used in this epoch
  double train_loss = 0;  // mean batch loss over the epoch
  double val_miou = 0;
};

inline std::string fit_log_csv(const std::vector<FitLogRow>& rows) {
  char buf[160];
  std::string out = "epoch,step,lr,train_loss,val_miou\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.8f,%.8f,%.6f\n", r.epoch,
                  (long long)r.step, r.lr, r.train_loss, r.val_miou);
    out += buf;
  }
  return out;
}

// Seeded-shuffle mini-batch training with Adam and per-step cosine annealing
// over the planned total step count. BN runs in training mode; the val set is
// evaluated in inference mode after every epoch.
template <typename T>
std::vector<FitLogRow> fit(Network<T>& net, const std::vector<Sample<T>>& train_set,
                           const std::vector<Sample<T>>& val_set,
                           const FitOptions& opt) {
  if (net.fused_only) throw ConfigError("cannot train a fused-only network");
  if (train_set.empty()) throw ValueError("fit: empty training set");
  if (opt.batch_size < 1) throw ValueError("fit: batch_size must be positive");
  if (opt.epochs < 0) throw ValueError("fit: negative epoch count");

  const int64_t batches_per_epoch =
      int64_t((train_set.size() + size_t(opt.batch_size) - 1) / size_t(opt.batch_size));
  int64_t total_steps = int64_t(opt.epochs) * batches_per_epoch;
  if (opt.max_steps >= 0) total_steps = std::min(total_steps, opt.max_steps);

  std::vector<FitLogRow> log;
  if (total_steps == 0) return log;

  auto entries = net.params(ParamView::unfused);
  std::vector<ParamEntry<T>> trainable;
  for (auto& e : entries)
    if (e.trainable) trainable.push_back(e);
  AdamState<T> adam;
  adam.init(trainable);

  Rng rng(opt.seed);
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  int64_t step = 0;
  for (int epoch = 1; epoch <= opt.epochs && step < total_steps; ++epoch) {
    for (size_t i = order.size() - 1; i >= 1; --i)
      std::swap(order[i], order[rng.next_below(i + 1)]);

    double loss_sum = 0;
    int64_t loss_n = 0;
    double last_lr = 0;
    for (size_t at = 0; at < order.size() && step < total_steps;
         at += size_t(opt.batch_size)) {
      std::vector<size_t> idx(order.begin() + at,
                              order.begin() +
                                  std::min(order.size(), at + size_t(opt.batch_size)));
      Tensor<T> batch = detail::stack_images(train_set, idx);
      ClassMask truth = detail::stack_masks(train_set, idx);

      Var<T> x(std::move(batch), false);
      Var<T> logits = net.forward_logits(x, true, false);
      Var<T> loss = cross_entropy_loss(logits, truth);
      const double lv = double(loss.value().v[0]);
      if (!std::isfinite(lv))
        throw NumericError("non-finite loss at step " + std::to_string(step));

      for (auto& e : trainable) e.var.zero_grad();
      backward(loss);
      const double lr = cosine_lr(opt.lr0, step, total_steps, opt.lr_min);
      try {
        adam_step(trainable, adam, T(lr));
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " +
                           std::to_string(step));
      }
      last_lr = lr;
      loss_sum += lv;
      ++loss_n;
      ++step;
    }

    FitLogRow row;
    row.epoch = epoch;
    row.step = step;
    row.lr = last_lr;
    row.train_loss = loss_n > 0 ? loss_sum / double(loss_n) : 0.0;
    if (!val_set.empty()) {
      ConfusionMatrix cm = evaluate_network(net, val_set, opt.batch_size);
      row.val_miou = compute_metrics(cm).miou;
    }
    log.push_back(row);
  }
  return log;
}

}  // namespace macu
