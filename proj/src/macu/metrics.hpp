#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "macu/common.hpp"
#include "macu/tensor.hpp"

namespace macu {

// Pooled pixel counts M[true][pred]; metrics are computed once over the
// accumulated whole-set matrix.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<uint64_t> m;  // classes*classes
  uint64_t total = 0;

  explicit ConfusionMatrix(int K) : classes(K), m(size_t(K) * K, 0) {
    if (K < 1) throw ValueError("confusion matrix needs at least one class");
  }

  uint64_t& at(int t, int p) { return m[size_t(t) * classes + p]; }
  uint64_t at(int t, int p) const { return m[size_t(t) * classes + p]; }

  void accumulate(const ClassMask& pred, const ClassMask& truth) {
    if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w)
      throw ShapeError("confusion: prediction and truth shapes differ");
    for (size_t i = 0; i < pred.v.size(); ++i) {
      const int32_t t = truth.v[i], p = pred.v[i];
      if (t < 0 || t >= classes || p < 0 || p >= classes)
        throw ValueError("confusion: class index outside 0.." +
                         std::to_string(classes - 1));
      ++at(t, p);
      ++total;
    }
  }

  void merge(const ConfusionMatrix& o) {
    if (o.classes != classes) throw ShapeError("confusion: class count mismatch");
    for (size_t i = 0; i < m.size(); ++i) m[i] += o.m[i];
    total += o.total;
  }
};

struct ClassMetrics {
  int cls = 0;
  uint64_t row = 0, col = 0, diag = 0;
  double recall = 0, precision = 0, iou = 0, f1 = 0;
};

struct Metrics {
  double oa = 0, aa = 0, kappa = 0, miou = 0, fwiou = 0, f1 = 0;
  std::vector<ClassMetrics> per_class;
};

inline Metrics compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total == 0) throw ValueError("compute_metrics: empty confusion matrix");
  const int K = cm.classes;
  const double total = double(cm.total);
  Metrics out;
  double trace = 0, pe = 0;
  double aa_sum = 0, miou_sum = 0, f1_sum = 0;
  int aa_n = 0, iou_n = 0;
  for (int c = 0; c < K; ++c) {
    ClassMetrics pc;
    pc.cls = c;
    pc.diag = cm.at(c, c);
    for (int j = 0; j < K; ++j) {
      pc.row += cm.at(c, j);
      pc.col += cm.at(j, c);
    }
    trace += double(pc.diag);
    pe += (double(pc.row) / total) * (double(pc.col) / total);
    if (pc.row > 0) {
      pc.recall = double(pc.diag) / double(pc.row);
      aa_sum += pc.recall;
      ++aa_n;
    }
    if (pc.col > 0) pc.precision = double(pc.diag) / double(pc.col);
    const uint64_t unions = pc.row + pc.col - pc.diag;
    if (pc.row + pc.col > 0) {
      pc.iou = unions > 0 ? double(pc.diag) / double(unions) : 0.0;
      pc.f1 = 2.0 * double(pc.diag) / double(pc.row + pc.col);
      miou_sum += pc.iou;
      f1_sum += pc.f1;
      ++iou_n;
    }
    out.fwiou += (double(pc.row) / total) * pc.iou;
    out.per_class.push_back(pc);
  }
  out.oa = trace / total;
  out.aa = aa_n > 0 ? aa_sum / aa_n : 0.0;
  out.kappa = (1.0 - pe) != 0.0 ? (out.oa - pe) / (1.0 - pe) : 1.0;
  out.miou = iou_n > 0 ? miou_sum / iou_n : 0.0;
  out.f1 = iou_n > 0 ? f1_sum / iou_n : 0.0;
  return out;
}

// "oa=..." .. "f1=..." summary lines followed by a per-class CSV, all with 6
// decimal places and LF endings.
inline std::string format_report(const Metrics& m) {
  char buf[128];
  std::string out;
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.6f\n", key, v);
    out += buf;
  };
  line("oa", m.oa);
  line("aa", m.aa);
  line("kappa", m.kappa);
  line("miou", m.miou);
  line("fwiou", m.fwiou);
  line("f1", m.f1);
  out += "class,recall,precision,iou,f1\n";
  for (const auto& pc : m.per_class) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f\n", pc.cls, pc.recall,
                  pc.precision, pc.iou, pc.f1);
    out += buf;
  }
  return out;
}

}  // namespace macu
