#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "macu/autograd.hpp"

namespace macu {

// Central-difference verification of reverse-mode gradients, evaluated in
// f64. `f` rebuilds the scalar loss from the current leaf values on every
// call. Returns the max over all coordinates of
//   |analytic - (f(x+h*e) - f(x-h*e)) / 2h| / max(1, |analytic|),
// skipping coordinates where both terms are below 1e-12.
inline double grad_check_multi(const std::function<Var<double>()>& f,
                               const std::vector<Var<double>>& leaves,
                               double h = 1e-5) {
  for (const auto& v : leaves) v.zero_grad();
  Var<double> loss = f();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& v : leaves) {
    if (v.node()->grad.v.empty())
      analytic.emplace_back(v.value().v.size(), 0.0);
    else
      analytic.push_back(v.node()->grad.v);
  }

  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = leaves[li].node()->value.v;
    for (size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double fp = f().value().v[0];
      vals[i] = keep - h;
      const double fm = f().value().v[0];
      vals[i] = keep;
      const double central = (fp - fm) / (2.0 * h);
      const double a = analytic[li][i];
      if (std::fabs(a) < 1e-12 && std::fabs(central) < 1e-12) continue;
      const double err = std::fabs(a - central) / std::max(1.0, std::fabs(a));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline double grad_check(const std::function<Var<double>()>& f,
                         const Var<double>& x, double h = 1e-5) {
  return grad_check_multi(f, {x}, h);
}

}  // namespace macu
