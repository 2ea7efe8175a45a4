#pragma once

// Central finite-difference gradient oracle. Independent of the autodiff
// backward path: it only re-runs forward evaluations under perturbed
// parameter values.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "semtwin/autodiff.hpp"

namespace semtwin::test {

struct GradCheckReport {
  int checked = 0;
  int ok_tight = 0;   // rel err <= tight tolerance
  int ok_loose = 0;   // rel err <= loose tolerance
  double worst = 0.0;
  std::string worst_where;

  bool passes(double tight_frac = 0.95) const {
    return checked > 0 && ok_loose == checked &&
           ok_tight >= static_cast<int>(std::ceil(tight_frac * checked));
  }
};

// loss_fn must be a deterministic function of the parameter values (fix all
// RNG seeds inside). Gradients are expected to be already populated by one
// backward() pass before calling.
inline GradCheckReport grad_check(
    const std::vector<ad::Tensor>& params, const std::vector<std::string>& names,
    const std::function<double()>& loss_fn, double step = 1e-5, double tight = 1e-4,
    double loose = 1e-3) {
  GradCheckReport rep;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = const_cast<ad::Tensor&>(params[pi]);
    const auto& g = p.grad();
    for (int i = 0; i < p.size(); ++i) {
      const double keep = p.values()[i];
      p.values()[i] = keep + step;
      const double up = loss_fn();
      p.values()[i] = keep - step;
      const double down = loss_fn();
      p.values()[i] = keep;
      const double fd = (up - down) / (2.0 * step);
      const double adg = g[i];
      const double rel = std::abs(adg - fd) / std::max({std::abs(adg), std::abs(fd), 1e-6});
      ++rep.checked;
      if (rel <= tight) ++rep.ok_tight;
      if (rel <= loose) ++rep.ok_loose;
      if (rel > rep.worst) {
        rep.worst = rel;
        rep.worst_where = (pi < names.size() ? names[pi] : "param") + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

}  // namespace semtwin::test
