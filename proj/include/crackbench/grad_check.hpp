#pragma once

#include "crackbench/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace crackbench {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::ptrdiff_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  /// Entries left out because the stencil straddles a ReLU / max-pool kink.
  std::size_t kinks_skipped = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient is
/// ~0 from reporting finite-difference round-off as a large relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckOptions {
  double eps = 1e-5;
  double floor = 1e-8;
  /// When > 0, an entry whose error exceeds this is re-differenced at eps/2. If
  /// the two estimates disagree by more than the same amount the function is not
  /// smooth inside the stencil and the entry is counted in kinks_skipped instead.
  double kink_threshold = 0.0;
};

/// Compares reverse-mode gradients of a scalar objective against central finite
/// differences over every entry of every learnable parameter. Frozen parameters
/// are skipped (their relative error is 0 by definition).
///
/// `objective` is called as objective(Graph<double>&) and must return a scalar
/// Var built from graph.param(...) bindings of the parameters in `params`.
template <typename Objective>
GradCheckReport grad_check(Objective&& objective, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& opts) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g;
    Var<double> out = objective(g);
    if (out.value().size() != 1)
      throw ShapeError("grad_check: objective must be scalar, got " + out.shape().str());
    g.backward(out);
  }
  auto eval = [&]() {
    Graph<double> g;
    return objective(g).value().item();
  };
  auto central = [&](double& x, double h) {
    const double orig = x;
    x = orig + h;
    const double fp = eval();
    x = orig - h;
    const double fm = eval();
    x = orig;
    return (fp - fm) / (2 * h);
  };

  GradCheckReport report;
  for (auto* p : params) {
    if (!p->learnable) continue;
    for (std::ptrdiff_t i = 0; i < p->value.size(); ++i) {
      const double numeric = central(p->value[i], opts.eps);
      const double analytic = p->grad[i];
      const double err = relative_error(analytic, numeric, opts.floor);
      if (opts.kink_threshold > 0 && err > opts.kink_threshold) {
        const double half = central(p->value[i], opts.eps / 2);
        if (relative_error(half, numeric, opts.floor) > opts.kink_threshold) {
          ++report.kinks_skipped;
          continue;
        }
      }
      ++report.entries_checked;
      if (report.worst_index < 0 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p->name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

template <typename Objective>
GradCheckReport grad_check(Objective&& objective, const std::vector<Parameter<double>*>& params, double eps = 1e-5,
                           double floor = 1e-8) {
  return grad_check(std::forward<Objective>(objective), params, GradCheckOptions{eps, floor, 0.0});
}

}  // namespace crackbench
