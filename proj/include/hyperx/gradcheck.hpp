#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hyperx/tensor.hpp"

namespace hyperx {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// 0 checks every coordinate; otherwise this many coordinates per tensor,
  /// sampled without replacement.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Lower bound on the denominator of the relative error, so tensors whose
  /// true gradient is zero are judged on absolute agreement.
  double denominator_floor = 1e-8;
  /// When positive, a coordinate whose central difference at `step` and at
  /// `step / 2` disagree by more than this (absolute, plus the same amount
  /// relative) straddles a kink such as a ReLU crossing and is left out.
  /// Only coordinates that already mismatch the tape are probed. A tensor
  /// with more than half its coordinates left out fails.
  double kink_tolerance = 0.0;
};

struct TensorGradCheck {
  std::string name;
  std::size_t coords = 0;
  std::size_t kinks_skipped = 0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<TensorGradCheck> tensors;
  double max_relative_error = 0.0;
  bool non_finite = false;
  bool too_many_kinks = false;
  bool passed = false;
};

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` must rebuild the graph from the current values of `inputs` on every
/// call (it is evaluated once with recording and twice per checked
/// coordinate without). The error for each tensor is
/// ‖g_tape − g_fd‖₂ / max(‖g_tape‖₂, ‖g_fd‖₂, floor) over its checked
/// coordinates; the report fails if any tensor exceeds the tolerance or a
/// non-finite value appears.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  const GradCheckOptions& opt = {}, std::vector<std::string> names = {}) {
  GradCheckReport report;
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = f();
  backward(loss);

  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k];
    TensorGradCheck tc;
    tc.name = k < names.size() ? names[k] : "input" + std::to_string(k);
    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_tensor > 0 && coords.size() > opt.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    std::vector<double> analytic(coords.size(), 0.0);
    if (x.has_grad())
      for (std::size_t c = 0; c < coords.size(); ++c) analytic[c] = x.grad()[coords[c]];

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    {
      NoGradGuard guard;
      auto central = [&](double& v, double h) {
        const double saved = v;
        v = saved + h;
        const double up = f().item();
        v = saved - h;
        const double down = f().item();
        v = saved;
        return (up - down) / (2.0 * h);
      };
      for (std::size_t c = 0; c < coords.size(); ++c) {
        double& v = x.data()[coords[c]];
        const double numeric = central(v, opt.step);
        if (!std::isfinite(numeric) || !std::isfinite(analytic[c])) report.non_finite = true;
        const double scale = std::max({std::abs(numeric), std::abs(analytic[c]), opt.denominator_floor});
        if (opt.kink_tolerance > 0.0 && std::abs(numeric - analytic[c]) > opt.tolerance * scale) {
          const double half = central(v, opt.step / 2.0);
          if (std::abs(half - numeric) > opt.kink_tolerance * (1.0 + std::abs(numeric))) {
            ++tc.kinks_skipped;
            continue;
          }
        }
        diff2 += (numeric - analytic[c]) * (numeric - analytic[c]);
        a2 += analytic[c] * analytic[c];
        n2 += numeric * numeric;
      }
    }
    tc.coords = coords.size() - tc.kinks_skipped;
    if (2 * tc.kinks_skipped > coords.size()) report.too_many_kinks = true;
    tc.analytic_norm = std::sqrt(a2);
    tc.numeric_norm = std::sqrt(n2);
    tc.relative_error = std::sqrt(diff2) / std::max({tc.analytic_norm, tc.numeric_norm, opt.denominator_floor});
    if (!std::isfinite(tc.relative_error)) report.non_finite = true;
    report.max_relative_error = std::max(report.max_relative_error, tc.relative_error);
    report.tensors.push_back(std::move(tc));
  }
  if (report.non_finite) report.max_relative_error = std::numeric_limits<double>::quiet_NaN();
  report.passed = !report.non_finite && !report.too_many_kinks && report.max_relative_error < opt.tolerance;
  return report;
}

/// Single-input convenience overload.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step,
                                  double tolerance) {
  GradCheckOptions opt;
  opt.step = step;
  opt.tolerance = tolerance;
  return grad_check([&] { return f(x); }, {x}, opt);
}

}  // namespace hyperx
