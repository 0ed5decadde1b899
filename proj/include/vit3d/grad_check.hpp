#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vit3d/autodiff.hpp"

namespace vit3d {

template <typename S>
using LossFn = std::function<Var<S>(Tape<S>&, const std::vector<Var<S>>& params)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  Index checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool passed = false;
};

/// Compares tape gradients with central finite differences. Per element the
/// error is |g_ad - g_fd| / max(1, |g_fd|). `max_checks_per_param` > 0 limits
/// each tensor to that many evenly spaced elements plus its largest-gradient
/// element. Throws DeterminismError if two evaluations of f disagree.
template <typename S>
GradCheckReport grad_check(const LossFn<S>& f, const NamedTensors<S>& params, double h, double tol,
                           Index max_checks_per_param = 0) {
  auto evaluate = [&](const NamedTensors<S>& values, bool with_grad, NamedTensors<S>* grads) {
    Tape<S> tape;
    std::vector<Var<S>> vars;
    vars.reserve(values.size());
    for (const auto& [name, t] : values) vars.push_back(with_grad ? tape.parameter(name, t) : tape.constant(t));
    auto loss = f(tape, vars);
    if (loss.size() != 1) throw ContractError("grad_check: loss must be scalar");
    const double value = static_cast<double>(loss.value()[0]);
    if (grads) *grads = tape.backward(loss);
    return value;
  };

  NamedTensors<S> grads;
  const double base = evaluate(params, true, &grads);
  const double again = evaluate(params, false, nullptr);
  if (std::memcmp(&base, &again, sizeof(double)) != 0) {
    throw DeterminismError("grad_check: loss differs between two evaluations (is dropout enabled?)");
  }

  GradCheckReport report;
  report.tol = tol;
  NamedTensors<S> work = params;
  for (std::size_t p = 0; p < work.size(); ++p) {
    auto& tensor = work[p].second;
    const auto& g = grads[p].second;
    std::vector<Index> indices;
    const Index n = tensor.size();
    if (max_checks_per_param <= 0 || n <= max_checks_per_param) {
      indices.resize(static_cast<std::size_t>(n));
      std::iota(indices.begin(), indices.end(), Index{0});
    } else {
      for (Index k = 0; k < max_checks_per_param; ++k) indices.push_back(k * n / max_checks_per_param);
      Index argmax = 0;
      g.array().abs().maxCoeff(&argmax);
      if (std::find(indices.begin(), indices.end(), argmax) == indices.end()) indices.push_back(argmax);
    }
    GradCheckEntry entry{work[p].first, 0.0, static_cast<Index>(indices.size())};
    for (Index i : indices) {
      const S original = tensor[i];
      const S plus = static_cast<S>(original + h);
      const S minus = static_cast<S>(original - h);
      tensor[i] = plus;
      const double f_plus = evaluate(work, false, nullptr);
      tensor[i] = minus;
      const double f_minus = evaluate(work, false, nullptr);
      tensor[i] = original;
      const double fd = (f_plus - f_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
      const double err = std::abs(static_cast<double>(g[i]) - fd) / std::max(1.0, std::abs(fd));
      entry.max_rel_error = std::max(entry.max_rel_error, err);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace vit3d
