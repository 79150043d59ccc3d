#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "omrd/ops.hpp"
#include "omrd/rng.hpp"
#include "omrd/tensor.hpp"

namespace omrd {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

struct GradReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_parameter;
  bool passed = false;
  double tolerance = 0.0;
  // Coordinates probed per parameter (all coordinates unless sampled).
  std::map<std::string, std::vector<std::int64_t>> sampled_indices;
  std::string failure_note;  // set when probing hit a non-finite value
};

namespace detail {

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace detail

// Central-difference gradient verification: compares reverse-mode gradients of
// the scalar f(params) against (f(p+h) - f(p-h)) / 2h per coordinate. Large
// tensors are probed on a deterministic coordinate sample. Meant to run with
// T = double; finite differences are unreliable in single precision.
template <typename T>
GradReport gradient_check(const std::function<Tensor<T>(const std::vector<NamedParam<T>>&)>& f,
                          const std::vector<NamedParam<T>>& params, T step, double tolerance,
                          int max_coords_per_tensor = 48, std::uint64_t sample_seed = 17) {
  GradReport report;
  report.tolerance = tolerance;

  Tensor<T> loss = f(params);
  check(loss.defined() && loss.size() == 1, "gradient_check: f must return a scalar");
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    report.failure_note = "non-finite loss at the evaluation point";
    report.worst_parameter = "<loss>";
    return report;
  }
  loss.backward();

  std::vector<ArrX<T>> analytic(params.size());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor<T>& p = params[pi].tensor;
    analytic[pi] = p.has_grad() ? p.grad() : ArrX<T>::Zero(p.size());
    if (!analytic[pi].isFinite().all()) {
      report.failure_note = "non-finite analytic gradient";
      report.worst_parameter = params[pi].name;
      return report;
    }
  }
  loss.release_graph();

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor<T>& p = params[pi].tensor;
    std::vector<std::int64_t> coords;
    if (p.size() <= max_coords_per_tensor) {
      coords.resize(static_cast<std::size_t>(p.size()));
      for (std::int64_t i = 0; i < p.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      Rng rng(mix_seed(sample_seed, pi));
      std::vector<char> taken(static_cast<std::size_t>(p.size()), 0);
      while (static_cast<int>(coords.size()) < max_coords_per_tensor) {
        const int idx = rng.uniform_int(static_cast<int>(p.size()));
        if (!taken[static_cast<std::size_t>(idx)]) {
          taken[static_cast<std::size_t>(idx)] = 1;
          coords.push_back(idx);
        }
      }
    }
    report.sampled_indices[params[pi].name] = coords;

    for (std::int64_t i : coords) {
      const T base = p[i];
      std::vector<NamedParam<T>> probe = params;
      probe[pi].tensor = p.with_value(i, base + step);
      const double f_plus = static_cast<double>(f(probe)[0]);
      probe[pi].tensor = p.with_value(i, base - step);
      const double f_minus = static_cast<double>(f(probe)[0]);
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        report.failure_note = "non-finite value while probing";
        report.worst_parameter = params[pi].name;
        report.passed = false;
        return report;
      }
      const double fd = (f_plus - f_minus) / (2.0 * static_cast<double>(step));
      const double an = static_cast<double>(analytic[pi][i]);
      const double rel = detail::rel_error(an, fd);
      const double abs_err = std::abs(an - fd);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = params[pi].name;
      }
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace omrd
