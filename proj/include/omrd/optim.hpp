#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "omrd/gradcheck.hpp"
#include "omrd/tensor.hpp"

namespace omrd {

// Paper schedule: 2e-4 up to epoch 100, then 2e-4 * 0.001^((epoch-100)/50).
inline double lr_schedule(int epoch) {
  check(epoch >= 1, "lr_schedule: epochs are 1-based");
  if (epoch <= 100) return 2e-4;
  return 2e-4 * std::pow(0.001, (epoch - 100) / 50.0);
}

// Same shape rescaled to an arbitrary run length: flat until 2/3 of the run,
// then a 0.001 decay over the remaining third. total_epochs=150 with
// base_lr=2e-4 reproduces lr_schedule exactly.
inline double lr_schedule_scaled(int epoch, int total_epochs, double base_lr) {
  check(epoch >= 1 && total_epochs >= 1, "lr_schedule_scaled: epochs are 1-based");
  const int breakpoint = (2 * total_epochs) / 3;
  if (epoch <= breakpoint || breakpoint == 0) return base_lr;
  const int window = std::max(1, total_epochs - breakpoint);
  return base_lr * std::pow(0.001, static_cast<double>(epoch - breakpoint) / window);
}

template <typename T>
struct AdamConfig {
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  T weight_decay = T(0);  // classic L2 term added to the gradient
};

template <typename T>
struct AdamState {
  AdamConfig<T> cfg;
  long step_count = 0;
  std::vector<ArrX<T>> m, v;  // parallel to the parameter list

  explicit AdamState(AdamConfig<T> config = {}) : cfg(config) {}
};

// One Adam update over a fixed parameter list. The list must be identical
// (same order, same shapes) on every call against the same state.
template <typename T>
void adam_step(AdamState<T>& state, std::span<NamedParam<T>> params, T lr) {
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const NamedParam<T>& p : params) {
      state.m.push_back(ArrX<T>::Zero(p.tensor.size()));
      state.v.push_back(ArrX<T>::Zero(p.tensor.size()));
    }
  }
  check(state.m.size() == params.size(), "adam_step: parameter list does not match optimizer state");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.grad().isFinite().all()) {
      throw std::runtime_error("adam_step: non-finite gradient for parameter " + params[i].name);
    }
  }
  state.step_count += 1;
  const T bc1 = T(1) - std::pow(state.cfg.beta1, static_cast<T>(state.step_count));
  const T bc2 = T(1) - std::pow(state.cfg.beta2, static_cast<T>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i].tensor;
    ArrX<T> g = p.grad() + state.cfg.weight_decay * p.value();
    state.m[i] = state.cfg.beta1 * state.m[i] + (T(1) - state.cfg.beta1) * g;
    state.v[i] = state.cfg.beta2 * state.v[i] + (T(1) - state.cfg.beta2) * g.square();
    const ArrX<T> m_hat = state.m[i] / bc1;
    const ArrX<T> v_hat = state.v[i] / bc2;
    p.value_mut() -= lr * m_hat / (v_hat.sqrt() + state.cfg.eps);
  }
}

}  // namespace omrd
