#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "omrd/gradcheck.hpp"
#include "omrd/ops.hpp"
#include "omrd/rng.hpp"
#include "omrd/tensor.hpp"

namespace omrd {

// Standard GRU cell parameterization:
//   z = sigma(x W_z + h U_z + b_z)
//   r = sigma(x W_r + h U_r + b_r)
//   h~ = tanh(x W_h + (r . h) U_h + b_h)
//   h' = (1 - z) . h + z . h~
template <typename T>
struct GruCellParams {
  int input_dim = 0;
  int hidden_dim = 0;
  Tensor<T> w_z, w_r, w_h;  // [D_in x D_h]
  Tensor<T> u_z, u_r, u_h;  // [D_h x D_h]
  Tensor<T> b_z, b_r, b_h;  // [D_h]

  std::vector<NamedParam<T>> named(const std::string& prefix) const {
    return {{prefix + ".w_z", w_z}, {prefix + ".w_r", w_r}, {prefix + ".w_h", w_h},
            {prefix + ".u_z", u_z}, {prefix + ".u_r", u_r}, {prefix + ".u_h", u_h},
            {prefix + ".b_z", b_z}, {prefix + ".b_r", b_r}, {prefix + ".b_h", b_h}};
  }
};

// uniform(-1/sqrt(D_h), 1/sqrt(D_h)) matrices, zero biases
template <typename T>
GruCellParams<T> make_gru_cell(int input_dim, int hidden_dim, Rng& rng) {
  check(input_dim >= 1 && hidden_dim >= 1, "make_gru_cell: dimensions must be positive");
  const T bound = T(1) / std::sqrt(static_cast<T>(hidden_dim));
  auto init = [&](int r, int c) {
    ArrX<T> v(static_cast<Eigen::Index>(r) * c);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::parameter({r, c}, std::move(v));
  };
  GruCellParams<T> cell;
  cell.input_dim = input_dim;
  cell.hidden_dim = hidden_dim;
  cell.w_z = init(input_dim, hidden_dim);
  cell.w_r = init(input_dim, hidden_dim);
  cell.w_h = init(input_dim, hidden_dim);
  cell.u_z = init(hidden_dim, hidden_dim);
  cell.u_r = init(hidden_dim, hidden_dim);
  cell.u_h = init(hidden_dim, hidden_dim);
  cell.b_z = Tensor<T>::parameter({hidden_dim}, ArrX<T>::Zero(hidden_dim).eval());
  cell.b_r = Tensor<T>::parameter({hidden_dim}, ArrX<T>::Zero(hidden_dim).eval());
  cell.b_h = Tensor<T>::parameter({hidden_dim}, ArrX<T>::Zero(hidden_dim).eval());
  return cell;
}

// One recurrence step. Accepts a [B x D_in] batch with [B x D_h] state, or
// bare vectors for the single-sample case.
template <typename T>
Tensor<T> gru_cell_step(const GruCellParams<T>& cell, const Tensor<T>& x_t, const Tensor<T>& h_prev) {
  if (x_t.rank() == 1) {
    check(h_prev.rank() == 1, "gru_cell_step: state rank must match input rank");
    Tensor<T> h = gru_cell_step(cell, reshape(x_t, {1, x_t.dim(0)}), reshape(h_prev, {1, h_prev.dim(0)}));
    return reshape(h, {cell.hidden_dim});
  }
  check(x_t.rank() == 2 && x_t.dim(1) == cell.input_dim,
        "gru_cell_step: input " + shape_str(x_t.shape()) + " does not match cell input_dim " +
            std::to_string(cell.input_dim));
  check(h_prev.rank() == 2 && h_prev.dim(0) == x_t.dim(0) && h_prev.dim(1) == cell.hidden_dim,
        "gru_cell_step: state " + shape_str(h_prev.shape()) + " does not match cell/batch");

  Tensor<T> z = sigmoid(add_rowwise(add(matmul(x_t, cell.w_z), matmul(h_prev, cell.u_z)), cell.b_z));
  Tensor<T> r = sigmoid(add_rowwise(add(matmul(x_t, cell.w_r), matmul(h_prev, cell.u_r)), cell.b_r));
  Tensor<T> h_cand =
      tanh_op(add_rowwise(add(matmul(x_t, cell.w_h), matmul(mul(r, h_prev), cell.u_h)), cell.b_h));
  Tensor<T> one = Tensor<T>::full(z.shape(), T(1));
  return add(mul(sub(one, z), h_prev), mul(z, h_cand));
}

// Bidirectional multi-layer stack. Layer l > 0 consumes the concatenated
// forward/backward streams of layer l-1, so its input width is 2*hidden.
template <typename T>
struct BiGruStack {
  int input_dim = 0;
  int hidden_dim = 0;
  int num_layers = 0;
  std::vector<std::pair<GruCellParams<T>, GruCellParams<T>>> layers;  // {forward, backward}

  std::vector<NamedParam<T>> named(const std::string& prefix) const {
    std::vector<NamedParam<T>> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string base = prefix + ".layer" + std::to_string(l);
      for (auto& p : layers[l].first.named(base + ".fwd")) out.push_back(p);
      for (auto& p : layers[l].second.named(base + ".bwd")) out.push_back(p);
    }
    return out;
  }
};

template <typename T>
BiGruStack<T> make_bigru(int input_dim, int hidden_dim, int num_layers, Rng& rng) {
  check(num_layers >= 1, "make_bigru: at least one layer required");
  BiGruStack<T> stack;
  stack.input_dim = input_dim;
  stack.hidden_dim = hidden_dim;
  stack.num_layers = num_layers;
  for (int l = 0; l < num_layers; ++l) {
    const int din = l == 0 ? input_dim : 2 * hidden_dim;
    stack.layers.emplace_back(make_gru_cell<T>(din, hidden_dim, rng), make_gru_cell<T>(din, hidden_dim, rng));
  }
  return stack;
}

template <typename T>
struct BiGruResult {
  std::vector<Tensor<T>> outputs;  // per step, [B x 2*D_h]
  Tensor<T> final_states;          // [h_fwd at t=T ; h_bwd at t=1] of the top layer
};

template <typename T>
BiGruResult<T> bigru_forward(const BiGruStack<T>& stack, std::span<const Tensor<T>> sequence) {
  check(!sequence.empty(), "bigru_forward: empty sequence rejected");
  const bool vector_mode = sequence.front().rank() == 1;

  std::vector<Tensor<T>> cur;
  cur.reserve(sequence.size());
  for (const Tensor<T>& s : sequence) {
    check(s.rank() == sequence.front().rank(), "bigru_forward: mixed element ranks");
    cur.push_back(vector_mode ? reshape(s, {1, s.dim(0)}) : s);
    check(cur.back().dim(1) == stack.input_dim, "bigru_forward: element width " +
                                                    std::to_string(cur.back().dim(1)) +
                                                    " does not match stack input_dim " +
                                                    std::to_string(stack.input_dim));
  }
  const int batch = cur.front().dim(0);
  const std::size_t steps = cur.size();

  Tensor<T> fwd_last, bwd_first;
  for (const auto& [fwd_cell, bwd_cell] : stack.layers) {
    std::vector<Tensor<T>> fwd_out(steps), bwd_out(steps);
    Tensor<T> h = Tensor<T>::zeros({batch, stack.hidden_dim});
    for (std::size_t t = 0; t < steps; ++t) {
      h = gru_cell_step(fwd_cell, cur[t], h);
      fwd_out[t] = h;
    }
    h = Tensor<T>::zeros({batch, stack.hidden_dim});
    for (std::size_t t = steps; t-- > 0;) {
      h = gru_cell_step(bwd_cell, cur[t], h);
      bwd_out[t] = h;
    }
    for (std::size_t t = 0; t < steps; ++t) cur[t] = hstack(fwd_out[t], bwd_out[t]);
    fwd_last = fwd_out[steps - 1];
    bwd_first = bwd_out[0];
  }

  BiGruResult<T> result;
  result.final_states = hstack(fwd_last, bwd_first);
  if (vector_mode) {
    result.final_states = reshape(result.final_states, {2 * stack.hidden_dim});
    for (Tensor<T>& o : cur) o = reshape(o, {2 * stack.hidden_dim});
  }
  result.outputs = std::move(cur);
  return result;
}

// Mean of the per-step outputs; the alternative sequence descriptor.
template <typename T>
Tensor<T> mean_over_steps(const std::vector<Tensor<T>>& outputs) {
  check(!outputs.empty(), "mean_over_steps: empty sequence");
  Tensor<T> acc = outputs.front();
  for (std::size_t t = 1; t < outputs.size(); ++t) acc = add(acc, outputs[t]);
  return scale(acc, T(1) / static_cast<T>(outputs.size()));
}

}  // namespace omrd
