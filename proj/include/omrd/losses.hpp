#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "omrd/ops.hpp"
#include "omrd/tensor.hpp"

namespace omrd {

template <typename T>
struct LossWeights {
  T l1 = 1, l2 = 1, l3 = 1, l4 = 1, l5 = 1;
};

// Nonparametric OIM head state: a lookup table of L labeled identity columns
// plus a circular queue of up to Q unlabeled features. Stored rows are unit
// vectors (zero until first touched); gradients never flow into this state.
template <typename T>
struct OimState {
  MatRM<T> lut;                 // [L x D], row j is v_j
  std::vector<VecX<T>> queue;   // oldest first
  int capacity = 0;             // Q
  T temperature = T(0.1);       // delta-hat
  T momentum = T(0.5);          // gamma

  int num_labeled() const { return static_cast<int>(lut.rows()); }
  int dim() const { return static_cast<int>(lut.cols()); }
};

template <typename T>
OimState<T> make_oim_state(int num_labeled, int dim, int capacity = 0, T temperature = T(0.1),
                           T momentum = T(0.5)) {
  check(num_labeled >= 1 && dim >= 1, "make_oim_state: L and D must be positive");
  check(capacity >= 0, "make_oim_state: queue capacity must be >= 0");
  check(temperature > T(0), "make_oim_state: temperature must be positive");
  check(momentum >= T(0) && momentum <= T(1), "make_oim_state: momentum must lie in [0, 1]");
  OimState<T> state;
  state.lut = MatRM<T>::Zero(num_labeled, dim);
  state.capacity = capacity;
  state.temperature = temperature;
  state.momentum = momentum;
  return state;
}

namespace detail {

template <typename T>
void check_unit_norm(const ArrX<T>& flat, int rows, int cols, const char* who) {
  for (int b = 0; b < rows; ++b) {
    const T norm = Eigen::Map<const VecX<T>>(flat.data() + static_cast<Eigen::Index>(b) * cols, cols).norm();
    check(std::abs(norm - T(1)) <= T(1e-3),
          std::string(who) + ": feature row " + std::to_string(b) +
              " is not l2-normalized (norm=" + std::to_string(static_cast<double>(norm)) +
              "); normalize upstream");
  }
}

// LUT rows stacked over queue entries: [L + Q_used x D]
template <typename T>
MatRM<T> stacked_references(const OimState<T>& state) {
  const int l = state.num_labeled();
  const int q = static_cast<int>(state.queue.size());
  MatRM<T> w(l + q, state.dim());
  w.topRows(l) = state.lut;
  for (int i = 0; i < q; ++i) w.row(l + i) = state.queue[static_cast<std::size_t>(i)].transpose();
  return w;
}

}  // namespace detail

// Class posteriors of a single feature against the LUT (p) and queue (r);
// both share one softmax denominator, so sum(p) + sum(r) == 1. Read-only on
// the state, and not part of any gradient path.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> oim_probabilities(const OimState<T>& state, const Tensor<T>& feature) {
  check(feature.rank() == 1 && feature.dim(0) == state.dim(),
        "oim_probabilities: feature dimension does not match state");
  detail::check_unit_norm(feature.value(), 1, state.dim(), "oim_probabilities");
  const MatRM<T> w = detail::stacked_references(state);
  VecX<T> logits = w * feature.value().matrix() / state.temperature;
  ArrX<T> p = (logits.array() - logits.maxCoeff()).exp();
  p /= p.sum();
  const int l = state.num_labeled();
  const int q = static_cast<int>(state.queue.size());
  ArrX<T> labeled = p.segment(0, l);
  ArrX<T> unlabeled = q > 0 ? ArrX<T>(p.segment(l, q)) : ArrX<T>(0);
  return {Tensor<T>::constant({l}, std::move(labeled)),
          Tensor<T>::constant({std::max(q, 1)}, q > 0 ? std::move(unlabeled) : ArrX<T>::Zero(1).eval())};
}

// -mean_b log p_{target_b}; differentiable w.r.t. the features, while the
// LUT/queue act as constants. Features: [B x D] with unit rows, or one [D].
template <typename T>
Tensor<T> oim_loss(const OimState<T>& state, const Tensor<T>& features, std::span<const int> targets) {
  if (features.rank() == 1) {
    return oim_loss(state, reshape(features, {1, features.dim(0)}), targets);
  }
  check(features.rank() == 2 && features.dim(1) == state.dim(),
        "oim_loss: features " + shape_str(features.shape()) + " do not match state dim " +
            std::to_string(state.dim()));
  const int batch = features.dim(0);
  check(static_cast<int>(targets.size()) == batch, "oim_loss: one target per feature row required");
  for (int t : targets) {
    check(t >= 0 && t < state.num_labeled(),
          "oim_loss: target " + std::to_string(t) + " outside LUT range [0, " +
              std::to_string(state.num_labeled()) + ")");
  }
  detail::check_unit_norm(features.value(), batch, state.dim(), "oim_loss");

  const MatRM<T> w = detail::stacked_references(state);
  const int refs = static_cast<int>(w.rows());
  MatRM<T> logits = as_matrix(features.value(), batch, state.dim()) * w.transpose() / state.temperature;
  MatRM<T> probs(batch, refs);
  T loss = T(0);
  for (int b = 0; b < batch; ++b) {
    const T row_max = logits.row(b).maxCoeff();
    ArrX<T> e = (logits.row(b).array() - row_max).exp();
    const T denom = e.sum();
    probs.row(b) = (e / denom).matrix();
    loss -= logits(b, targets[static_cast<std::size_t>(b)]) - row_max - std::log(denom);
  }
  loss /= static_cast<T>(batch);

  std::vector<int> tgt(targets.begin(), targets.end());
  ArrX<T> v(1);
  v[0] = loss;
  const T inv_scale = T(1) / (static_cast<T>(batch) * state.temperature);
  return make_node<T>({1}, std::move(v), {features}, [w, probs, tgt, batch, inv_scale](detail::Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    MatRM<T> delta = probs;
    for (int b = 0; b < batch; ++b) delta(b, tgt[static_cast<std::size_t>(b)]) -= T(1);
    as_matrix_mut(n.parents[0]->grad, batch, static_cast<int>(w.cols())).noalias() +=
        (n.grad[0] * inv_scale) * (delta * w);
  });
}

// Batch LUT/queue maintenance, run once per step after the optimizer update.
// Labeled sample t: v_t <- normalize(gamma v_t + (1-gamma) f). Unlabeled
// samples (target < 0) are pushed onto the queue, oldest evicted beyond Q.
template <typename T>
void oim_update(OimState<T>& state, const Tensor<T>& features, std::span<const int> targets) {
  const Tensor<T>& f = features;
  check(f.rank() == 2 && f.dim(1) == state.dim(), "oim_update: features do not match state dim");
  const int batch = f.dim(0);
  check(static_cast<int>(targets.size()) == batch, "oim_update: one target per feature row required");
  detail::check_unit_norm(f.value(), batch, state.dim(), "oim_update");
  for (int b = 0; b < batch; ++b) {
    const int t = targets[static_cast<std::size_t>(b)];
    check(t < state.num_labeled(), "oim_update: target outside LUT range");
    Eigen::Map<const VecX<T>> feat(f.value().data() + static_cast<Eigen::Index>(b) * state.dim(), state.dim());
    if (t >= 0) {
      VecX<T> mixed = state.momentum * state.lut.row(t).transpose() + (T(1) - state.momentum) * feat;
      const T norm = mixed.norm();
      state.lut.row(t) = (mixed / std::max(norm, T(1e-12))).transpose();
    } else if (state.capacity > 0) {
      state.queue.push_back(feat);
      while (static_cast<int>(state.queue.size()) > state.capacity) state.queue.erase(state.queue.begin());
    }
  }
}

// Batch-hard triplet loss over a P*K batch: per anchor, hinge on
// margin + max_p d(a, p) - min_n d(a, n), mean over anchors, Euclidean d.
// Hardest positive/negative ties resolve to the first index.
template <typename T>
Tensor<T> batch_hard_triplet(const Tensor<T>& embeddings, std::span<const int> labels, T margin) {
  check(embeddings.rank() == 2, "batch_hard_triplet: [B x D] embeddings required");
  check(margin >= T(0), "batch_hard_triplet: margin must be >= 0");
  const int batch = embeddings.dim(0);
  const int dim = embeddings.dim(1);
  check(static_cast<int>(labels.size()) == batch, "batch_hard_triplet: one label per row required");

  std::vector<int> lab(labels.begin(), labels.end());
  for (int a = 0; a < batch; ++a) {
    bool has_pos = false, has_neg = false;
    for (int b = 0; b < batch; ++b) {
      if (b == a) continue;
      (lab[static_cast<std::size_t>(b)] == lab[static_cast<std::size_t>(a)] ? has_pos : has_neg) = true;
    }
    check(has_pos, "batch_hard_triplet: identity " + std::to_string(lab[static_cast<std::size_t>(a)]) +
                       " has no positive pair in the batch");
    check(has_neg, "batch_hard_triplet: batch must contain at least two identities");
  }

  auto e = as_matrix(embeddings.value(), batch, dim);
  MatRM<T> dist(batch, batch);
  for (int a = 0; a < batch; ++a) {
    dist(a, a) = T(0);
    for (int b = a + 1; b < batch; ++b) {
      const T d = (e.row(a) - e.row(b)).norm();
      dist(a, b) = d;
      dist(b, a) = d;
    }
  }

  std::vector<int> hard_pos(static_cast<std::size_t>(batch)), hard_neg(static_cast<std::size_t>(batch));
  std::vector<T> terms(static_cast<std::size_t>(batch));
  T loss = T(0);
  for (int a = 0; a < batch; ++a) {
    int hp = -1, hn = -1;
    for (int b = 0; b < batch; ++b) {
      if (b == a) continue;
      if (lab[static_cast<std::size_t>(b)] == lab[static_cast<std::size_t>(a)]) {
        if (hp < 0 || dist(a, b) > dist(a, hp)) hp = b;
      } else {
        if (hn < 0 || dist(a, b) < dist(a, hn)) hn = b;
      }
    }
    hard_pos[static_cast<std::size_t>(a)] = hp;
    hard_neg[static_cast<std::size_t>(a)] = hn;
    const T term = std::max(T(0), margin + dist(a, hp) - dist(a, hn));
    terms[static_cast<std::size_t>(a)] = term;
    loss += term;
  }
  loss /= static_cast<T>(batch);

  ArrX<T> v(1);
  v[0] = loss;
  return make_node<T>({1}, std::move(v), {embeddings},
                      [dist, hard_pos, hard_neg, terms, batch, dim](detail::Node<T>& n) {
                        if (!n.parents[0]->requires_grad) return;
                        const T g = n.grad[0] / static_cast<T>(batch);
                        auto e = as_matrix(n.parents[0]->value, batch, dim);
                        auto de = as_matrix_mut(n.parents[0]->grad, batch, dim);
                        for (int a = 0; a < batch; ++a) {
                          if (terms[static_cast<std::size_t>(a)] <= T(0)) continue;
                          const int hp = hard_pos[static_cast<std::size_t>(a)];
                          const int hn = hard_neg[static_cast<std::size_t>(a)];
                          if (dist(a, hp) > T(0)) {
                            const VecX<T> dir = (e.row(a) - e.row(hp)).transpose() * (g / dist(a, hp));
                            de.row(a) += dir.transpose();
                            de.row(hp) -= dir.transpose();
                          }
                          if (dist(a, hn) > T(0)) {
                            const VecX<T> dir = (e.row(a) - e.row(hn)).transpose() * (g / dist(a, hn));
                            de.row(a) -= dir.transpose();
                            de.row(hn) += dir.transpose();
                          }
                        }
                      });
}

// Rows of a [B x D] matrix pushed onto the unit sphere, as graph ops; the
// feature preparation step in front of every OIM head.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& m, T epsilon = T(1e-12)) {
  check(m.rank() == 2, "l2_normalize_rows: [B x D] input required");
  std::vector<Tensor<T>> rows;
  rows.reserve(static_cast<std::size_t>(m.dim(0)));
  for (int b = 0; b < m.dim(0); ++b) rows.push_back(l2_normalize(row(m, b), epsilon));
  return vstack(rows);
}

// L = l1*oim_1 + l2*oim_2 + l3*oim_3 + l4*oim_4 + l5*trp. Undefined inputs
// (disabled branches) contribute nothing.
template <typename T>
Tensor<T> combined_loss(const std::array<Tensor<T>, 4>& oim_losses, const Tensor<T>& triplet_loss,
                        const LossWeights<T>& weights) {
  const std::array<T, 4> w{weights.l1, weights.l2, weights.l3, weights.l4};
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < 4; ++i) {
    if (!oim_losses[i].defined()) continue;
    check(std::isfinite(static_cast<double>(oim_losses[i].item())),
          "combined_loss: oim term " + std::to_string(i + 1) + " is not finite");
    total = add(total, scale(oim_losses[i], w[i]));
  }
  if (triplet_loss.defined()) {
    check(std::isfinite(static_cast<double>(triplet_loss.item())), "combined_loss: triplet term is not finite");
    total = add(total, scale(triplet_loss, weights.l5));
  }
  return total;
}

}  // namespace omrd
