#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "omrd/tensor.hpp"

namespace omrd {

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  ArrX<T> v = a.value() + b.value();
  return make_node<T>(a.shape(), std::move(v), {a, b}, [](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad);
    detail::accumulate(*n.parents[1], n.grad);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  ArrX<T> v = a.value() - b.value();
  return make_node<T>(a.shape(), std::move(v), {a, b}, [](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad);
    detail::accumulate(*n.parents[1], -n.grad);
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  ArrX<T> v = a.value() * b.value();
  return make_node<T>(a.shape(), std::move(v), {a, b}, [](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad * n.parents[1]->value);
    detail::accumulate(*n.parents[1], n.grad * n.parents[0]->value);
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  ArrX<T> v = a.value() * s;
  return make_node<T>(a.shape(), std::move(v), {a}, [s](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad * s);
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  ArrX<T> v(a.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const T x = a.value()[i];
    if (x >= T(0)) {
      v[i] = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      v[i] = e / (T(1) + e);
    }
  }
  return make_node<T>(a.shape(), std::move(v), {a}, [](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad * n.value * (T(1) - n.value));
  });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& a) {
  ArrX<T> v = a.value().tanh();
  return make_node<T>(a.shape(), std::move(v), {a}, [](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad * (T(1) - n.value.square()));
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  ArrX<T> v = a.value().max(T(0));
  return make_node<T>(a.shape(), std::move(v), {a}, [](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0],
                       n.grad * (n.parents[0]->value > T(0)).template cast<T>());
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 operands required");
  const int m = a.dim(0), k = a.dim(1), n_cols = b.dim(1);
  check(b.dim(0) == k, "matmul: inner dimensions differ, " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  ArrX<T> v(static_cast<Eigen::Index>(m) * n_cols);
  as_matrix_mut(v, m, n_cols).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n_cols);
  return make_node<T>({m, n_cols}, std::move(v), {a, b}, [m, k, n_cols](detail::Node<T>& n) {
    auto g = as_matrix(n.grad, m, n_cols);
    if (n.parents[0]->requires_grad) {
      as_matrix_mut(n.parents[0]->grad, m, k).noalias() += g * as_matrix(n.parents[1]->value, k, n_cols).transpose();
    }
    if (n.parents[1]->requires_grad) {
      as_matrix_mut(n.parents[1]->grad, k, n_cols).noalias() += as_matrix(n.parents[0]->value, m, k).transpose() * g;
    }
  });
}

// M [r x c] + v broadcast over rows
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& m, const Tensor<T>& v) {
  check(m.rank() == 2 && v.rank() == 1 && m.dim(1) == v.dim(0),
        "add_rowwise: incompatible shapes " + shape_str(m.shape()) + " and " + shape_str(v.shape()));
  const int r = m.dim(0), c = m.dim(1);
  ArrX<T> out(m.size());
  as_matrix_mut(out, r, c) = as_matrix(m.value(), r, c).rowwise() +
                             Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>>(v.value().data(), c);
  return make_node<T>(m.shape(), std::move(out), {m, v}, [r, c](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      Eigen::Map<VecX<T>>(n.parents[1]->grad.data(), c) +=
          as_matrix(n.grad, r, c).colwise().sum().transpose();
    }
  });
}

// Affine layer: accepts [B x Din] or a bare [Din] vector.
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check(w.rank() == 2 && b.rank() == 1 && b.dim(0) == w.dim(1), "dense: weight/bias shapes inconsistent");
  if (x.rank() == 1) {
    Tensor<T> row = reshape(x, {1, x.dim(0)});
    return reshape(add_rowwise(matmul(row, w), b), {w.dim(1)});
  }
  return add_rowwise(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check(numel(shape) == a.size(),
        "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  ArrX<T> v = a.value();
  return make_node<T>(std::move(shape), std::move(v), {a}, [](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], n.grad);
  });
}

// Concatenation of vectors, or row-wise stacking of matrices; in row-major
// layout both are plain flat concatenation. Rank-1 parts entering a rank-2
// stack are treated as single rows.
namespace detail {

template <typename T>
Tensor<T> concat_flat(const std::vector<Tensor<T>>& parts, Shape out_shape) {
  ArrX<T> v(numel(out_shape));
  Eigen::Index off = 0;
  for (const Tensor<T>& p : parts) {
    v.segment(off, p.size()) = p.value();
    off += p.size();
  }
  std::vector<Eigen::Index> sizes;
  sizes.reserve(parts.size());
  for (const Tensor<T>& p : parts) sizes.push_back(p.size());
  return make_node<T>(std::move(out_shape), std::move(v), parts, [sizes](Node<T>& n) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      accumulate(*n.parents[i], n.grad.segment(off, sizes[i]));
      off += sizes[i];
    }
  });
}

}  // namespace detail

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "concat: no inputs");
  int total = 0;
  for (const Tensor<T>& p : parts) {
    check(p.rank() == 1, "concat: rank-1 inputs required");
    total += p.dim(0);
  }
  return detail::concat_flat(parts, {total});
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  return concat(std::vector<Tensor<T>>{a, b});
}

template <typename T>
Tensor<T> vstack(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "vstack: no inputs");
  const int cols = parts.front().rank() == 1 ? parts.front().dim(0) : parts.front().dim(1);
  int rows = 0;
  for (const Tensor<T>& p : parts) {
    check(p.rank() == 1 || p.rank() == 2, "vstack: rank-1 or rank-2 inputs required");
    const int c = p.rank() == 1 ? p.dim(0) : p.dim(1);
    check(c == cols, "vstack: column count mismatch");
    rows += p.rank() == 1 ? 1 : p.dim(0);
  }
  return detail::concat_flat(parts, {rows, cols});
}

// Column-wise concatenation of [B x Ci] blocks.
template <typename T>
Tensor<T> hstack(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "hstack: no inputs");
  const int rows = parts.front().dim(0);
  int cols = 0;
  for (const Tensor<T>& p : parts) {
    check(p.rank() == 2 && p.dim(0) == rows, "hstack: row count mismatch");
    cols += p.dim(1);
  }
  ArrX<T> v(static_cast<Eigen::Index>(rows) * cols);
  auto out = as_matrix_mut(v, rows, cols);
  std::vector<int> widths;
  widths.reserve(parts.size());
  int off = 0;
  for (const Tensor<T>& p : parts) {
    out.middleCols(off, p.dim(1)) = as_matrix(p.value(), rows, p.dim(1));
    widths.push_back(p.dim(1));
    off += p.dim(1);
  }
  return make_node<T>({rows, cols}, std::move(v), parts, [rows, cols, widths](detail::Node<T>& n) {
    auto g = as_matrix(n.grad, rows, cols);
    int off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (n.parents[i]->requires_grad) {
        as_matrix_mut(n.parents[i]->grad, rows, widths[i]) += g.middleCols(off, widths[i]);
      }
      off += widths[i];
    }
  });
}

template <typename T>
Tensor<T> hstack(const Tensor<T>& a, const Tensor<T>& b) {
  return hstack(std::vector<Tensor<T>>{a, b});
}

template <typename T>
Tensor<T> row(const Tensor<T>& m, int i) {
  check(m.rank() == 2 && i >= 0 && i < m.dim(0), "row: index out of range");
  const int c = m.dim(1);
  ArrX<T> v = m.value().segment(static_cast<Eigen::Index>(i) * c, c);
  return make_node<T>({c}, std::move(v), {m}, [i, c](detail::Node<T>& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->grad.segment(static_cast<Eigen::Index>(i) * c, c) += n.grad;
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  ArrX<T> v(1);
  v[0] = a.value().sum();
  return make_node<T>({1}, std::move(v), {a}, [](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], ArrX<T>::Constant(n.parents[0]->value.size(), n.grad[0]));
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const T inv = T(1) / static_cast<T>(a.size());
  ArrX<T> v(1);
  v[0] = a.value().sum() * inv;
  return make_node<T>({1}, std::move(v), {a}, [inv](detail::Node<T>& n) {
    detail::accumulate(*n.parents[0], ArrX<T>::Constant(n.parents[0]->value.size(), n.grad[0] * inv));
  });
}

// ---------------------------------------------------------------------------
// convolution and pooling on [H x W x C] maps
// ---------------------------------------------------------------------------

// kernel layout [kh x kw x Cin x Cout]; output [H' x W' x Cout] with
// H' = floor((H + 2*ph - kh)/sh) + 1 and likewise W'.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int sh = 1, int sw = 1, int ph = 0,
                 int pw = 0) {
  check(input.rank() == 3, "conv2d: input must be [H x W x C], got " + shape_str(input.shape()));
  check(kernel.rank() == 4, "conv2d: kernel must be [kh x kw x Cin x Cout], got " + shape_str(kernel.shape()));
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  check(kernel.dim(2) == cin, "conv2d: input has " + std::to_string(cin) + " channels but kernel expects " +
                                  std::to_string(kernel.dim(2)));
  check(sh >= 1 && sw >= 1, "conv2d: strides must be >= 1");
  check(ph >= 0 && pw >= 0, "conv2d: paddings must be >= 0");
  check(kh <= h + 2 * ph && kw <= w + 2 * pw, "conv2d: kernel larger than padded input");
  const int ho = (h + 2 * ph - kh) / sh + 1;
  const int wo = (w + 2 * pw - kw) / sw + 1;
  const int patch = kh * kw * cin;

  MatRM<T> col(static_cast<Eigen::Index>(ho) * wo, patch);
  for (int oh = 0; oh < ho; ++oh) {
    for (int ow = 0; ow < wo; ++ow) {
      T* dst = col.data() + (static_cast<Eigen::Index>(oh) * wo + ow) * patch;
      for (int dh = 0; dh < kh; ++dh) {
        const int ih = oh * sh + dh - ph;
        for (int dw = 0; dw < kw; ++dw) {
          const int iw = ow * sw + dw - pw;
          T* cell = dst + (dh * kw + dw) * cin;
          if (ih < 0 || ih >= h || iw < 0 || iw >= w) {
            std::fill(cell, cell + cin, T(0));
          } else {
            const T* src = input.value().data() + (static_cast<Eigen::Index>(ih) * w + iw) * cin;
            std::copy(src, src + cin, cell);
          }
        }
      }
    }
  }

  ArrX<T> v(static_cast<Eigen::Index>(ho) * wo * cout);
  as_matrix_mut(v, ho * wo, cout).noalias() = col * as_matrix(kernel.value(), patch, cout);

  auto backward = [col, h, w, cin, kh, kw, cout, ho, wo, sh, sw, ph, pw, patch](detail::Node<T>& n) {
    auto g = as_matrix(n.grad, ho * wo, cout);
    if (n.parents[1]->requires_grad) {
      as_matrix_mut(n.parents[1]->grad, patch, cout).noalias() += col.transpose() * g;
    }
    if (n.parents[0]->requires_grad) {
      MatRM<T> dcol(static_cast<Eigen::Index>(ho) * wo, patch);
      dcol.noalias() = g * as_matrix(n.parents[1]->value, patch, cout).transpose();
      ArrX<T>& din = n.parents[0]->grad;
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow) {
          const T* src = dcol.data() + (static_cast<Eigen::Index>(oh) * wo + ow) * patch;
          for (int dh = 0; dh < kh; ++dh) {
            const int ih = oh * sh + dh - ph;
            if (ih < 0 || ih >= h) continue;
            for (int dw = 0; dw < kw; ++dw) {
              const int iw = ow * sw + dw - pw;
              if (iw < 0 || iw >= w) continue;
              const T* cell = src + (dh * kw + dw) * cin;
              T* dst = din.data() + (static_cast<Eigen::Index>(ih) * w + iw) * cin;
              for (int ci = 0; ci < cin; ++ci) dst[ci] += cell[ci];
            }
          }
        }
      }
    }
  };
  return make_node<T>({ho, wo, cout}, std::move(v), {input, kernel}, std::move(backward));
}

// Exact-tiling average pooling; kernel must divide the spatial extent.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int kh, int kw) {
  check(input.rank() == 3, "avg_pool2d: input must be [H x W x C]");
  const int h = input.dim(0), w = input.dim(1), c = input.dim(2);
  check(kh >= 1 && kw >= 1, "avg_pool2d: kernel must be >= 1");
  check(h % kh == 0 && w % kw == 0,
        "avg_pool2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " does not tile " +
            std::to_string(h) + "x" + std::to_string(w));
  const int ho = h / kh, wo = w / kw;
  const T inv = T(1) / static_cast<T>(kh * kw);
  ArrX<T> v = ArrX<T>::Zero(static_cast<Eigen::Index>(ho) * wo * c);
  for (int oh = 0; oh < ho; ++oh) {
    for (int ow = 0; ow < wo; ++ow) {
      T* dst = v.data() + (static_cast<Eigen::Index>(oh) * wo + ow) * c;
      for (int dh = 0; dh < kh; ++dh) {
        for (int dw = 0; dw < kw; ++dw) {
          const T* src = input.value().data() + (static_cast<Eigen::Index>(oh * kh + dh) * w + (ow * kw + dw)) * c;
          for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
      for (int ci = 0; ci < c; ++ci) dst[ci] *= inv;
    }
  }
  return make_node<T>({ho, wo, c}, std::move(v), {input},
                      [h, w, c, kh, kw, ho, wo, inv](detail::Node<T>& n) {
                        if (!n.parents[0]->requires_grad) return;
                        ArrX<T>& din = n.parents[0]->grad;
                        for (int oh = 0; oh < ho; ++oh) {
                          for (int ow = 0; ow < wo; ++ow) {
                            const T* g = n.grad.data() + (static_cast<Eigen::Index>(oh) * wo + ow) * c;
                            for (int dh = 0; dh < kh; ++dh) {
                              for (int dw = 0; dw < kw; ++dw) {
                                T* dst = din.data() +
                                         (static_cast<Eigen::Index>(oh * kh + dh) * w + (ow * kw + dw)) * c;
                                for (int ci = 0; ci < c; ++ci) dst[ci] += g[ci] * inv;
                              }
                            }
                          }
                        }
                      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  check(input.rank() == 3, "global_avg_pool: input must be [H x W x C]");
  const int c = input.dim(2);
  return reshape(avg_pool2d(input, input.dim(0), input.dim(1)), {c});
}

// Lossless reindexing [H x W x C] -> [C x H*W]: row c is channel c's spatial
// map flattened row-major.
template <typename T>
Tensor<T> channels_as_rows(const Tensor<T>& input) {
  check(input.rank() == 3, "channels_as_rows: input must be [H x W x C]");
  const int h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const int hw = h * w;
  ArrX<T> v(static_cast<Eigen::Index>(c) * hw);
  for (int s = 0; s < hw; ++s) {
    for (int ci = 0; ci < c; ++ci) {
      v[static_cast<Eigen::Index>(ci) * hw + s] = input.value()[static_cast<Eigen::Index>(s) * c + ci];
    }
  }
  return make_node<T>({c, hw}, std::move(v), {input}, [c, hw](detail::Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    ArrX<T>& din = n.parents[0]->grad;
    for (int s = 0; s < hw; ++s) {
      for (int ci = 0; ci < c; ++ci) {
        din[static_cast<Eigen::Index>(s) * c + ci] += n.grad[static_cast<Eigen::Index>(ci) * hw + s];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// vector ops
// ---------------------------------------------------------------------------

// v / max(||v||, epsilon)
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& v, T epsilon = T(1e-12)) {
  check(v.rank() == 1, "l2_normalize: rank-1 input required");
  const T norm = v.value().matrix().norm();
  const T denom = std::max(norm, epsilon);
  ArrX<T> out = v.value() / denom;
  return make_node<T>(v.shape(), std::move(out), {v}, [norm, epsilon, denom](detail::Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    if (norm > epsilon) {
      const T dot = (n.value * n.grad).sum();
      n.parents[0]->grad += (n.grad - n.value * dot) / norm;
    } else {
      n.parents[0]->grad += n.grad / denom;
    }
  });
}

// softmax(x / temperature) over a vector of logits
template <typename T>
Tensor<T> softmax_temp(const Tensor<T>& x, T temperature) {
  check(x.rank() == 1, "softmax_temp: rank-1 input required");
  check(temperature > T(0), "softmax_temp: temperature must be positive");
  ArrX<T> z = x.value() / temperature;
  z -= z.maxCoeff();
  ArrX<T> p = z.exp();
  p /= p.sum();
  return make_node<T>(x.shape(), std::move(p), {x}, [temperature](detail::Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    const T dot = (n.grad * n.value).sum();
    n.parents[0]->grad += n.value * (n.grad - dot) / temperature;
  });
}

template <typename T>
Tensor<T> euclidean_distance(const Tensor<T>& x, const Tensor<T>& y) {
  check(x.rank() == 1 && x.shape() == y.shape(), "euclidean_distance: matching rank-1 inputs required");
  const T d = (x.value() - y.value()).matrix().norm();
  ArrX<T> v(1);
  v[0] = d;
  return make_node<T>({1}, std::move(v), {x, y}, [d](detail::Node<T>& n) {
    if (d <= T(0)) return;  // zero subgradient at coincident points
    ArrX<T> dir = (n.parents[0]->value - n.parents[1]->value) * (n.grad[0] / d);
    detail::accumulate(*n.parents[0], dir);
    detail::accumulate(*n.parents[1], -dir);
  });
}

// Scalar convenience used by tests: sum(a * w) against fixed weights.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, const Tensor<T>& w) {
  return sum(mul(a, w));
}

}  // namespace omrd
