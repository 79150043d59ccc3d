#include "omrd/gradsuite.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

#include "omrd/gru.hpp"
#include "omrd/losses.hpp"
#include "omrd/model.hpp"

namespace omrd {

namespace {

using D = double;
using Params = std::vector<NamedParam<D>>;
using Fn = std::function<Tensor<D>(const Params&)>;

Tensor<D> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool param = true) {
  ArrX<D> v(numel(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return param ? Tensor<D>::parameter(std::move(shape), std::move(v))
               : Tensor<D>::constant(std::move(shape), std::move(v));
}

// random values bounded away from zero; keeps ReLU kinks out of FD reach
Tensor<D> rand_tensor_offset(Rng& rng, Shape shape) {
  ArrX<D> v(numel(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    v[i] = sign * rng.uniform(0.2, 1.2);
  }
  return Tensor<D>::parameter(std::move(shape), std::move(v));
}

Tensor<D> unit_rows(Rng& rng, int rows, int dim, bool param = true) {
  ArrX<D> v(static_cast<Eigen::Index>(rows) * dim);
  for (int r = 0; r < rows; ++r) {
    double norm2 = 0;
    for (int c = 0; c < dim; ++c) {
      const double x = rng.normal();
      v[static_cast<Eigen::Index>(r) * dim + c] = x;
      norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-30));
    for (int c = 0; c < dim; ++c) v[static_cast<Eigen::Index>(r) * dim + c] *= inv;
  }
  return param ? Tensor<D>::parameter({rows, dim}, std::move(v)) : Tensor<D>::constant({rows, dim}, std::move(v));
}

// sigmoid with a deliberately doubled derivative; the sabotage fixture
Tensor<D> broken_sigmoid(const Tensor<D>& a) {
  ArrX<D> v(a.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a.value()[i]));
  return make_node<D>(a.shape(), std::move(v), {a}, [](detail::Node<D>& n) {
    detail::accumulate(*n.parents[0], 2.0 * n.grad * n.value * (1.0 - n.value));
  });
}

struct Instance {
  Params params;
  Fn fn;
  double step = 1e-5;
};

GradSuiteEntry run_component(const std::string& name, int instances, double tolerance,
                             const std::function<Instance(std::uint64_t)>& build, int max_coords = 48) {
  GradSuiteEntry entry;
  entry.component = name;
  entry.instances = instances;
  entry.passed = true;
  for (int i = 0; i < instances; ++i) {
    Instance inst = build(static_cast<std::uint64_t>(i));
    GradReport rep = gradient_check<D>(inst.fn, inst.params, inst.step, tolerance, max_coords,
                                       mix_seed(991, static_cast<std::uint64_t>(i)));
    if (rep.max_rel_error > entry.max_rel_error || !rep.failure_note.empty()) {
      entry.max_rel_error = std::max(entry.max_rel_error, rep.max_rel_error);
      entry.worst_parameter = rep.worst_parameter;
    }
    entry.passed = entry.passed && rep.passed;
  }
  return entry;
}

// BiGRU stack whose tensors come from a probe vector, consumed in the
// canonical named() order.
BiGruStack<D> stack_from(const Params& probe, std::size_t& pos, int input_dim, int hidden, int layers) {
  BiGruStack<D> stack;
  stack.input_dim = input_dim;
  stack.hidden_dim = hidden;
  stack.num_layers = layers;
  auto take_cell = [&](int din) {
    GruCellParams<D> cell;
    cell.input_dim = din;
    cell.hidden_dim = hidden;
    cell.w_z = probe[pos++].tensor;
    cell.w_r = probe[pos++].tensor;
    cell.w_h = probe[pos++].tensor;
    cell.u_z = probe[pos++].tensor;
    cell.u_r = probe[pos++].tensor;
    cell.u_h = probe[pos++].tensor;
    cell.b_z = probe[pos++].tensor;
    cell.b_r = probe[pos++].tensor;
    cell.b_h = probe[pos++].tensor;
    return cell;
  };
  for (int l = 0; l < layers; ++l) {
    const int din = l == 0 ? input_dim : 2 * hidden;
    auto fwd = take_cell(din);
    auto bwd = take_cell(din);
    stack.layers.emplace_back(std::move(fwd), std::move(bwd));
  }
  return stack;
}

ModelParams<D> model_from(const ModelConfig& cfg, const Params& probe, std::size_t& pos) {
  ModelParams<D> m;
  m.cfg = cfg;
  int cin = 3;
  for (std::size_t s = 0; s < cfg.backbone.stage_channels.size(); ++s) {
    ConvStage<D> stage;
    stage.kernel = probe[pos++].tensor;
    stage.bias = probe[pos++].tensor;
    stage.stride = cfg.backbone.stage_stride(s);
    m.stages.push_back(std::move(stage));
    cin = cfg.backbone.stage_channels[s];
  }
  m.vert = stack_from(probe, pos, cfg.feature_channels(), cfg.hidden_parts, cfg.gru_layers);
  m.horz = stack_from(probe, pos, cfg.feature_channels(), cfg.hidden_parts, cfg.gru_layers);
  m.chan = stack_from(probe, pos, 128, cfg.hidden_channels, cfg.gru_layers);
  m.head_w = probe[pos++].tensor;
  m.head_b = probe[pos++].tensor;
  return m;
}

}  // namespace

const GradSuiteEntry* GradSuiteResult::worst() const {
  const GradSuiteEntry* w = nullptr;
  for (const GradSuiteEntry& e : entries) {
    if (!w || e.max_rel_error > w->max_rel_error) w = &e;
  }
  return w;
}

GradSuiteResult run_gradient_suite(double tolerance, const std::string& sabotage) {
  GradSuiteResult result;
  result.tolerance = tolerance;

  auto elementwise = [&](const std::string& name, auto&& op, bool offset_inputs) {
    result.entries.push_back(run_component(name, 10, tolerance, [&, name](std::uint64_t i) {
      Rng rng(mix_seed(0xE1E, std::hash<std::string>{}(name), i));
      Instance inst;
      Tensor<D> x = offset_inputs ? rand_tensor_offset(rng, {16}) : rand_tensor(rng, {16});
      Tensor<D> w = rand_tensor(rng, {16}, -1, 1, false);
      inst.params = {{"x", x}};
      inst.fn = [op, w](const Params& p) { return weighted_sum(op(p[0].tensor), w); };
      return inst;
    }));
  };

  result.entries.push_back(run_component("conv2d", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0xC0, i));
    Instance inst;
    inst.step = 1e-3;  // multilinear; a large step only suppresses roundoff
    inst.params = {{"input", rand_tensor(rng, {8, 8, 3})}, {"kernel", rand_tensor(rng, {3, 3, 3, 4})}};
    const int pad = static_cast<int>(i % 2);
    const int stride = i % 3 == 0 ? 2 : 1;
    Tensor<D> w = rand_tensor(rng, {(8 + 2 * pad - 3) / stride + 1, (8 + 2 * pad - 3) / stride + 1, 4}, -1, 1, false);
    inst.fn = [w, stride, pad](const Params& p) {
      return weighted_sum(conv2d(p[0].tensor, p[1].tensor, stride, stride, pad, pad), w);
    };
    return inst;
  }));

  result.entries.push_back(run_component("avg_pool2d", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0xA7, i));
    Instance inst;
    inst.step = 1e-3;
    inst.params = {{"input", rand_tensor(rng, {8, 4, 3})}};
    const int kh = i % 2 == 0 ? 2 : 4;
    Tensor<D> w = rand_tensor(rng, {8 / kh, 2, 3}, -1, 1, false);
    inst.fn = [w, kh](const Params& p) { return weighted_sum(avg_pool2d(p[0].tensor, kh, 2), w); };
    return inst;
  }));

  result.entries.push_back(run_component("global_avg_pool", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0x6A, i));
    Instance inst;
    inst.step = 1e-3;
    inst.params = {{"input", rand_tensor(rng, {6, 4, 5})}};
    Tensor<D> w = rand_tensor(rng, {5}, -1, 1, false);
    inst.fn = [w](const Params& p) { return weighted_sum(global_avg_pool(p[0].tensor), w); };
    return inst;
  }));

  result.entries.push_back(run_component("dense", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0xDE, i));
    Instance inst;
    inst.step = 1e-3;
    inst.params = {{"x", rand_tensor(rng, {3, 7})}, {"w", rand_tensor(rng, {7, 5})}, {"b", rand_tensor(rng, {5})}};
    Tensor<D> w = rand_tensor(rng, {3, 5}, -1, 1, false);
    inst.fn = [w](const Params& p) { return weighted_sum(dense(p[0].tensor, p[1].tensor, p[2].tensor), w); };
    return inst;
  }));

  result.entries.push_back(run_component("matmul", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0x3A, i));
    Instance inst;
    inst.step = 1e-3;
    inst.params = {{"a", rand_tensor(rng, {4, 6})}, {"b", rand_tensor(rng, {6, 3})}};
    Tensor<D> w = rand_tensor(rng, {4, 3}, -1, 1, false);
    inst.fn = [w](const Params& p) { return weighted_sum(matmul(p[0].tensor, p[1].tensor), w); };
    return inst;
  }));

  result.entries.push_back(run_component("add", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0xAD, i));
    Instance inst;
    inst.step = 1e-3;
    inst.params = {{"a", rand_tensor(rng, {12})}, {"b", rand_tensor(rng, {12})}};
    Tensor<D> w = rand_tensor(rng, {12}, -1, 1, false);
    inst.fn = [w](const Params& p) { return weighted_sum(add(p[0].tensor, p[1].tensor), w); };
    return inst;
  }));

  result.entries.push_back(run_component("mul", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0x3B, i));
    Instance inst;
    inst.params = {{"a", rand_tensor(rng, {12})}, {"b", rand_tensor(rng, {12})}};
    Tensor<D> w = rand_tensor(rng, {12}, -1, 1, false);
    inst.fn = [w](const Params& p) { return weighted_sum(mul(p[0].tensor, p[1].tensor), w); };
    return inst;
  }));

  result.entries.push_back(run_component("concat", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0xCC, i));
    Instance inst;
    inst.step = 1e-3;
    inst.params = {{"a", rand_tensor(rng, {3})}, {"b", rand_tensor(rng, {4})}, {"c", rand_tensor(rng, {5})}};
    Tensor<D> w = rand_tensor(rng, {12}, -1, 1, false);
    inst.fn = [w](const Params& p) {
      return weighted_sum(concat(std::vector<Tensor<D>>{p[0].tensor, p[1].tensor, p[2].tensor}), w);
    };
    return inst;
  }));

  result.entries.push_back(run_component("reshape", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0x4E, i));
    Instance inst;
    inst.step = 1e-3;
    inst.params = {{"a", rand_tensor(rng, {12})}};
    Tensor<D> w = rand_tensor(rng, {3, 4}, -1, 1, false);
    inst.fn = [w](const Params& p) { return weighted_sum(reshape(p[0].tensor, {3, 4}), w); };
    return inst;
  }));

  const bool sabotage_sigmoid = sabotage == "sigmoid";
  elementwise("sigmoid",
              [sabotage_sigmoid](const Tensor<D>& t) { return sabotage_sigmoid ? broken_sigmoid(t) : sigmoid(t); },
              false);
  elementwise("tanh", [](const Tensor<D>& t) { return tanh_op(t); }, false);
  elementwise("relu", [](const Tensor<D>& t) { return relu(t); }, true);

  result.entries.push_back(run_component("l2_normalize", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0x12, i));
    Instance inst;
    inst.params = {{"v", rand_tensor_offset(rng, {8})}};
    Tensor<D> w = rand_tensor(rng, {8}, -1, 1, false);
    inst.fn = [w](const Params& p) { return weighted_sum(l2_normalize(p[0].tensor), w); };
    return inst;
  }));

  result.entries.push_back(run_component("softmax_temp", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0x50, i));
    Instance inst;
    inst.params = {{"logits", rand_tensor(rng, {10})}};
    const double tau = i % 3 == 0 ? 1.0 : (i % 3 == 1 ? 0.5 : 0.1);
    Tensor<D> w = rand_tensor(rng, {10}, -1, 1, false);
    inst.fn = [w, tau](const Params& p) { return weighted_sum(softmax_temp(p[0].tensor, tau), w); };
    return inst;
  }));

  result.entries.push_back(run_component("euclidean_distance", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0xED, i));
    Instance inst;
    Tensor<D> x = rand_tensor(rng, {6});
    ArrX<D> shifted = x.value() + 2.0;  // keep the pair well apart
    for (Eigen::Index c = 0; c < shifted.size(); ++c) shifted[c] += rng.uniform(-0.5, 0.5);
    inst.params = {{"x", x}, {"y", Tensor<D>::parameter({6}, std::move(shifted))}};
    inst.fn = [](const Params& p) { return euclidean_distance(p[0].tensor, p[1].tensor); };
    return inst;
  }));

  result.entries.push_back(run_component("gru_cell", 10, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0x6B, i));
    Instance inst;
    GruCellParams<D> cell = make_gru_cell<D>(5, 4, rng);
    inst.params = cell.named("cell");
    inst.params.push_back({"x", rand_tensor(rng, {3, 5})});
    inst.params.push_back({"h", rand_tensor(rng, {3, 4})});
    Tensor<D> w = rand_tensor(rng, {3, 4}, -1, 1, false);
    inst.fn = [w](const Params& p) {
      std::size_t pos = 0;
      GruCellParams<D> c;
      c.input_dim = 5;
      c.hidden_dim = 4;
      c.w_z = p[pos++].tensor;
      c.w_r = p[pos++].tensor;
      c.w_h = p[pos++].tensor;
      c.u_z = p[pos++].tensor;
      c.u_r = p[pos++].tensor;
      c.u_h = p[pos++].tensor;
      c.b_z = p[pos++].tensor;
      c.b_r = p[pos++].tensor;
      c.b_h = p[pos++].tensor;
      return weighted_sum(gru_cell_step(c, p[pos].tensor, p[pos + 1].tensor), w);
    };
    return inst;
  }));

  result.entries.push_back(run_component(
      "bigru_stack", 3, tolerance,
      [&](std::uint64_t i) {
        Rng rng(mix_seed(0xB6, i));
        Instance inst;
        const int steps = i == 0 ? 1 : (i == 1 ? 3 : 8);
        BiGruStack<D> stack = make_bigru<D>(5, 4, 3, rng);
        inst.params = stack.named("stack");
        std::vector<Tensor<D>> seq;
        for (int t = 0; t < steps; ++t) seq.push_back(rand_tensor(rng, {2, 5}, -1, 1, false));
        Tensor<D> w = rand_tensor(rng, {2, 8}, -1, 1, false);
        inst.fn = [seq, w](const Params& p) {
          std::size_t pos = 0;
          BiGruStack<D> s = stack_from(p, pos, 5, 4, 3);
          return weighted_sum(bigru_forward(s, std::span<const Tensor<D>>(seq)).final_states, w);
        };
        return inst;
      },
      8));

  result.entries.push_back(run_component("oim_loss", 5, tolerance, [&](std::uint64_t i) {
    Rng rng(mix_seed(0x01, i));
    Instance inst;
    OimState<D> state = make_oim_state<D>(5, 6, 3);
    Tensor<D> lut = unit_rows(rng, 5, 6, false);
    state.lut = as_matrix(lut.value(), 5, 6);
    for (int q = 0; q < 2; ++q) {
      Tensor<D> entry = unit_rows(rng, 1, 6, false);
      state.queue.emplace_back(Eigen::Map<const VecX<D>>(entry.value().data(), 6));
    }
    inst.params = {{"features", rand_tensor_offset(rng, {3, 6})}};
    const std::vector<int> targets{static_cast<int>(i % 5), 2, 4};
    inst.fn = [state, targets](const Params& p) {
      return oim_loss(state, l2_normalize_rows(p[0].tensor), targets);
    };
    return inst;
  }));

  result.entries.push_back(run_component("batch_hard_triplet", 5, tolerance, [&](std::uint64_t i) {
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    // reseed until every hinge and every hardest-pair selection clears the
    // finite-difference step, so the loss is smooth in the probed region
    for (std::uint64_t salt = 0;; ++salt) {
      Rng rng(mix_seed(0x7B, i, salt));
      Tensor<D> emb = rand_tensor(rng, {6, 4}, -2, 2);
      const double margin = 0.6;
      Tensor<D> loss = batch_hard_triplet(emb, labels, margin);
      bool safe = loss.item() > 1e-2;
      auto e = as_matrix(emb.value(), 6, 4);
      for (int a = 0; a < 6 && safe; ++a) {
        std::vector<double> pos, neg;
        for (int b = 0; b < 6; ++b) {
          if (b == a) continue;
          (labels[static_cast<std::size_t>(b)] == labels[static_cast<std::size_t>(a)] ? pos : neg)
              .push_back((e.row(a) - e.row(b)).norm());
        }
        std::sort(pos.begin(), pos.end());
        std::sort(neg.begin(), neg.end());
        const double term = margin + pos.back() - neg.front();
        safe = std::abs(term) > 1e-2 && (neg.size() < 2 || neg[1] - neg[0] > 1e-2);
      }
      if (!safe) continue;
      Instance inst;
      inst.params = {{"embeddings", emb}};
      inst.fn = [labels, margin](const Params& p) {
        return batch_hard_triplet(p[0].tensor, labels, margin);
      };
      return inst;
    }
  }));

  result.entries.push_back(run_component(
      "combined_end_to_end", 1, tolerance,
      [&](std::uint64_t i) {
        Rng rng(mix_seed(0xEE, i));
        ModelConfig cfg;
        cfg.backbone.input_h = 32;
        cfg.backbone.input_w = 16;
        cfg.backbone.stage_channels = {4, 8};
        cfg.gru_layers = 3;
        cfg.hidden_parts = 4;
        cfg.hidden_channels = 4;
        cfg.oim_dim = 8;
        ModelParams<D> model = make_model<D>(cfg, mix_seed(0xEE, i, 1));
        Instance inst;
        inst.params = model.named_tensors();

        std::vector<Tensor<D>> images;
        for (int b = 0; b < 4; ++b) images.push_back(rand_tensor(rng, {32, 16, 3}, 0.0, 1.0, false));
        const std::vector<int> labels{0, 0, 1, 1};

        std::array<OimState<D>, 4> heads;
        const std::array<int, 4> dims{2 * cfg.hidden_parts, 2 * cfg.hidden_parts, 2 * cfg.hidden_channels,
                                      cfg.oim_dim};
        for (int h = 0; h < 4; ++h) {
          heads[static_cast<std::size_t>(h)] = make_oim_state<D>(2, dims[static_cast<std::size_t>(h)], 0);
          Tensor<D> lut = unit_rows(rng, 2, dims[static_cast<std::size_t>(h)], false);
          heads[static_cast<std::size_t>(h)].lut = as_matrix(lut.value(), 2, dims[static_cast<std::size_t>(h)]);
        }
        inst.fn = [cfg, images, labels, heads](const Params& p) {
          std::size_t pos = 0;
          ModelParams<D> m = model_from(cfg, p, pos);
          BatchOutputs<D> fb = forward_batch(m, std::span<const Tensor<D>>(images), BranchMask{});
          std::array<Tensor<D>, 4> oims;
          oims[0] = oim_loss(heads[0], l2_normalize_rows(fb.f_vert), labels);
          oims[1] = oim_loss(heads[1], l2_normalize_rows(fb.f_horz), labels);
          oims[2] = oim_loss(heads[2], l2_normalize_rows(fb.f_chan), labels);
          oims[3] = oim_loss(heads[3], l2_normalize_rows(fb.f_oim), labels);
          Tensor<D> trp = batch_hard_triplet(fb.f_trip, labels, 0.5);
          return combined_loss(oims, trp, LossWeights<D>{});
        };
        return inst;
      },
      6));

  result.all_passed = true;
  for (const GradSuiteEntry& e : result.entries) result.all_passed = result.all_passed && e.passed;
  return result;
}

std::string gradient_suite_table(const GradSuiteResult& result) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "component" << std::right << std::setw(10) << "instances"
     << std::setw(16) << "max_rel_error" << "  status\n";
  for (const GradSuiteEntry& e : result.entries) {
    os << std::left << std::setw(22) << e.component << std::right << std::setw(10) << e.instances
       << std::setw(16) << std::scientific << std::setprecision(3) << e.max_rel_error << "  "
       << (e.passed ? "pass" : "FAIL") << "\n";
  }
  os << std::defaultfloat;
  os << "checked " << result.entries.size() << " components at tolerance " << result.tolerance << ": "
     << (result.all_passed ? "all passed" : "FAILURES PRESENT") << "\n";
  if (!result.all_passed) {
    const GradSuiteEntry* w = result.worst();
    if (w) os << "worst offender: " << w->component << " (" << w->worst_parameter << ")\n";
  }
  return os.str();
}

}  // namespace omrd
