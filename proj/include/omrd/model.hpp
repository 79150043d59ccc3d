#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "omrd/gru.hpp"
#include "omrd/ops.hpp"
#include "omrd/rng.hpp"
#include "omrd/tensor.hpp"

namespace omrd {

// Backbone: a chain of 3x3 conv + bias + ReLU stages, stride 2 everywhere
// except the final stage, which keeps stride 1 so the output grid stays at
// 16x8 before pooling. The default covers 64x32 inputs; [64..2048]-channel
// five-stage configs reproduce the 256x128 -> 16x8 full-scale geometry.
struct BackboneConfig {
  int input_h = 64;
  int input_w = 32;
  std::vector<int> stage_channels = {8, 16, 32};

  int stage_stride(std::size_t stage) const {
    return stage + 1 == stage_channels.size() ? 1 : 2;
  }
};

inline std::pair<int, int> backbone_stage_shape(const BackboneConfig& cfg, std::size_t stages_applied) {
  int h = cfg.input_h, w = cfg.input_w;
  for (std::size_t s = 0; s < stages_applied; ++s) {
    const int stride = cfg.stage_stride(s);
    h = (h + 2 - 3) / stride + 1;
    w = (w + 2 - 3) / stride + 1;
  }
  return {h, w};
}

inline void validate_backbone(const BackboneConfig& cfg) {
  check(!cfg.stage_channels.empty(), "backbone: at least one stage required");
  for (int c : cfg.stage_channels) check(c >= 1, "backbone: channel counts must be positive");
  check(cfg.input_h >= 4 && cfg.input_w >= 4, "backbone: input too small");
  const auto [h, w] = backbone_stage_shape(cfg, cfg.stage_channels.size());
  check(h == 16 && w == 8, "backbone: configuration yields a " + std::to_string(h) + "x" +
                               std::to_string(w) + " grid; the part/channel branches require 16x8");
}

enum class DescriptorMode { FinalStates, MeanSteps };

struct ModelConfig {
  BackboneConfig backbone;
  int gru_layers = 3;
  int hidden_parts = 32;     // branches 1-2
  int hidden_channels = 16;  // branch 3
  int oim_dim = 64;          // width of the fully connected global feature
  DescriptorMode descriptor_mode = DescriptorMode::FinalStates;

  int feature_channels() const { return backbone.stage_channels.back(); }
};

inline void validate_model(const ModelConfig& cfg) {
  validate_backbone(cfg.backbone);
  check(cfg.gru_layers >= 1, "model: gru_layers must be >= 1");
  check(cfg.hidden_parts >= 1 && cfg.hidden_channels >= 1, "model: hidden sizes must be positive");
  check(cfg.oim_dim >= 1, "model: oim_dim must be positive");
}

// Which branches participate in a training step. b4 gates the global OIM
// head, b5 the triplet loss; f_trip itself is always produced.
struct BranchMask {
  bool b1_vert = true;
  bool b2_horz = true;
  bool b3_chan = true;
  bool b4_oim_global = true;
  bool b5_triplet = true;

  bool any_loss() const { return b1_vert || b2_horz || b3_chan || b4_oim_global || b5_triplet; }
};

template <typename T>
struct ConvStage {
  Tensor<T> kernel;  // [3 x 3 x Cin x Cout]
  Tensor<T> bias;    // [Cout]
  int stride = 1;
};

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  std::vector<ConvStage<T>> stages;
  BiGruStack<T> vert, horz, chan;
  Tensor<T> head_w;  // [C x oim_dim]
  Tensor<T> head_b;  // [oim_dim]

  std::vector<NamedParam<T>> backbone_named() const {
    std::vector<NamedParam<T>> out;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      out.push_back({"backbone.stage" + std::to_string(s) + ".kernel", stages[s].kernel});
      out.push_back({"backbone.stage" + std::to_string(s) + ".bias", stages[s].bias});
    }
    return out;
  }

  // Fixed canonical ordering; checkpoints and the optimizer both rely on it.
  std::vector<NamedParam<T>> named_tensors() const {
    std::vector<NamedParam<T>> out = backbone_named();
    for (auto& p : vert.named("branch1")) out.push_back(p);
    for (auto& p : horz.named("branch2")) out.push_back(p);
    for (auto& p : chan.named("branch3")) out.push_back(p);
    out.push_back({"head.weight", head_w});
    out.push_back({"head.bias", head_b});
    return out;
  }
};

template <typename T>
ModelParams<T> make_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_model(cfg);
  ModelParams<T> model;
  model.cfg = cfg;
  Rng rng(mix_seed(seed, 0xB0D1));
  int cin = 3;
  for (std::size_t s = 0; s < cfg.backbone.stage_channels.size(); ++s) {
    const int cout = cfg.backbone.stage_channels[s];
    const T bound = T(1) / std::sqrt(static_cast<T>(3 * 3 * cin));
    ArrX<T> k(static_cast<Eigen::Index>(3) * 3 * cin * cout);
    for (Eigen::Index i = 0; i < k.size(); ++i) k[i] = static_cast<T>(rng.uniform(-bound, bound));
    ConvStage<T> stage;
    stage.kernel = Tensor<T>::parameter({3, 3, cin, cout}, std::move(k));
    stage.bias = Tensor<T>::parameter({cout}, ArrX<T>::Zero(cout).eval());
    stage.stride = cfg.backbone.stage_stride(s);
    model.stages.push_back(std::move(stage));
    cin = cout;
  }
  const int c = cfg.feature_channels();
  Rng rng_v(mix_seed(seed, 0xB1));
  Rng rng_h(mix_seed(seed, 0xB2));
  Rng rng_c(mix_seed(seed, 0xB3));
  model.vert = make_bigru<T>(c, cfg.hidden_parts, cfg.gru_layers, rng_v);
  model.horz = make_bigru<T>(c, cfg.hidden_parts, cfg.gru_layers, rng_h);
  model.chan = make_bigru<T>(128, cfg.hidden_channels, cfg.gru_layers, rng_c);
  Rng rng_d(mix_seed(seed, 0xB4));
  const T bound = T(1) / std::sqrt(static_cast<T>(c));
  ArrX<T> wv(static_cast<Eigen::Index>(c) * cfg.oim_dim);
  for (Eigen::Index i = 0; i < wv.size(); ++i) wv[i] = static_cast<T>(rng_d.uniform(-bound, bound));
  model.head_w = Tensor<T>::parameter({c, cfg.oim_dim}, std::move(wv));
  model.head_b = Tensor<T>::parameter({cfg.oim_dim}, ArrX<T>::Zero(cfg.oim_dim).eval());
  return model;
}

// [H x W x 3] image -> [16 x 8 x C] feature map. Input must match the
// configured size exactly; the model never resizes.
template <typename T>
Tensor<T> backbone_forward(const ModelParams<T>& params, const Tensor<T>& image) {
  const BackboneConfig& bb = params.cfg.backbone;
  check(image.rank() == 3 && image.dim(2) == 3, "backbone: [H x W x 3] image required, got " +
                                                    shape_str(image.shape()));
  check(image.dim(0) == bb.input_h && image.dim(1) == bb.input_w,
        "backbone: image " + shape_str(image.shape()) + " does not match configured input " +
            std::to_string(bb.input_h) + "x" + std::to_string(bb.input_w));
  Tensor<T> x = image;
  for (const ConvStage<T>& stage : params.stages) {
    Tensor<T> y = conv2d(x, stage.kernel, stage.stride, stage.stride, 1, 1);
    const int h = y.dim(0), w = y.dim(1), c = y.dim(2);
    x = reshape(relu(add_rowwise(reshape(y, {h * w, c}), stage.bias)), {h, w, c});
  }
  return x;
}

// Branch-1 input: 16 row means ordered top to bottom, each a C-vector.
template <typename T>
std::vector<Tensor<T>> vertical_sequence(const Tensor<T>& featmap) {
  check(featmap.rank() == 3 && featmap.dim(0) == 16 && featmap.dim(1) == 8,
        "vertical_sequence: 16x8 feature map required, got " + shape_str(featmap.shape()));
  Tensor<T> rows_mat = reshape(avg_pool2d(featmap, 1, 8), {16, featmap.dim(2)});
  std::vector<Tensor<T>> seq;
  seq.reserve(16);
  for (int i = 0; i < 16; ++i) seq.push_back(row(rows_mat, i));
  return seq;
}

// Branch-2 input: 8 column means ordered left to right.
template <typename T>
std::vector<Tensor<T>> horizontal_sequence(const Tensor<T>& featmap) {
  check(featmap.rank() == 3 && featmap.dim(0) == 16 && featmap.dim(1) == 8,
        "horizontal_sequence: 16x8 feature map required, got " + shape_str(featmap.shape()));
  Tensor<T> cols_mat = reshape(avg_pool2d(featmap, 16, 1), {8, featmap.dim(2)});
  std::vector<Tensor<T>> seq;
  seq.reserve(8);
  for (int j = 0; j < 8; ++j) seq.push_back(row(cols_mat, j));
  return seq;
}

// Branch-3 input: each channel's 16x8 map flattened to a 128-vector, ordered
// by channel index. The 128 width is structural, so 16x8 is mandatory.
template <typename T>
std::vector<Tensor<T>> channel_sequence(const Tensor<T>& featmap) {
  check(featmap.rank() == 3 && featmap.dim(0) == 16 && featmap.dim(1) == 8,
        "channel_sequence: 16x8 feature map required, got " + shape_str(featmap.shape()));
  Tensor<T> chan_mat = channels_as_rows(featmap);  // [C x 128]
  std::vector<Tensor<T>> seq;
  seq.reserve(static_cast<std::size_t>(featmap.dim(2)));
  for (int c = 0; c < featmap.dim(2); ++c) seq.push_back(row(chan_mat, c));
  return seq;
}

// Per-image descriptors from one forward pass.
template <typename T>
struct BranchOutputs {
  Tensor<T> f_vert;  // [2 * hidden_parts]
  Tensor<T> f_horz;  // [2 * hidden_parts]
  Tensor<T> f_chan;  // [2 * hidden_channels]
  Tensor<T> f_trip;  // [C], globally pooled
  Tensor<T> f_oim;   // [oim_dim], fully connected projection of f_trip
};

// Row-per-image batch variant; disabled branches stay undefined.
template <typename T>
struct BatchOutputs {
  Tensor<T> f_vert, f_horz, f_chan, f_trip, f_oim;
};

namespace detail {

template <typename T>
Tensor<T> branch_descriptor(const BiGruStack<T>& stack, std::span<const Tensor<T>> seq,
                            DescriptorMode mode) {
  BiGruResult<T> res = bigru_forward(stack, seq);
  return mode == DescriptorMode::FinalStates ? res.final_states : mean_over_steps(res.outputs);
}

// Stacks step t of every image's pooled-sequence matrix into a [B x C] batch.
template <typename T>
std::vector<Tensor<T>> batched_steps(const std::vector<Tensor<T>>& per_image, int steps) {
  std::vector<Tensor<T>> seq;
  seq.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    std::vector<Tensor<T>> rows;
    rows.reserve(per_image.size());
    for (const Tensor<T>& m : per_image) rows.push_back(row(m, t));
    seq.push_back(vstack(rows));
  }
  return seq;
}

}  // namespace detail

template <typename T>
BatchOutputs<T> forward_batch(const ModelParams<T>& params, std::span<const Tensor<T>> images,
                              const BranchMask& mask = {}) {
  check(!images.empty(), "forward_batch: at least one image required");
  const int c = params.cfg.feature_channels();
  const std::size_t batch = images.size();

  std::vector<Tensor<T>> featmaps;
  featmaps.reserve(batch);
  for (const Tensor<T>& img : images) featmaps.push_back(backbone_forward(params, img));

  BatchOutputs<T> out;
  {
    std::vector<Tensor<T>> pooled;
    pooled.reserve(batch);
    for (const Tensor<T>& f : featmaps) pooled.push_back(global_avg_pool(f));
    out.f_trip = vstack(pooled);  // [B x C]
  }
  if (mask.b1_vert) {
    std::vector<Tensor<T>> per_image;
    per_image.reserve(batch);
    for (const Tensor<T>& f : featmaps) per_image.push_back(reshape(avg_pool2d(f, 1, 8), {16, c}));
    auto seq = detail::batched_steps(per_image, 16);
    out.f_vert = detail::branch_descriptor(params.vert, std::span<const Tensor<T>>(seq),
                                           params.cfg.descriptor_mode);
  }
  if (mask.b2_horz) {
    std::vector<Tensor<T>> per_image;
    per_image.reserve(batch);
    for (const Tensor<T>& f : featmaps) per_image.push_back(reshape(avg_pool2d(f, 16, 1), {8, c}));
    auto seq = detail::batched_steps(per_image, 8);
    out.f_horz = detail::branch_descriptor(params.horz, std::span<const Tensor<T>>(seq),
                                           params.cfg.descriptor_mode);
  }
  if (mask.b3_chan) {
    std::vector<Tensor<T>> per_image;
    per_image.reserve(batch);
    for (const Tensor<T>& f : featmaps) per_image.push_back(channels_as_rows(f));  // [C x 128]
    auto seq = detail::batched_steps(per_image, c);
    out.f_chan = detail::branch_descriptor(params.chan, std::span<const Tensor<T>>(seq),
                                           params.cfg.descriptor_mode);
  }
  if (mask.b4_oim_global) {
    out.f_oim = dense(out.f_trip, params.head_w, params.head_b);  // [B x oim_dim]
  }
  return out;
}

// Full five-branch forward of a single image.
template <typename T>
BranchOutputs<T> forward_all(const ModelParams<T>& params, const Tensor<T>& image) {
  const Tensor<T> imgs[1] = {image};
  BatchOutputs<T> b = forward_batch(params, std::span<const Tensor<T>>(imgs), BranchMask{});
  BranchOutputs<T> out;
  out.f_vert = reshape(b.f_vert, {b.f_vert.dim(1)});
  out.f_horz = reshape(b.f_horz, {b.f_horz.dim(1)});
  out.f_chan = reshape(b.f_chan, {b.f_chan.dim(1)});
  out.f_trip = reshape(b.f_trip, {b.f_trip.dim(1)});
  out.f_oim = reshape(b.f_oim, {b.f_oim.dim(1)});
  return out;
}

}  // namespace omrd
