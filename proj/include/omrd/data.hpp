#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "omrd/rng.hpp"
#include "omrd/tensor.hpp"

namespace omrd {

enum class Split { Train, Query, Gallery };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Sample {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // h * w * 3, values in [0, 1], quantized to 8-bit steps
  int identity = 0;
  int camera = 0;
  Split split = Split::Train;
  std::string file;
};

struct Dataset {
  int image_h = 0;
  int image_w = 0;
  std::vector<Sample> samples;

  std::vector<std::size_t> split_indices(Split s) const;
  std::vector<int> identities(Split s) const;  // sorted, unique
};

// Procedural pedestrian-like identities: head/torso/legs color bands with a
// deliberate left/right torso split so both directional branches carry
// signal, plus per-image brightness, shift, side-occlusion and camera-tint
// nuisances. Fully deterministic in (params, seed).
struct SynthParams {
  int num_ids = 24;
  int images_per_id = 8;
  int height = 64;
  int width = 32;
  std::uint64_t seed = 1;
  int train_ids = 16;      // ids [0, train_ids) -> train, rest -> query+gallery
  int queries_per_id = 2;  // per held-out id
  double occlusion_prob = 0.6;
  double brightness_jitter = 0.22;
  double shift_frac = 0.10;
  double pixel_noise = 0.02;
  double min_separation = 0.2;          // mean per-band color distance between ids
  double arrangement_swap_prob = 0.5;   // reuse an earlier id's colors in permuted band order
};

struct IdentityStyle {
  // band colors: 0 head, 1 torso-left, 2 torso-right, 3 legs
  std::array<std::array<double, 3>, 4> bands{};
};

// Mean per-band color distance; mirrored variant swaps the torso halves.
double style_separation(const IdentityStyle& a, const IdentityStyle& b);
IdentityStyle mirror_style(const IdentityStyle& s);

std::vector<IdentityStyle> synth_styles(const SynthParams& params);
Dataset synth_generate(const SynthParams& params);
Dataset synth_generate(int num_ids, int images_per_id, std::pair<int, int> image_hw, std::uint64_t seed);

struct IngestStats {
  int skipped_junk = 0;
  int skipped_unreadable = 0;
};

// Parses `{pid}_c{cam}...` file names (PNG/JPEG), resizing to the target
// grid. pid -1 entries (distractors) are skipped and counted. The split is
// left at Train; callers assign it.
std::vector<Sample> ingest_directory(const std::string& path, int target_h, int target_w,
                                     const std::string& pattern = R"(^(-?\d+)_c(\d+).*)",
                                     IngestStats* stats = nullptr);

// A dataset directory: either one produced by write_dataset (manifest.json)
// or a train/query/gallery layout of raw images (bounding_box_train and
// bounding_box_test aliases accepted).
Dataset load_reid_directory(const std::string& root, int target_h, int target_w);

struct PKBatch {
  std::vector<std::size_t> indices;  // into Dataset::samples, identity-major
  int p = 0;
  int k = 0;
};

// P identities without replacement; K images per identity without
// replacement when available, with replacement otherwise.
PKBatch pk_sample(const Dataset& ds, std::span<const std::size_t> pool, int p, int k, Rng& rng);

struct AugmentConfig {
  double flip_prob = 0.5;
  double erase_prob = 0.5;
  double erase_area_lo = 0.02;
  double erase_area_hi = 0.4;
  double erase_aspect_lo = 0.3;
  double erase_aspect_hi = 3.33;
};

// Random horizontal flip then random erasing; shape, identity and camera are
// untouched.
Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng);

void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

template <typename T>
Tensor<T> sample_to_tensor(const Sample& s) {
  ArrX<T> v(static_cast<Eigen::Index>(s.pixels.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(s.pixels[static_cast<std::size_t>(i)]);
  return Tensor<T>::constant({s.height, s.width, 3}, std::move(v));
}

}  // namespace omrd
