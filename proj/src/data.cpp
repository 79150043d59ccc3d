#include "omrd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "omrd/image_io.hpp"

namespace fs = std::filesystem;

namespace omrd {

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Query: return "query";
    case Split::Gallery: return "gallery";
  }
  throw std::runtime_error("bad split value");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "query") return Split::Query;
  if (name == "gallery") return Split::Gallery;
  throw std::runtime_error("unknown split name: " + name);
}

std::vector<std::size_t> Dataset::split_indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == s) out.push_back(i);
  }
  return out;
}

std::vector<int> Dataset::identities(Split s) const {
  std::set<int> ids;
  for (const Sample& sm : samples) {
    if (sm.split == s) ids.insert(sm.identity);
  }
  return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------------
// synthetic identities
// ---------------------------------------------------------------------------

namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

std::array<double, 3> random_color(Rng& rng) {
  return hsv_to_rgb(rng.uniform(), rng.uniform(0.55, 1.0), rng.uniform(0.35, 0.95));
}

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0;
  for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s);
}

constexpr double kTorsoAsymmetryMin = 0.35;

bool style_acceptable(const IdentityStyle& s, const std::vector<IdentityStyle>& existing,
                      double min_separation) {
  if (color_distance(s.bands[1], s.bands[2]) < kTorsoAsymmetryMin) return false;
  for (const IdentityStyle& e : existing) {
    if (style_separation(s, e) < min_separation) return false;
    // flips must never turn one identity into another
    if (style_separation(s, mirror_style(e)) < min_separation) return false;
  }
  return true;
}

struct BandRect {
  double y0, y1, x0, x1;  // fractions of height/width
  int band;               // index into IdentityStyle::bands
};

// head, torso split left/right, legs
constexpr BandRect kBody[] = {
    {0.06, 0.20, 0.31, 0.69, 0},  // head
    {0.20, 0.56, 0.19, 0.50, 1},  // torso, left half
    {0.20, 0.56, 0.50, 0.81, 2},  // torso, right half
    {0.56, 0.92, 0.28, 0.72, 3},  // legs
};

}  // namespace

double style_separation(const IdentityStyle& a, const IdentityStyle& b) {
  double total = 0;
  for (int i = 0; i < 4; ++i) total += color_distance(a.bands[static_cast<std::size_t>(i)],
                                                      b.bands[static_cast<std::size_t>(i)]);
  return total / 4.0;
}

IdentityStyle mirror_style(const IdentityStyle& s) {
  IdentityStyle m = s;
  std::swap(m.bands[1], m.bands[2]);
  return m;
}

std::vector<IdentityStyle> synth_styles(const SynthParams& params) {
  check(params.num_ids >= 2, "synth: at least two identities required");
  std::vector<IdentityStyle> styles;
  styles.reserve(static_cast<std::size_t>(params.num_ids));
  for (int id = 0; id < params.num_ids; ++id) {
    Rng rng(mix_seed(params.seed, 0x1D, static_cast<std::uint64_t>(id)));
    IdentityStyle style;
    bool ok = false;
    for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
      if (!styles.empty() && rng.bernoulli(params.arrangement_swap_prob)) {
        // same color multiset as an earlier id, rearranged: the global average
        // collides while every band stays distinctive
        const IdentityStyle& base = styles[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(styles.size())))];
        std::array<int, 4> perm = {0, 1, 2, 3};
        for (int i = 3; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)],
                                              perm[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
        for (int i = 0; i < 4; ++i) style.bands[static_cast<std::size_t>(i)] = base.bands[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      } else {
        for (auto& band : style.bands) band = random_color(rng);
      }
      ok = style_acceptable(style, styles, params.min_separation);
    }
    if (!ok) {
      throw std::runtime_error("synth: could not find a separated color style for identity " +
                               std::to_string(id) + "; lower min_separation or num_ids");
    }
    styles.push_back(style);
  }
  return styles;
}

namespace {

Sample render_image(const SynthParams& p, const IdentityStyle& style, int id, int j) {
  Rng rng(mix_seed(p.seed, 0x2000 + static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(j)));
  const int h = p.height, w = p.width;
  std::vector<double> img(static_cast<std::size_t>(h) * w * 3);

  const double bg = 0.78 + rng.uniform(-0.10, 0.10);
  std::array<double, 3> bg_col{};
  for (int c = 0; c < 3; ++c) bg_col[static_cast<std::size_t>(c)] = bg + rng.uniform(-0.03, 0.03);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img[(static_cast<std::size_t>(y) * w + x) * 3 + c] = bg_col[static_cast<std::size_t>(c)];
    }
  }

  const int dx = static_cast<int>(std::lround((rng.uniform() * 2.0 - 1.0) * p.shift_frac * w));
  for (const BandRect& r : kBody) {
    const auto& col = style.bands[static_cast<std::size_t>(r.band)];
    const int y0 = static_cast<int>(std::lround(r.y0 * h));
    const int y1 = static_cast<int>(std::lround(r.y1 * h));
    const int x0 = std::clamp(static_cast<int>(std::lround(r.x0 * w)) + dx, 0, w);
    const int x1 = std::clamp(static_cast<int>(std::lround(r.x1 * w)) + dx, 0, w);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        for (int c = 0; c < 3; ++c) img[(static_cast<std::size_t>(y) * w + x) * 3 + c] = col[static_cast<std::size_t>(c)];
      }
    }
  }

  if (rng.bernoulli(p.occlusion_prob)) {
    const bool left = rng.bernoulli(0.5);
    const int bar = static_cast<int>(std::lround(w * rng.uniform(0.30, 0.48)));
    const double gray = rng.uniform(0.15, 0.55);
    std::array<double, 3> occ{};
    for (int c = 0; c < 3; ++c) occ[static_cast<std::size_t>(c)] = gray + rng.uniform(-0.03, 0.03);
    const int x0 = left ? 0 : w - bar;
    for (int y = 0; y < h; ++y) {
      for (int x = x0; x < x0 + bar; ++x) {
        for (int c = 0; c < 3; ++c) img[(static_cast<std::size_t>(y) * w + x) * 3 + c] = occ[static_cast<std::size_t>(c)];
      }
    }
  }

  const int camera = j % 2;
  const std::array<double, 3> tint = camera == 0 ? std::array<double, 3>{1.0, 1.0, 1.0}
                                                 : std::array<double, 3>{0.90, 0.97, 1.07};
  const double brightness = 1.0 + rng.uniform(-p.brightness_jitter, p.brightness_jitter);

  Sample s;
  s.height = h;
  s.width = w;
  s.identity = id;
  s.camera = camera;
  s.pixels.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = img[i] * tint[i % 3] * brightness + rng.uniform(-p.pixel_noise, p.pixel_noise);
    v = std::clamp(v, 0.0, 1.0);
    const int q = static_cast<int>(std::lround(v * 255.0));
    s.pixels[i] = static_cast<float>(q) / 255.0f;
  }
  return s;
}

}  // namespace

Dataset synth_generate(const SynthParams& params) {
  check(params.num_ids >= 2, "synth: num_ids must be >= 2");
  check(params.images_per_id >= 4, "synth: images_per_id must be >= 4");
  check(params.train_ids >= 1 && params.train_ids <= params.num_ids,
        "synth: train_ids must lie in [1, num_ids]");
  check(params.queries_per_id >= 1 && params.queries_per_id <= params.images_per_id - 2,
        "synth: queries_per_id must leave at least two gallery images per id");
  check(params.height >= 16 && params.width >= 8, "synth: image too small");

  const std::vector<IdentityStyle> styles = synth_styles(params);
  Dataset ds;
  ds.image_h = params.height;
  ds.image_w = params.width;
  for (int id = 0; id < params.num_ids; ++id) {
    for (int j = 0; j < params.images_per_id; ++j) {
      Sample s = render_image(params, styles[static_cast<std::size_t>(id)], id, j);
      if (id < params.train_ids) {
        s.split = Split::Train;
      } else {
        s.split = j < params.queries_per_id ? Split::Query : Split::Gallery;
      }
      char name[64];
      std::snprintf(name, sizeof(name), "%04d_c%d_%03d.png", id, s.camera, j);
      s.file = name;
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

Dataset synth_generate(int num_ids, int images_per_id, std::pair<int, int> image_hw, std::uint64_t seed) {
  SynthParams p;
  p.num_ids = num_ids;
  p.images_per_id = images_per_id;
  p.height = image_hw.first;
  p.width = image_hw.second;
  p.seed = seed;
  p.train_ids = std::max(1, (2 * num_ids) / 3);
  return synth_generate(p);
}

// ---------------------------------------------------------------------------
// directory ingestion
// ---------------------------------------------------------------------------

std::vector<Sample> ingest_directory(const std::string& path, int target_h, int target_w,
                                     const std::string& pattern, IngestStats* stats) {
  check(target_h >= 1 && target_w >= 1, "ingest: target size must be positive");
  if (!fs::is_directory(path)) throw std::runtime_error("ingest: not a directory: " + path);
  const std::regex re(pattern);
  IngestStats local;
  IngestStats& st = stats ? *stats : local;

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());

  std::vector<Sample> out;
  for (const std::string& name : names) {
    std::string stem = name;
    const auto dot = stem.rfind('.');
    if (dot == std::string::npos) continue;
    std::string ext = stem.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext != "png" && ext != "jpg" && ext != "jpeg") continue;
    std::smatch m;
    if (!std::regex_search(name, m, re) || m.size() < 3) continue;
    const int pid = std::stoi(m[1].str());
    const int cam = std::stoi(m[2].str());
    if (pid < 0) {
      ++st.skipped_junk;
      continue;
    }
    ImageU8 img;
    try {
      img = read_image_rgb((fs::path(path) / name).string());
    } catch (const std::exception&) {
      ++st.skipped_unreadable;
      continue;
    }
    img = resize_bilinear(img, target_h, target_w);
    Sample s;
    s.height = target_h;
    s.width = target_w;
    s.identity = pid;
    s.camera = cam;
    s.file = name;
    s.pixels.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) s.pixels[i] = static_cast<float>(img.pixels[i]) / 255.0f;
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("ingest: no parsable images under " + path);
  return out;
}

Dataset load_reid_directory(const std::string& root, int target_h, int target_w) {
  if (fs::exists(fs::path(root) / "manifest.json")) return load_dataset(root);
  auto find_dir = [&](std::initializer_list<const char*> options) -> std::string {
    for (const char* o : options) {
      if (fs::is_directory(fs::path(root) / o)) return (fs::path(root) / o).string();
    }
    throw std::runtime_error("dataset directory " + root + " lacks " + std::string(*options.begin()) +
                             " (or an accepted alias)");
  };
  Dataset ds;
  ds.image_h = target_h;
  ds.image_w = target_w;
  struct Part {
    std::string dir;
    Split split;
  };
  const Part parts[] = {
      {find_dir({"train", "bounding_box_train"}), Split::Train},
      {find_dir({"query"}), Split::Query},
      {find_dir({"gallery", "bounding_box_test"}), Split::Gallery},
  };
  for (const Part& part : parts) {
    IngestStats st;
    std::vector<Sample> samples = ingest_directory(part.dir, target_h, target_w,
                                                   R"(^(-?\d+)_c(\d+).*)", &st);
    for (Sample& s : samples) {
      s.split = part.split;
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// sampling and augmentation
// ---------------------------------------------------------------------------

PKBatch pk_sample(const Dataset& ds, std::span<const std::size_t> pool, int p, int k, Rng& rng) {
  check(p >= 1 && k >= 1, "pk_sample: p and k must be >= 1");
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t idx : pool) by_id[ds.samples[idx].identity].push_back(idx);
  check(static_cast<int>(by_id.size()) >= p,
        "pk_sample: pool has " + std::to_string(by_id.size()) + " identities, need " + std::to_string(p));

  std::vector<int> ids;
  ids.reserve(by_id.size());
  for (const auto& [id, _] : by_id) ids.push_back(id);
  for (int i = 0; i < p; ++i) {
    const int j = i + rng.uniform_int(static_cast<int>(ids.size()) - i);
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }

  PKBatch batch;
  batch.p = p;
  batch.k = k;
  for (int i = 0; i < p; ++i) {
    std::vector<std::size_t> avail = by_id[ids[static_cast<std::size_t>(i)]];
    if (static_cast<int>(avail.size()) >= k) {
      for (int t = 0; t < k; ++t) {
        const int j = t + rng.uniform_int(static_cast<int>(avail.size()) - t);
        std::swap(avail[static_cast<std::size_t>(t)], avail[static_cast<std::size_t>(j)]);
        batch.indices.push_back(avail[static_cast<std::size_t>(t)]);
      }
    } else {
      for (int t = 0; t < k; ++t) {
        batch.indices.push_back(avail[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(avail.size())))]);
      }
    }
  }
  return batch;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
  Sample out = s;
  if (rng.bernoulli(cfg.flip_prob)) {
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width / 2; ++x) {
        for (int c = 0; c < 3; ++c) {
          std::swap(out.pixels[(static_cast<std::size_t>(y) * s.width + x) * 3 + c],
                    out.pixels[(static_cast<std::size_t>(y) * s.width + (s.width - 1 - x)) * 3 + c]);
        }
      }
    }
  }
  if (rng.bernoulli(cfg.erase_prob)) {
    const double total = static_cast<double>(s.height) * s.width;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double area = rng.uniform(cfg.erase_area_lo, cfg.erase_area_hi) * total;
      const double aspect = rng.uniform(cfg.erase_aspect_lo, cfg.erase_aspect_hi);
      const int eh = static_cast<int>(std::lround(std::sqrt(area * aspect)));
      const int ew = static_cast<int>(std::lround(std::sqrt(area / aspect)));
      if (eh < 1 || ew < 1 || eh >= s.height || ew >= s.width) continue;
      const int y0 = rng.uniform_int(s.height - eh + 1);
      const int x0 = rng.uniform_int(s.width - ew + 1);
      for (int y = y0; y < y0 + eh; ++y) {
        for (int x = x0; x < x0 + ew; ++x) {
          for (int c = 0; c < 3; ++c) {
            out.pixels[(static_cast<std::size_t>(y) * s.width + x) * 3 + c] = static_cast<float>(rng.uniform());
          }
        }
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// disk round-trip
// ---------------------------------------------------------------------------

void write_dataset(const Dataset& ds, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw std::runtime_error("cannot create dataset directory: " + dir);
  nlohmann::json manifest = nlohmann::json::array();
  for (const Sample& s : ds.samples) {
    check(!s.file.empty(), "write_dataset: sample lacks a file name");
    ImageU8 img;
    img.height = s.height;
    img.width = s.width;
    img.pixels.resize(s.pixels.size());
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(s.pixels[i] * 255.0f));
    }
    write_png_rgb((fs::path(dir) / s.file).string(), img);
    manifest.push_back({{"file", s.file}, {"id", s.identity}, {"cam", s.camera}, {"split", split_name(s.split)}});
  }
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest.json under " + dir);
  out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!in) throw std::runtime_error("missing manifest.json under " + dir);
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (!manifest.is_array() || manifest.empty()) throw std::runtime_error("manifest.json must be a non-empty list");
  Dataset ds;
  for (const auto& entry : manifest) {
    Sample s;
    s.file = entry.at("file").get<std::string>();
    s.identity = entry.at("id").get<int>();
    s.camera = entry.at("cam").get<int>();
    s.split = split_from_name(entry.at("split").get<std::string>());
    ImageU8 img = read_image_rgb((fs::path(dir) / s.file).string());
    s.height = img.height;
    s.width = img.width;
    s.pixels.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) s.pixels[i] = static_cast<float>(img.pixels[i]) / 255.0f;
    if (ds.image_h == 0) {
      ds.image_h = s.height;
      ds.image_w = s.width;
    } else {
      check(ds.image_h == s.height && ds.image_w == s.width, "load_dataset: inconsistent image sizes");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace omrd
