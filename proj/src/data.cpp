#include "cycledepth/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cycledepth/rng.hpp"

namespace cycledepth {

namespace {

double lattice_value(u64 seed, i64 gx, i64 gy) {
  u64 s = seed;
  s ^= static_cast<u64>(gx) * 0x9e3779b97f4a7c15ULL;
  s ^= static_cast<u64>(gy) * 0xc2b2ae3d27d4eb4fULL;
  u64 z = splitmix64(s);
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Smoothed value noise over an unbounded (u, v) domain.
double value_noise(u64 seed, double u, double v, double cell) {
  const double fu = u / cell;
  const double fv = v / cell;
  const i64 gu = static_cast<i64>(std::floor(fu));
  const i64 gv = static_cast<i64>(std::floor(fv));
  const double tu = smoothstep(fu - static_cast<double>(gu));
  const double tv = smoothstep(fv - static_cast<double>(gv));
  const double v00 = lattice_value(seed, gu, gv);
  const double v10 = lattice_value(seed, gu + 1, gv);
  const double v01 = lattice_value(seed, gu, gv + 1);
  const double v11 = lattice_value(seed, gu + 1, gv + 1);
  return (v00 * (1 - tu) + v10 * tu) * (1 - tv) + (v01 * (1 - tu) + v11 * tu) * tv;
}

// Two-octave texture per channel, values kept away from 0/1 so quantization
// headroom remains on both sides.
double texture_value(u64 seed, int channel, double u, double v) {
  const u64 ch_seed = derive_seed(seed, static_cast<u64>(channel) + 101);
  const double n1 = value_noise(ch_seed, u, v, 9.0);
  const double n2 = value_noise(derive_seed(ch_seed, 7), u, v, 4.0);
  return 0.12 + 0.76 * (0.65 * n1 + 0.35 * n2);
}

float quantize8(double v) {
  v = std::min(1.0, std::max(0.0, v));
  return static_cast<float>(std::lround(v * 255.0)) / 255.0f;
}

}  // namespace

StereoSample generate_scene(const SceneSpec& spec, const CameraParams& camera) {
  if (spec.width <= 0 || spec.height <= 0) {
    throw ValueError("scene: non-positive dimensions");
  }
  if (spec.background_disparity < 0) {
    throw ValueError("scene: background disparity must be >= 0");
  }
  for (const LayerSpec& layer : spec.layers) {
    if (layer.disparity <= spec.background_disparity) {
      throw ValueError("scene: layer disparity must exceed the background disparity");
    }
    if (layer.x1 <= layer.x0 || layer.y1 <= layer.y0) {
      throw ValueError("scene: degenerate layer rectangle");
    }
  }

  const i64 w = spec.width, h = spec.height;
  StereoSample sample;
  sample.left = ImageF(3, h, w);
  sample.right = ImageF(3, h, w);
  sample.gt_disparity = ImageF(1, h, w);
  sample.camera = camera;

  const u64 bg_seed = derive_seed(spec.seed, 0xb6);
  const double bg_d = spec.background_disparity;
  for (i64 y = 0; y < h; ++y) {
    for (i64 x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        sample.left.at(c, y, x) = static_cast<float>(texture_value(bg_seed, c, x, y));
        sample.right.at(c, y, x) =
            static_cast<float>(texture_value(bg_seed, c, static_cast<double>(x) + bg_d, y));
      }
      sample.gt_disparity->at(0, y, x) = static_cast<float>(bg_d);
    }
  }

  // Painter's algorithm: render far-to-near so nearer layers overwrite.
  std::vector<size_t> order(spec.layers.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return spec.layers[a].disparity < spec.layers[b].disparity;
  });

  for (size_t idx : order) {
    const LayerSpec& layer = spec.layers[idx];
    const double d = layer.disparity;
    const i64 y0 = std::max<i64>(0, layer.y0);
    const i64 y1 = std::min(h, layer.y1);
    // Left view: the layer occupies its own rectangle.
    for (i64 y = y0; y < y1; ++y) {
      for (i64 x = std::max<i64>(0, layer.x0); x < std::min(w, layer.x1); ++x) {
        for (int c = 0; c < 3; ++c) {
          sample.left.at(c, y, x) = static_cast<float>(
              texture_value(layer.texture_seed, c, static_cast<double>(x - layer.x0), y - layer.y0));
        }
        sample.gt_disparity->at(0, y, x) = static_cast<float>(d);
      }
    }
    // Right view: shifted left by the layer disparity.
    const i64 rx0 = static_cast<i64>(std::ceil(static_cast<double>(layer.x0) - d));
    const i64 rx1 = static_cast<i64>(std::ceil(static_cast<double>(layer.x1) - d));
    for (i64 y = y0; y < y1; ++y) {
      for (i64 x = std::max<i64>(0, rx0); x < std::min(w, rx1); ++x) {
        for (int c = 0; c < 3; ++c) {
          sample.right.at(c, y, x) = static_cast<float>(texture_value(
              layer.texture_seed, c, static_cast<double>(x) + d - static_cast<double>(layer.x0),
              y - layer.y0));
        }
      }
    }
  }

  for (auto& v : sample.left.data) v = quantize8(v);
  for (auto& v : sample.right.data) v = quantize8(v);
  return sample;
}

StereoSample generate_scene(const SceneSpec& spec) {
  CameraParams camera{static_cast<double>(spec.width), 0.15};
  return generate_scene(spec, camera);
}

Dataset make_dataset(i64 count, i64 width, i64 height, u64 seed) {
  if (count < 2) throw ValueError("make_dataset: count must be >= 2");
  Dataset ds;
  ds.camera = CameraParams{static_cast<double>(width), 0.15};
  ds.width = width;
  ds.height = height;
  ds.seed = seed;
  const i64 d_cap = static_cast<i64>(std::floor(0.15 * static_cast<double>(width)));

  for (i64 i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<u64>(i)));
    SceneSpec spec;
    spec.width = width;
    spec.height = height;
    spec.seed = derive_seed(seed, static_cast<u64>(i) ^ 0xabcdULL);
    spec.background_disparity = static_cast<double>(rng.uniform_int(1, std::min<i64>(4, d_cap - 1)));
    const i64 layer_count = rng.uniform_int(1, 4);
    for (i64 l = 0; l < layer_count; ++l) {
      LayerSpec layer;
      const i64 lw = rng.uniform_int(width / 5, (7 * width) / 10);
      const i64 lh = rng.uniform_int(height / 4, (4 * height) / 5);
      layer.x0 = rng.uniform_int(-lw / 4, width - 1 - (3 * lw) / 4);
      layer.y0 = rng.uniform_int(-lh / 4, height - 1 - (3 * lh) / 4);
      layer.x1 = layer.x0 + lw;
      layer.y1 = layer.y0 + lh;
      layer.disparity = static_cast<double>(
          rng.uniform_int(static_cast<i64>(spec.background_disparity) + 1, d_cap));
      layer.texture_seed = rng.raw();
      spec.layers.push_back(layer);
    }
    StereoSample sample = generate_scene(spec, ds.camera);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04lld", static_cast<long long>(i));
    sample.id = buf;
    if (i % 10 == 9) {
      ds.heldout.push_back(std::move(sample));
    } else {
      ds.train.push_back(std::move(sample));
    }
  }
  return ds;
}

StereoSample augment_flip(const StereoSample& sample, bool coin) {
  if (!coin) return sample;
  StereoSample out;
  out.id = sample.id;
  out.camera = sample.camera;
  const i64 h = sample.left.height, w = sample.left.width;
  out.left = ImageF(3, h, w);
  out.right = ImageF(3, h, w);
  for (i64 c = 0; c < 3; ++c) {
    for (i64 y = 0; y < h; ++y) {
      for (i64 x = 0; x < w; ++x) {
        // New left view = mirrored right view, and vice versa.
        out.left.at(c, y, x) = sample.right.at(c, y, w - 1 - x);
        out.right.at(c, y, x) = sample.left.at(c, y, w - 1 - x);
      }
    }
  }
  if (sample.gt_disparity) {
    out.gt_disparity = ImageF(1, h, w);
    for (i64 y = 0; y < h; ++y) {
      for (i64 x = 0; x < w; ++x) {
        out.gt_disparity->at(0, y, x) = sample.gt_disparity->at(0, y, w - 1 - x);
      }
    }
  }
  return out;
}

std::vector<double> disparity_to_depth(std::span<const float> disparity,
                                       const CameraParams& camera, double min_disp) {
  if (min_disp <= 0) throw ValueError("disparity_to_depth: min_disp must be > 0");
  camera.validate();
  const double fb = camera.fb();
  std::vector<double> depth(disparity.size());
  for (size_t i = 0; i < disparity.size(); ++i) {
    depth[i] = fb / std::max(static_cast<double>(disparity[i]), min_disp);
  }
  return depth;
}

void save_dataset(const std::string& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "cycledepth-dataset";
  manifest["seed"] = dataset.seed;
  manifest["width"] = dataset.width;
  manifest["height"] = dataset.height;
  manifest["focal_length_px"] = dataset.camera.focal_length_px;
  manifest["baseline_m"] = dataset.camera.baseline_m;
  manifest["fb"] = dataset.camera.fb();
  nlohmann::json samples = nlohmann::json::array();
  auto dump = [&](const StereoSample& s, const char* split) {
    save_ppm((fs::path(dir) / (s.id + "_left.ppm")).string(), s.left);
    save_ppm((fs::path(dir) / (s.id + "_right.ppm")).string(), s.right);
    if (s.gt_disparity) {
      save_pfm((fs::path(dir) / (s.id + "_disp.pfm")).string(), *s.gt_disparity);
    }
    samples.push_back({{"id", s.id}, {"split", split}, {"has_gt", s.gt_disparity.has_value()}});
  };
  for (const auto& s : dataset.train) dump(s, "train");
  for (const auto& s : dataset.heldout) dump(s, "heldout");
  manifest["samples"] = samples;
  std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!f) throw IoError("cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
  if (!f) throw IoError("write failed on manifest in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  std::ifstream f(mpath);
  if (!f) throw StateError("dataset: cannot open " + mpath);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValueError("dataset: malformed manifest " + mpath + ": " + e.what());
  }
  if (manifest.value("format", "") != "cycledepth-dataset") {
    throw StateError("dataset: " + mpath + " is not a dataset manifest");
  }
  Dataset ds;
  ds.seed = manifest.at("seed").get<u64>();
  ds.width = manifest.at("width").get<i64>();
  ds.height = manifest.at("height").get<i64>();
  ds.camera.focal_length_px = manifest.at("focal_length_px").get<double>();
  ds.camera.baseline_m = manifest.at("baseline_m").get<double>();
  for (const auto& e : manifest.at("samples")) {
    StereoSample s;
    s.id = e.at("id").get<std::string>();
    s.camera = ds.camera;
    s.left = load_ppm((fs::path(dir) / (s.id + "_left.ppm")).string());
    s.right = load_ppm((fs::path(dir) / (s.id + "_right.ppm")).string());
    if (e.value("has_gt", false)) {
      s.gt_disparity = load_pfm((fs::path(dir) / (s.id + "_disp.pfm")).string());
    }
    if (e.at("split").get<std::string>() == "heldout") {
      ds.heldout.push_back(std::move(s));
    } else {
      ds.train.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace cycledepth
