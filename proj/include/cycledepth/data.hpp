#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cycledepth/image_io.hpp"
#include "cycledepth/tensor.hpp"

namespace cycledepth {

struct CameraParams {
  double focal_length_px = 0;  // f
  double baseline_m = 0;       // b

  double fb() const { return focal_length_px * baseline_m; }

  void validate() const {
    if (focal_length_px <= 0 || baseline_m <= 0) {
      throw ConfigError("camera: focal length and baseline must be positive");
    }
  }
};

// A rectified pair with optional left-frame ground-truth disparity in
// full-resolution pixels.
struct StereoSample {
  ImageF left;
  ImageF right;
  std::optional<ImageF> gt_disparity;
  CameraParams camera;
  std::string id;
};

struct LayerSpec {
  i64 x0 = 0;
  i64 y0 = 0;
  i64 x1 = 0;  // exclusive
  i64 y1 = 0;  // exclusive
  double disparity = 0;
  u64 texture_seed = 0;
};

struct SceneSpec {
  i64 width = 0;
  i64 height = 0;
  double background_disparity = 0;
  std::vector<LayerSpec> layers;
  u64 seed = 0;
};

// Renders a rectified pair far-to-near with smoothed-noise textures. The
// right view shows each surface shifted left by its disparity; gt_disparity
// is the disparity of the visible surface at each left-view pixel. Output
// images are quantized to 8-bit levels so disk round-trips are lossless.
StereoSample generate_scene(const SceneSpec& spec, const CameraParams& camera);
StereoSample generate_scene(const SceneSpec& spec);

struct Dataset {
  std::vector<StereoSample> train;
  std::vector<StereoSample> heldout;
  CameraParams camera;
  i64 width = 0;
  i64 height = 0;
  u64 seed = 0;
};

// Deterministic synthetic dataset with a 90/10 train/held-out split.
// Layer disparities are integers in (background, 0.15*width].
Dataset make_dataset(i64 count, i64 width, i64 height, u64 seed);

// Horizontal mirror of both views with the left/right roles swapped and the
// ground truth mirrored; an involution that preserves rectified geometry.
StereoSample augment_flip(const StereoSample& sample, bool coin);

// depth = fb / max(disparity, min_disp), in meters.
std::vector<double> disparity_to_depth(std::span<const float> disparity,
                                       const CameraParams& camera, double min_disp);

// Dataset directory layout: <id>_left.ppm, <id>_right.ppm, <id>_disp.pfm and
// manifest.json.
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

// ---- batch assembly ----------------------------------------------------

template <typename T>
struct Batch {
  Tensor<T> left;
  Tensor<T> right;
  Tensor<T> gt;  // defined only when every sample carries ground truth
  CameraParams camera;
};

template <typename T>
Batch<T> make_batch(std::span<const StereoSample* const> samples) {
  if (samples.empty()) throw ValueError("make_batch: empty sample list");
  const ImageF& first = samples[0]->left;
  const i64 n = static_cast<i64>(samples.size());
  const i64 h = first.height, w = first.width;
  bool all_gt = true;
  for (const StereoSample* s : samples) {
    if (s->left.height != h || s->left.width != w || s->right.height != h ||
        s->right.width != w) {
      throw ShapeError("make_batch: inconsistent sample dimensions");
    }
    all_gt = all_gt && s->gt_disparity.has_value();
  }
  std::vector<T> left(static_cast<size_t>(n * 3 * h * w));
  std::vector<T> right(left.size());
  std::vector<T> gt(all_gt ? static_cast<size_t>(n * h * w) : 0);
  for (i64 i = 0; i < n; ++i) {
    const StereoSample* s = samples[static_cast<size_t>(i)];
    for (i64 j = 0; j < 3 * h * w; ++j) {
      left[static_cast<size_t>(i * 3 * h * w + j)] = static_cast<T>(s->left.data[j]);
      right[static_cast<size_t>(i * 3 * h * w + j)] = static_cast<T>(s->right.data[j]);
    }
    if (all_gt) {
      for (i64 j = 0; j < h * w; ++j) {
        gt[static_cast<size_t>(i * h * w + j)] = static_cast<T>(s->gt_disparity->data[j]);
      }
    }
  }
  Batch<T> batch;
  batch.left = Tensor<T>::from_vector(Shape{n, 3, h, w}, std::move(left));
  batch.right = Tensor<T>::from_vector(Shape{n, 3, h, w}, std::move(right));
  if (all_gt) batch.gt = Tensor<T>::from_vector(Shape{n, 1, h, w}, std::move(gt));
  batch.camera = samples[0]->camera;
  return batch;
}

}  // namespace cycledepth
