#pragma once

#include "cycledepth/ops.hpp"

namespace cycledepth {

// Which image grid a disparity map is aligned to.
enum class FrameAlignment { left, right };

enum class WarpDirection { synthesize_left, synthesize_right };

// Single-channel map of horizontal offsets. Values are expressed in
// full-resolution pixels at every scale, so upsampling never rescales them.
template <typename T>
struct DisparityMap {
  Tensor<T> tensor;  // (N, 1, H/2^scale, W/2^scale)
  int scale = 0;
  FrameAlignment frame = FrameAlignment::left;

  DisparityMap() = default;
  DisparityMap(Tensor<T> t, int s, FrameAlignment f) : tensor(std::move(t)), scale(s), frame(f) {
    if (tensor.shape().c != 1) {
      throw ShapeError("disparity: expected one channel, got " + tensor.shape().str());
    }
  }
};

// Horizontal bilinear warp. Samples `source` at x - d (synthesize_left) or
// x + d (synthesize_right); the disparity is aligned to the output grid.
// Sampling coordinates are clamped to [0, W-1]; a clamped coordinate is
// treated as locally constant, so its disparity gradient is zero there.
template <typename T>
Tensor<T> warp(const DisparityMap<T>& disparity, const Tensor<T>& source, WarpDirection dir) {
  const Tensor<T>& disp = disparity.tensor;
  const Shape& ds = disp.shape();
  const Shape& ss = source.shape();
  if (ds.n != ss.n || ds.h != ss.h || ds.w != ss.w) {
    throw ShapeError("warp: disparity " + ds.str() + " does not match source " + ss.str());
  }
  if ((dir == WarpDirection::synthesize_left && disparity.frame != FrameAlignment::left) ||
      (dir == WarpDirection::synthesize_right && disparity.frame != FrameAlignment::right)) {
    throw ValueError("warp: disparity frame does not match warp direction");
  }
  for (T v : disp.data()) {
    if (v < T(0)) throw ValueError("warp: negative disparity value");
  }

  const T sign = dir == WarpDirection::synthesize_left ? T(-1) : T(1);
  const i64 n_ = ss.n, c_ = ss.c, h_ = ss.h, w_ = ss.w;
  const T* dp = disp.data().data();
  const T* sp = source.data().data();
  std::vector<T> out(static_cast<size_t>(ss.numel()));
  for (i64 n = 0; n < n_; ++n) {
    const T* drow0 = dp + n * h_ * w_;
    for (i64 c = 0; c < c_; ++c) {
      const T* splane = sp + (n * c_ + c) * h_ * w_;
      T* oplane = out.data() + (n * c_ + c) * h_ * w_;
      for (i64 y = 0; y < h_; ++y) {
        const T* drow = drow0 + y * w_;
        const T* srow = splane + y * w_;
        T* orow = oplane + y * w_;
        for (i64 x = 0; x < w_; ++x) {
          T p = static_cast<T>(x) + sign * drow[x];
          if (p < T(0)) p = T(0);
          if (p > static_cast<T>(w_ - 1)) p = static_cast<T>(w_ - 1);
          const i64 x0 = static_cast<i64>(std::floor(p));
          const i64 x1 = std::min(x0 + 1, w_ - 1);
          const T f = p - static_cast<T>(x0);
          orow[x] = (T(1) - f) * srow[x0] + f * srow[x1];
        }
      }
    }
  }

  auto dnode = disp.node();
  auto snode = source.node();
  auto fn = [dnode, snode, sign](TensorNode<T>& self) {
    const Shape& ss2 = self.shape;
    const i64 n2 = ss2.n, c2 = ss2.c, h2 = ss2.h, w2 = ss2.w;
    const T* g = self.grad.data();
    const T* dp2 = dnode->data.data();
    const T* sp2 = snode->data.data();
    const bool need_d = dnode->requires_grad;
    const bool need_s = snode->requires_grad;
    if (need_d) dnode->ensure_grad();
    if (need_s) snode->ensure_grad();
    for (i64 n = 0; n < n2; ++n) {
      const T* drow0 = dp2 + n * h2 * w2;
      T* ddrow0 = need_d ? dnode->grad.data() + n * h2 * w2 : nullptr;
      for (i64 c = 0; c < c2; ++c) {
        const T* splane = sp2 + (n * c2 + c) * h2 * w2;
        T* dsplane = need_s ? snode->grad.data() + (n * c2 + c) * h2 * w2 : nullptr;
        const T* gplane = g + (n * c2 + c) * h2 * w2;
        for (i64 y = 0; y < h2; ++y) {
          const T* drow = drow0 + y * w2;
          const T* srow = splane + y * w2;
          const T* grow = gplane + y * w2;
          for (i64 x = 0; x < w2; ++x) {
            const T raw = static_cast<T>(x) + sign * drow[x];
            const bool clamped = raw < T(0) || raw > static_cast<T>(w2 - 1);
            T p = raw;
            if (p < T(0)) p = T(0);
            if (p > static_cast<T>(w2 - 1)) p = static_cast<T>(w2 - 1);
            const i64 x0 = static_cast<i64>(std::floor(p));
            const i64 x1 = std::min(x0 + 1, w2 - 1);
            const T f = p - static_cast<T>(x0);
            const T gv = grow[x];
            if (need_s) {
              dsplane[y * w2 + x0] += (T(1) - f) * gv;
              dsplane[y * w2 + x1] += f * gv;
            }
            if (need_d && !clamped) {
              ddrow0[y * w2 + x] += sign * (srow[x1] - srow[x0]) * gv;
            }
          }
        }
      }
    }
  };
  return make_op<T>(ss, std::move(out), {dnode, snode}, fn);
}

// Nearest-neighbor upsample of a scale-n disparity map to scale 0. Values are
// already in full-resolution pixels, so only the grid changes.
template <typename T>
DisparityMap<T> upsample_disparity_full(const DisparityMap<T>& disparity) {
  if (disparity.scale == 0) return disparity;
  if (disparity.scale < 0 || disparity.scale > 3) {
    throw ValueError("upsample_disparity_full: scale must be in {0,1,2,3}");
  }
  const i64 factor = i64(1) << disparity.scale;
  return DisparityMap<T>(upsample_nearest(disparity.tensor, factor), 0, disparity.frame);
}

}  // namespace cycledepth
