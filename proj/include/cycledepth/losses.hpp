#pragma once

#include <array>
#include <sstream>

#include "cycledepth/cycle.hpp"
#include "cycledepth/data.hpp"

namespace cycledepth {

enum class DistMode { none, disparity, feature };
enum class ReconVariant { downsampled_compare, upsample_full };

inline const char* to_string(DistMode m) {
  switch (m) {
    case DistMode::none: return "none";
    case DistMode::disparity: return "disparity";
    case DistMode::feature: return "feature";
  }
  return "?";
}

inline const char* to_string(ReconVariant v) {
  return v == ReconVariant::downsampled_compare ? "downsampled_compare" : "upsample_full";
}

struct LossWeights {
  double lambda_s = 1.0;
  double lambda_b = 0.1;
  double lambda_t = 1.0;
  double alpha = 0.85;  // SSIM share of the appearance term
  double lambda_dist = 0.0;
  DistMode dist_mode = DistMode::none;
  ReconVariant recon_variant = ReconVariant::upsample_full;

  void validate() const {
    if (lambda_s < 0 || lambda_b < 0 || lambda_t < 0 || lambda_dist < 0) {
      throw ConfigError("loss: lambda weights must be non-negative");
    }
    if (alpha < 0 || alpha > 1) throw ConfigError("loss: alpha must be in [0, 1]");
  }
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;                       // scalar node carrying the graph
  double total_value = 0;
  std::array<double, 4> rec_per_scale{};       // weighted, by scale n
  std::array<double, 3> rec_per_network{};     // weighted, G_s / G_b / G_i
  double dist = 0;                             // unweighted distillation term

  std::string json_line(i64 step) const {
    std::ostringstream os;
    os.precision(10);
    os << "{\"step\":" << step << ",\"total\":" << total_value
       << ",\"rec_s\":" << rec_per_network[0] << ",\"rec_b\":" << rec_per_network[1]
       << ",\"rec_t\":" << rec_per_network[2] << ",\"dist\":" << dist << "}";
    return os.str();
  }
};

// Mean over valid 3x3 windows of (1 - SSIM)/2 with C1 = 0.01^2, C2 = 0.03^2
// on a [0,1] dynamic range.
template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& x, const Tensor<T>& y) {
  check_same_shape(x.shape(), y.shape(), "ssim_loss");
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  Tensor<T> mu_x = avg_pool3x3(x);
  Tensor<T> mu_y = avg_pool3x3(y);
  Tensor<T> ex2 = avg_pool3x3(mul(x, x));
  Tensor<T> ey2 = avg_pool3x3(mul(y, y));
  Tensor<T> exy = avg_pool3x3(mul(x, y));
  Tensor<T> mu_xy = mul(mu_x, mu_y);
  Tensor<T> sigma_x = sub(ex2, mul(mu_x, mu_x));
  Tensor<T> sigma_y = sub(ey2, mul(mu_y, mu_y));
  Tensor<T> sigma_xy = sub(exy, mu_xy);
  const Shape& ps = mu_x.shape();
  Tensor<T> c1t = Tensor<T>::full(ps, static_cast<T>(c1));
  Tensor<T> c2t = Tensor<T>::full(ps, static_cast<T>(c2));
  Tensor<T> num = mul(add(scale(mu_xy, 2.0), c1t), add(scale(sigma_xy, 2.0), c2t));
  Tensor<T> den =
      mul(add(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1t), add(add(sigma_x, sigma_y), c2t));
  Tensor<T> ssim_map = div(num, den);
  Tensor<T> ones = Tensor<T>::full(ps, T(1));
  return scale(reduce_mean(sub(ones, ssim_map)), 0.5);
}

// alpha * ssim_loss + (1 - alpha) * L1.
template <typename T>
Tensor<T> appearance_loss(const Tensor<T>& synth, const Tensor<T>& real, double alpha) {
  check_same_shape(synth.shape(), real.shape(), "appearance_loss");
  Tensor<T> l1 = reduce_mean_abs(sub(synth, real));
  if (alpha == 0.0) return l1;
  return add(scale(ssim_loss(synth, real), alpha), scale(l1, 1.0 - alpha));
}

// L1 against a gradient-stopped reference; only the first argument's
// producers receive gradients.
template <typename T>
Tensor<T> disparity_distillation_loss(const DisparityMap<T>& d, const DisparityMap<T>& d_ref) {
  if (d.scale != 0 || d_ref.scale != 0) {
    throw ShapeError("disparity_distillation_loss: both maps must be at scale 0, got scales " +
                     std::to_string(d.scale) + " and " + std::to_string(d_ref.scale));
  }
  check_same_shape(d.tensor.shape(), d_ref.tensor.shape(), "disparity_distillation_loss");
  return reduce_mean_abs(sub(d.tensor, stop_gradient(d_ref.tensor)));
}

// Sum over scales of the mean squared difference against gradient-stopped
// teacher features.
template <typename T>
Tensor<T> feature_distillation_loss(std::span<const Tensor<T>> student_feats,
                                    std::span<const Tensor<T>> teacher_feats) {
  if (student_feats.size() != teacher_feats.size() || student_feats.empty()) {
    throw ShapeError("feature_distillation_loss: feature list size mismatch");
  }
  Tensor<T> total;
  for (size_t n = 0; n < student_feats.size(); ++n) {
    check_same_shape(student_feats[n].shape(), teacher_feats[n].shape(),
                     "feature_distillation_loss");
    Tensor<T> term = reduce_mean_sq(sub(student_feats[n], stop_gradient(teacher_feats[n])));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
Tensor<T> feature_distillation_loss(const std::array<Tensor<T>, 3>& student_feats,
                                    const std::array<Tensor<T>, 3>& teacher_feats) {
  return feature_distillation_loss(std::span<const Tensor<T>>(student_feats.data(), 3),
                                   std::span<const Tensor<T>>(teacher_feats.data(), 3));
}

namespace loss_detail {

template <typename T>
struct Branch {
  const ForwardOutputs<T>* outputs = nullptr;
  Tensor<T> full_synth;  // the scale-0 synthesis already produced by the cycle
  Tensor<T> source;
  Tensor<T> target;
  WarpDirection dir = WarpDirection::synthesize_left;
  double lambda = 0;
};

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& term) {
  acc = acc.defined() ? add(acc, term) : term;
}

}  // namespace loss_detail

// Multi-scale reconstruction loss over the active branches (Eq. 6-7 style).
// upsample_full: every low-resolution disparity is upsampled to full
// resolution and warped there; SSIM applies at scale 0 only, L1 elsewhere.
// downsampled_compare: synthesis happens at scale n against 2x2
// area-downsampled targets, full appearance term at every scale.
template <typename T>
LossBreakdown<T> reconstruction_loss(const CycleOutputs<T>& cycle, const Batch<T>& images,
                                     const LossWeights& weights) {
  weights.validate();
  if (weights.lambda_b > 0 && !cycle.backward_net) {
    throw StateError("reconstruction_loss: lambda_b > 0 but the backward branch is missing");
  }
  if (weights.lambda_t > 0 && !cycle.refined) {
    throw StateError("reconstruction_loss: lambda_t > 0 but the refined branch is missing");
  }

  std::array<loss_detail::Branch<T>, 3> branches;
  branches[0] = {&cycle.student, cycle.left_synth, images.right, images.left,
                 WarpDirection::synthesize_left, weights.lambda_s};
  if (cycle.backward_net) {
    branches[1] = {&*cycle.backward_net, cycle.right_synth, cycle.left_synth, images.right,
                   WarpDirection::synthesize_right, weights.lambda_b};
  }
  if (cycle.refined) {
    branches[2] = {&*cycle.refined, cycle.left_synth_refined, images.right, images.left,
                   WarpDirection::synthesize_left, weights.lambda_t};
  }

  // Target/source pyramids for the legacy variant, built lazily per scale.
  std::array<std::array<Tensor<T>, 4>, 3> src_pyr;
  std::array<std::array<Tensor<T>, 4>, 3> tgt_pyr;
  for (size_t b = 0; b < 3; ++b) {
    if (branches[b].lambda > 0 && branches[b].outputs) {
      src_pyr[b][0] = branches[b].source;
      tgt_pyr[b][0] = branches[b].target;
    }
  }

  LossBreakdown<T> out;
  for (int n = 0; n < 4; ++n) {
    Tensor<T> scale_total;
    for (size_t b = 0; b < 3; ++b) {
      loss_detail::Branch<T>& branch = branches[b];
      if (branch.lambda <= 0 || !branch.outputs) continue;
      Tensor<T> term;
      if (weights.recon_variant == ReconVariant::upsample_full) {
        if (n == 0) {
          term = appearance_loss(branch.full_synth, branch.target, weights.alpha);
        } else {
          DisparityMap<T> up = upsample_disparity_full(branch.outputs->disparities[n]);
          Tensor<T> synth = warp(up, branch.source, branch.dir);
          term = reduce_mean_abs(sub(synth, branch.target));
        }
      } else {
        if (n == 0) {
          term = appearance_loss(branch.full_synth, branch.target, weights.alpha);
        } else {
          if (!src_pyr[b][n].defined()) {
            for (int m = 1; m <= n; ++m) {
              if (!src_pyr[b][m].defined()) {
                src_pyr[b][m] = avg_downsample2x2(src_pyr[b][m - 1]);
                tgt_pyr[b][m] = avg_downsample2x2(tgt_pyr[b][m - 1]);
              }
            }
          }
          const DisparityMap<T>& dmap = branch.outputs->disparities[n];
          // Disparity values are stored in full-resolution pixels; convert to
          // this scale's pixel units before sampling.
          DisparityMap<T> local(scale(dmap.tensor, 1.0 / static_cast<double>(i64(1) << n)),
                                dmap.scale, dmap.frame);
          Tensor<T> synth = warp(local, src_pyr[b][n], branch.dir);
          term = appearance_loss(synth, tgt_pyr[b][n], weights.alpha);
        }
      }
      Tensor<T> weighted = scale(term, branch.lambda);
      const double value = static_cast<double>(weighted.value());
      out.rec_per_scale[n] += value;
      out.rec_per_network[b] += value;
      loss_detail::add_into(scale_total, weighted);
    }
    if (scale_total.defined()) loss_detail::add_into(out.total, scale_total);
  }
  if (!out.total.defined()) {
    throw StateError("reconstruction_loss: no active branch (all lambda weights are zero)");
  }
  out.total_value = static_cast<double>(out.total.value());
  return out;
}

// Eq. 10: total = L_rec + lambda_dist * L_dist.
template <typename T>
Tensor<T> total_loss(const LossBreakdown<T>& rec, const Tensor<T>& dist,
                     const LossWeights& weights) {
  if (weights.dist_mode == DistMode::none || weights.lambda_dist == 0.0 || !dist.defined()) {
    return rec.total;
  }
  return add(rec.total, scale(dist, weights.lambda_dist));
}

// Convenience wrapper: the full training objective with its breakdown.
template <typename T>
LossBreakdown<T> compute_objective(const CycleOutputs<T>& cycle, const Batch<T>& images,
                                   const LossWeights& weights) {
  LossBreakdown<T> breakdown = reconstruction_loss(cycle, images, weights);
  Tensor<T> dist;
  if (weights.dist_mode == DistMode::disparity) {
    if (!cycle.refined) throw StateError("objective: disparity distillation needs the teacher");
    dist = disparity_distillation_loss(cycle.student.disparities[0], cycle.refined->disparities[0]);
  } else if (weights.dist_mode == DistMode::feature) {
    if (!cycle.refined) throw StateError("objective: feature distillation needs the teacher");
    dist = feature_distillation_loss(cycle.student.features, cycle.refined->features);
  }
  if (dist.defined()) breakdown.dist = static_cast<double>(dist.value());
  breakdown.total = total_loss(breakdown, dist, weights);
  breakdown.total_value = static_cast<double>(breakdown.total.value());
  return breakdown;
}

}  // namespace cycledepth
