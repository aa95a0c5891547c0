#include "cycledepth/gradcheck.hpp"

#include "cycledepth/pipeline.hpp"

namespace cycledepth {

namespace {

using gradcheck_detail::mask_for;
using gradcheck_detail::masked_case;
using gradcheck_detail::rand_disparity;
using gradcheck_detail::rand_leaf;

Tensor<double> masked_mean(const Tensor<double>& out, const Tensor<double>& mask) {
  return reduce_mean(mul(out, mask));
}

// Hand-assembled single-branch cycle for the reconstruction-loss cases.
CycleOutputs<double> student_only_cycle(const std::array<Tensor<double>, 4>& disparities,
                                        const Tensor<double>& right) {
  CycleOutputs<double> cycle;
  for (int n = 0; n < 4; ++n) {
    cycle.student.disparities[static_cast<size_t>(n)] =
        DisparityMap<double>(disparities[static_cast<size_t>(n)], n, FrameAlignment::left);
  }
  cycle.left_synth =
      warp(cycle.student.disparities[0], right, WarpDirection::synthesize_left);
  return cycle;
}

double reconstruction_case(u64 seed, bool corrupt, ReconVariant variant) {
  Rng rng(seed);
  const i64 h = variant == ReconVariant::downsampled_compare ? 24 : 8;
  const i64 w = h;
  std::array<Tensor<double>, 4> d;
  for (int n = 0; n < 4; ++n) {
    d[static_cast<size_t>(n)] = rand_disparity(Shape{1, 1, h >> n, w >> n}, rng, 2);
  }
  LossWeights weights;
  weights.lambda_s = 1.0;
  weights.lambda_b = 0.0;
  weights.lambda_t = 0.0;
  weights.recon_variant = variant;
  Batch<double> batch;
  batch.left = Tensor<double>::uniform(Shape{1, 3, h, w}, rng, 0.0, 1.0);
  batch.right = Tensor<double>::uniform(Shape{1, 3, h, w}, rng, 0.0, 1.0);
  auto build = [&]() {
    CycleOutputs<double> cycle = student_only_cycle(d, batch.right);
    return reconstruction_loss(cycle, batch, weights).total;
  };
  return masked_case({d[0], d[1], d[2], d[3]}, build, corrupt);
}

std::vector<Tensor<double>> sampled_param_leaves(const NetworkBundle<double>& bundle) {
  std::vector<Tensor<double>> leaves;
  for (const auto& p : bundle.all_parameters()) leaves.push_back(p->value);
  return leaves;
}

}  // namespace

std::vector<GradCase> gradcheck_registry() {
  std::vector<GradCase> cases;

  cases.push_back({"conv2d", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    const i64 stride = 1 + static_cast<i64>(seed % 2);
    const i64 padding = static_cast<i64>((seed / 2) % 2);
    Tensor<double> input = rand_leaf(Shape{1, 2, 5, 6}, rng, -1.0, 1.0);
    Tensor<double> weight = rand_leaf(Shape{3, 2, 3, 3}, rng, -1.0, 1.0);
    Tensor<double> bias = rand_leaf(Shape{3, 1, 1, 1}, rng, -1.0, 1.0);
    Tensor<double> out = conv2d(input, weight, bias, stride, padding);
    Tensor<double> mask = mask_for(out.shape(), rng);
    auto build = [=]() { return masked_mean(conv2d(input, weight, bias, stride, padding), mask); };
    return masked_case({input, weight, bias}, build, corrupt);
  }});

  cases.push_back({"upsample_nearest", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> input = rand_leaf(Shape{1, 2, 3, 4}, rng, -1.0, 1.0);
    Tensor<double> mask = mask_for(Shape{1, 2, 6, 8}, rng);
    auto build = [=]() { return masked_mean(upsample_nearest(input, 2), mask); };
    return masked_case({input}, build, corrupt);
  }});

  auto binary_case = [](const char* name, auto op, double lo_b, double hi_b) {
    return GradCase{name, [op, lo_b, hi_b](u64 seed, bool corrupt) {
      Rng rng(seed);
      Tensor<double> a = rand_leaf(Shape{2, 1, 3, 3}, rng, -1.0, 1.0);
      Tensor<double> b = rand_leaf(Shape{2, 1, 3, 3}, rng, lo_b, hi_b);
      Tensor<double> mask = mask_for(a.shape(), rng);
      auto build = [=]() { return masked_mean(op(a, b), mask); };
      return masked_case({a, b}, build, corrupt);
    }};
  };
  cases.push_back(binary_case(
      "elementwise_add", [](auto a, auto b) { return add(a, b); }, -1.0, 1.0));
  cases.push_back(binary_case(
      "elementwise_sub", [](auto a, auto b) { return sub(a, b); }, -1.0, 1.0));
  cases.push_back(binary_case(
      "elementwise_mul", [](auto a, auto b) { return mul(a, b); }, -1.0, 1.0));
  cases.push_back(binary_case(
      "elementwise_div", [](auto a, auto b) { return div(a, b); }, 0.3, 1.3));

  cases.push_back({"elementwise_sigmoid", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> a = rand_leaf(Shape{1, 1, 4, 5}, rng, -2.0, 2.0);
    Tensor<double> mask = mask_for(a.shape(), rng);
    auto build = [=]() { return masked_mean(sigmoid(a), mask); };
    return masked_case({a}, build, corrupt);
  }});

  cases.push_back({"elementwise_elu", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> a = rand_leaf(Shape{1, 1, 4, 5}, rng, -2.0, 2.0);
    Tensor<double> mask = mask_for(a.shape(), rng);
    auto build = [=]() { return masked_mean(elu(a), mask); };
    return masked_case({a}, build, corrupt);
  }});

  cases.push_back({"elementwise_scale", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> a = rand_leaf(Shape{1, 1, 4, 5}, rng, -1.0, 1.0);
    Tensor<double> mask = mask_for(a.shape(), rng);
    auto build = [=]() { return masked_mean(scale(a, 0.7), mask); };
    return masked_case({a}, build, corrupt);
  }});

  cases.push_back({"concat_channels", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> a = rand_leaf(Shape{1, 1, 3, 3}, rng, -1.0, 1.0);
    Tensor<double> b = rand_leaf(Shape{1, 2, 3, 3}, rng, -1.0, 1.0);
    Tensor<double> c = rand_leaf(Shape{1, 3, 3, 3}, rng, -1.0, 1.0);
    Tensor<double> mask = mask_for(Shape{1, 6, 3, 3}, rng);
    auto build = [=]() { return masked_mean(concat_channels<double>({a, b, c}), mask); };
    return masked_case({a, b, c}, build, corrupt);
  }});

  cases.push_back({"avg_pool3x3", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> a = rand_leaf(Shape{1, 2, 5, 6}, rng, -1.0, 1.0);
    Tensor<double> mask = mask_for(Shape{1, 2, 3, 4}, rng);
    auto build = [=]() { return masked_mean(avg_pool3x3(a), mask); };
    return masked_case({a}, build, corrupt);
  }});

  cases.push_back({"avg_downsample2x2", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> a = rand_leaf(Shape{1, 2, 4, 6}, rng, -1.0, 1.0);
    Tensor<double> mask = mask_for(Shape{1, 2, 2, 3}, rng);
    auto build = [=]() { return masked_mean(avg_downsample2x2(a), mask); };
    return masked_case({a}, build, corrupt);
  }});

  cases.push_back({"reduce_mean", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> a = rand_leaf(Shape{1, 2, 3, 4}, rng, -1.0, 1.0);
    auto build = [=]() { return reduce_mean(a); };
    return masked_case({a}, build, corrupt);
  }});

  cases.push_back({"reduce_mean_abs", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    // Inputs kept away from the |x| kink at zero.
    std::vector<double> v(24);
    for (auto& x : v) {
      const double u = rng.uniform(-1.0, 1.0);
      x = (u < 0 ? -1.0 : 1.0) * (0.05 + 0.95 * std::abs(u));
    }
    Tensor<double> a = Tensor<double>::from_vector(Shape{1, 2, 3, 4}, std::move(v), true);
    auto build = [=]() { return reduce_mean_abs(a); };
    return masked_case({a}, build, corrupt);
  }});

  cases.push_back({"reduce_mean_sq", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> a = rand_leaf(Shape{1, 2, 3, 4}, rng, -1.0, 1.0);
    auto build = [=]() { return reduce_mean_sq(a); };
    return masked_case({a}, build, corrupt);
  }});

  cases.push_back({"stop_gradient", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> x = rand_leaf(Shape{1, 1, 3, 4}, rng, -1.0, 1.0);
    Tensor<double> y = rand_leaf(Shape{1, 1, 3, 4}, rng, -1.0, 1.0);
    auto build = [=]() { return reduce_mean_sq(sub(x, stop_gradient(y))); };
    const double fd = masked_case({x}, build, corrupt);
    const double zero = zero_grad_probe(y, build);
    return std::max(fd, zero);
  }});

  cases.push_back({"warp", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> d = rand_disparity(Shape{1, 1, 4, 6}, rng, 2);
    Tensor<double> src = rand_leaf(Shape{1, 2, 4, 6}, rng, -1.0, 1.0);
    const WarpDirection dir =
        seed % 2 == 0 ? WarpDirection::synthesize_left : WarpDirection::synthesize_right;
    const FrameAlignment frame =
        dir == WarpDirection::synthesize_left ? FrameAlignment::left : FrameAlignment::right;
    Tensor<double> mask = mask_for(src.shape(), rng);
    auto build = [=]() {
      return masked_mean(warp(DisparityMap<double>(d, 0, frame), src, dir), mask);
    };
    return masked_case({d, src}, build, corrupt);
  }});

  cases.push_back({"upsample_disparity_full", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> d = rand_disparity(Shape{1, 1, 2, 3}, rng, 2);
    Tensor<double> mask = mask_for(Shape{1, 1, 8, 12}, rng);
    auto build = [=]() {
      DisparityMap<double> up =
          upsample_disparity_full(DisparityMap<double>(d, 2, FrameAlignment::left));
      return masked_mean(up.tensor, mask);
    };
    return masked_case({d}, build, corrupt);
  }});

  cases.push_back({"ssim_loss", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> x = rand_leaf(Shape{1, 1, 6, 7}, rng, 0.05, 0.95);
    Tensor<double> y = rand_leaf(Shape{1, 1, 6, 7}, rng, 0.05, 0.95);
    auto build = [=]() { return ssim_loss(x, y); };
    return masked_case({x, y}, build, corrupt);
  }});

  cases.push_back({"appearance_loss", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> x = rand_leaf(Shape{1, 1, 6, 7}, rng, 0.05, 0.45);
    Tensor<double> y = rand_leaf(Shape{1, 1, 6, 7}, rng, 0.55, 0.95);
    auto build = [=]() { return appearance_loss(x, y, 0.85); };
    return masked_case({x, y}, build, corrupt);
  }});

  cases.push_back({"disparity_distillation_loss", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    Tensor<double> d = rand_disparity(Shape{1, 1, 4, 4}, rng, 2);
    Tensor<double> ref = rand_disparity(Shape{1, 1, 4, 4}, rng, 2);
    auto build = [=]() {
      return disparity_distillation_loss(DisparityMap<double>(d, 0, FrameAlignment::left),
                                         DisparityMap<double>(ref, 0, FrameAlignment::left));
    };
    const double fd = masked_case({d}, build, corrupt);
    const double zero = zero_grad_probe(ref, build);
    return std::max(fd, zero);
  }});

  cases.push_back({"feature_distillation_loss", [](u64 seed, bool corrupt) {
    Rng rng(seed);
    std::vector<Tensor<double>> student = {rand_leaf(Shape{1, 2, 4, 4}, rng, -1.0, 1.0),
                                           rand_leaf(Shape{1, 3, 2, 2}, rng, -1.0, 1.0)};
    std::vector<Tensor<double>> teacher = {rand_leaf(Shape{1, 2, 4, 4}, rng, -1.0, 1.0),
                                           rand_leaf(Shape{1, 3, 2, 2}, rng, -1.0, 1.0)};
    auto build = [=]() {
      return feature_distillation_loss(std::span<const Tensor<double>>(student),
                                       std::span<const Tensor<double>>(teacher));
    };
    const double fd = masked_case({student[0], student[1]}, build, corrupt);
    const double zero = std::max(zero_grad_probe(teacher[0], build),
                                 zero_grad_probe(teacher[1], build));
    return std::max(fd, zero);
  }});

  cases.push_back({"reconstruction_loss_upsample_full", [](u64 seed, bool corrupt) {
    return reconstruction_case(seed, corrupt, ReconVariant::upsample_full);
  }});

  cases.push_back({"reconstruction_loss_downsampled_compare", [](u64 seed, bool corrupt) {
    return reconstruction_case(seed, corrupt, ReconVariant::downsampled_compare);
  }});

  cases.push_back({"student_forward", [](u64 seed, bool corrupt) {
    NetworkConfig nc;
    nc.base_channels = 2;
    nc.seed = seed;
    NetworkBundle<double> bundle = make_bundle<double>(nc);
    Rng rng(derive_seed(seed, 5));
    Tensor<double> image = rand_leaf(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
    auto build = [&]() { return reduce_mean(student_forward(image, bundle).disparities[0].tensor); };
    std::vector<Tensor<double>> leaves;
    for (const auto& p : bundle.encoder_shared) leaves.push_back(p->value);
    for (const auto& p : bundle.decoder_s) leaves.push_back(p->value);
    leaves.push_back(image);
    FdOptions opt;
    opt.corrupt = corrupt;
    opt.max_coords_per_leaf = 4;
    opt.subset_seed = seed;
    return fd_max_rel_err(std::move(leaves), build, opt);
  }});

  cases.push_back({"inconsistency_forward", [](u64 seed, bool corrupt) {
    NetworkConfig nc;
    nc.base_channels = 2;
    nc.seed = seed;
    NetworkBundle<double> bundle = make_bundle<double>(nc);
    Rng rng(derive_seed(seed, 6));
    Tensor<double> image = rand_leaf(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
    Tensor<double> inc = rand_leaf(Shape{1, 3, 16, 16}, rng, -0.5, 0.5);
    Tensor<double> d0 = rand_disparity(Shape{1, 1, 16, 16}, rng, 2);
    Tensor<double> d1 = rand_disparity(Shape{1, 1, 8, 8}, rng, 2);
    Tensor<double> d2 = rand_disparity(Shape{1, 1, 4, 4}, rng, 2);
    Tensor<double> d3 = rand_disparity(Shape{1, 1, 2, 2}, rng, 2);
    auto build = [&]() {
      std::array<DisparityMap<double>, 3> multi = {
          DisparityMap<double>(d1, 1, FrameAlignment::left),
          DisparityMap<double>(d2, 2, FrameAlignment::left),
          DisparityMap<double>(d3, 3, FrameAlignment::left)};
      return reduce_mean(
          inconsistency_forward(image, inc, DisparityMap<double>(d0, 0, FrameAlignment::left),
                                multi, bundle)
              .disparities[0]
              .tensor);
    };
    std::vector<Tensor<double>> leaves;
    for (const auto& p : bundle.encoder_i) leaves.push_back(p->value);
    for (const auto& p : bundle.decoder_i) leaves.push_back(p->value);
    leaves.push_back(d0);
    leaves.push_back(inc);
    FdOptions opt;
    opt.corrupt = corrupt;
    opt.max_coords_per_leaf = 4;
    opt.subset_seed = seed;
    return fd_max_rel_err(std::move(leaves), build, opt);
  }});

  cases.push_back({"total_objective", [](u64 seed, bool corrupt) {
    NetworkConfig nc;
    nc.base_channels = 2;
    nc.seed = seed;
    NetworkBundle<double> bundle = make_bundle<double>(nc);
    Rng rng(derive_seed(seed, 7));
    Batch<double> batch;
    batch.left = Tensor<double>::uniform(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
    batch.right = Tensor<double>::uniform(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
    LossWeights w;
    w.lambda_s = 1.0;
    w.lambda_b = 0.1;
    w.lambda_t = 1.0;
    const bool disparity_mode = seed % 2 == 0;
    const double lambda_dist = disparity_mode ? 0.1 : 0.005;
    w.recon_variant = ReconVariant::upsample_full;

    // The distillation term differentiates against a gradient-stopped
    // reference, so finite differences must hold that reference at its
    // unperturbed snapshot; the reconstruction terms stay live. The gradient
    // of this construction is identical to the stop-gradient graph's.
    CycleOutputs<double> snapshot = forward_cycle(batch.right, bundle, true, true);
    Tensor<double> ref_disp = stop_gradient(snapshot.refined->disparities[0].tensor);
    std::array<Tensor<double>, 3> ref_feats;
    for (int n = 0; n < 3; ++n) {
      ref_feats[static_cast<size_t>(n)] =
          stop_gradient(snapshot.refined->features[static_cast<size_t>(n)]);
    }
    auto build = [&]() {
      CycleOutputs<double> cycle = forward_cycle(batch.right, bundle, true, true);
      LossBreakdown<double> rec = reconstruction_loss(cycle, batch, w);
      Tensor<double> dist;
      if (disparity_mode) {
        dist = reduce_mean_abs(sub(cycle.student.disparities[0].tensor, ref_disp));
      } else {
        Tensor<double> acc;
        for (int n = 0; n < 3; ++n) {
          Tensor<double> term = reduce_mean_sq(
              sub(cycle.student.features[static_cast<size_t>(n)],
                  ref_feats[static_cast<size_t>(n)]));
          acc = acc.defined() ? add(acc, term) : term;
        }
        dist = acc;
      }
      return add(rec.total, scale(dist, lambda_dist));
    };
    FdOptions opt;
    opt.corrupt = corrupt;
    opt.max_coords_per_leaf = 2;
    opt.subset_seed = seed;
    return fd_max_rel_err(sampled_param_leaves(bundle), build, opt);
  }});

  return cases;
}

}  // namespace cycledepth
