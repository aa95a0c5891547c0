#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cycledepth/gradcheck.hpp"
#include "cycledepth/losses.hpp"
#include "cycledepth/pipeline.hpp"

using namespace cycledepth;

namespace {

// Independent loop-based SSIM-loss oracle: per valid 3x3 window, plain
// scalar statistics, then mean of (1 - ssim)/2.
double ssim_loss_oracle(const Tensor<double>& x, const Tensor<double>& y) {
  const Shape& s = x.shape();
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0;
  i64 count = 0;
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      for (i64 wy = 0; wy + 2 < s.h; ++wy) {
        for (i64 wx = 0; wx + 2 < s.w; ++wx) {
          double mx = 0, my = 0;
          for (i64 dy = 0; dy < 3; ++dy)
            for (i64 dx = 0; dx < 3; ++dx) {
              mx += x.at(n, c, wy + dy, wx + dx);
              my += y.at(n, c, wy + dy, wx + dx);
            }
          mx /= 9;
          my /= 9;
          double vx = 0, vy = 0, vxy = 0;
          for (i64 dy = 0; dy < 3; ++dy)
            for (i64 dx = 0; dx < 3; ++dx) {
              const double ax = x.at(n, c, wy + dy, wx + dx);
              const double ay = y.at(n, c, wy + dy, wx + dx);
              vx += ax * ax;
              vy += ay * ay;
              vxy += ax * ay;
            }
          vx = vx / 9 - mx * mx;
          vy = vy / 9 - my * my;
          vxy = vxy / 9 - mx * my;
          const double ssim =
              ((2 * mx * my + c1) * (2 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
          acc += (1 - ssim) / 2;
          ++count;
        }
      }
    }
  }
  return acc / static_cast<double>(count);
}

CycleOutputs<double> stub_cycle(const std::array<double, 4>& disp_values,
                                const Tensor<double>& right, i64 h, i64 w) {
  CycleOutputs<double> cycle;
  for (int n = 0; n < 4; ++n) {
    cycle.student.disparities[static_cast<size_t>(n)] = DisparityMap<double>(
        Tensor<double>::full(Shape{1, 1, h >> n, w >> n}, disp_values[static_cast<size_t>(n)]), n,
        FrameAlignment::left);
  }
  cycle.left_synth = warp(cycle.student.disparities[0], right, WarpDirection::synthesize_left);
  return cycle;
}

}  // namespace

TEST_CASE("ssim_loss of identical inputs is exactly zero") {
  Rng rng(1);
  for (int i = 0; i < 3; ++i) {
    Tensor<double> x = Tensor<double>::uniform(Shape{1, 3, 6, 6}, rng, 0, 1);
    CHECK(ssim_loss(x, x).value() == 0.0);
  }
}

TEST_CASE("ssim_loss symmetry") {
  Rng rng(2);
  Tensor<double> x = Tensor<double>::uniform(Shape{1, 1, 8, 8}, rng, 0, 1);
  Tensor<double> y = Tensor<double>::uniform(Shape{1, 1, 8, 8}, rng, 0, 1);
  CHECK(std::abs(ssim_loss(x, y).value() - ssim_loss(y, x).value()) < 1e-9);
}

TEST_CASE("ssim_loss constant-image closed form") {
  Tensor<double> x = Tensor<double>::full(Shape{1, 1, 5, 5}, 0.2);
  Tensor<double> y = Tensor<double>::full(Shape{1, 1, 5, 5}, 0.4);
  // Constant images: variances vanish, SSIM = (2*0.2*0.4 + C1)/(0.2^2 + 0.4^2 + C1).
  const double ssim = (2 * 0.2 * 0.4 + 1e-4) / (0.2 * 0.2 + 0.4 * 0.4 + 1e-4);
  const double want = (1 - ssim) / 2;
  CHECK(ssim_loss(x, y).value() == doctest::Approx(want).epsilon(1e-9));
  CHECK(ssim == doctest::Approx(0.8001).epsilon(1e-3));
}

TEST_CASE("ssim_loss matches the scalar oracle on random pairs") {
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    Tensor<double> x = Tensor<double>::uniform(Shape{1, 1, 8, 8}, rng, 0, 1);
    Tensor<double> y = Tensor<double>::uniform(Shape{1, 1, 8, 8}, rng, 0, 1);
    CHECK(std::abs(ssim_loss(x, y).value() - ssim_loss_oracle(x, y)) < 1e-6);
  }
  Tensor<double> bad = Tensor<double>::zeros(Shape{1, 1, 8, 7});
  Tensor<double> x = Tensor<double>::zeros(Shape{1, 1, 8, 8});
  CHECK_THROWS_AS(ssim_loss(x, bad), ShapeError);
}

TEST_CASE("appearance_loss cases") {
  Rng rng(4);
  Tensor<double> x = Tensor<double>::uniform(Shape{1, 1, 6, 6}, rng, 0, 1);
  CHECK(appearance_loss(x, x, 0.85).value() == 0.0);

  Tensor<double> a = Tensor<double>::full(Shape{1, 1, 5, 5}, 0.5);
  Tensor<double> b = Tensor<double>::full(Shape{1, 1, 5, 5}, 0.25);
  CHECK(appearance_loss(a, b, 0.0).value() == doctest::Approx(0.25).epsilon(1e-12));

  Tensor<double> p = Tensor<double>::full(Shape{1, 1, 5, 5}, 0.2);
  Tensor<double> q = Tensor<double>::full(Shape{1, 1, 5, 5}, 0.4);
  const double ssim = (2 * 0.2 * 0.4 + 1e-4) / (0.2 * 0.2 + 0.4 * 0.4 + 1e-4);
  const double want = 0.85 * (1 - ssim) / 2 + 0.15 * 0.2;
  CHECK(appearance_loss(p, q, 0.85).value() == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("reconstruction_loss is zero for perfect reconstruction") {
  // Zero disparity everywhere with identical views: every scale, every
  // variant reconstructs exactly.
  Rng rng(5);
  Tensor<double> image = Tensor<double>::uniform(Shape{1, 3, 32, 32}, rng, 0, 1);
  Batch<double> batch;
  batch.left = image;
  batch.right = image;
  for (ReconVariant variant : {ReconVariant::upsample_full, ReconVariant::downsampled_compare}) {
    CycleOutputs<double> cycle = stub_cycle({0, 0, 0, 0}, batch.right, 32, 32);
    LossWeights w;
    w.lambda_s = 1;
    w.lambda_b = 0;
    w.lambda_t = 0;
    w.recon_variant = variant;
    LossBreakdown<double> out = reconstruction_loss(cycle, batch, w);
    CHECK(out.total_value == doctest::Approx(0.0).epsilon(1e-12));
    for (double v : out.rec_per_scale) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("reconstruction_loss weight degeneracy collapses to the student term") {
  Rng rng(6);
  Tensor<double> left = Tensor<double>::uniform(Shape{1, 3, 16, 16}, rng, 0, 1);
  Tensor<double> right = Tensor<double>::uniform(Shape{1, 3, 16, 16}, rng, 0, 1);
  Batch<double> batch;
  batch.left = left;
  batch.right = right;
  CycleOutputs<double> cycle = stub_cycle({1.5, 1.5, 1.5, 1.5}, right, 16, 16);
  LossWeights w;
  w.lambda_s = 0.7;
  w.lambda_b = 0;
  w.lambda_t = 0;
  w.recon_variant = ReconVariant::upsample_full;
  LossBreakdown<double> out = reconstruction_loss(cycle, batch, w);

  // Hand-accumulated student-branch terms.
  double want = appearance_loss(cycle.left_synth, left, w.alpha).value();
  for (int n = 1; n < 4; ++n) {
    DisparityMap<double> up = upsample_disparity_full(cycle.student.disparities[n]);
    Tensor<double> synth = warp(up, right, WarpDirection::synthesize_left);
    want += reduce_mean_abs(sub(synth, left)).value();
  }
  CHECK(out.total_value == doctest::Approx(0.7 * want).epsilon(1e-9));
  CHECK(out.rec_per_network[1] == 0.0);
  CHECK(out.rec_per_network[2] == 0.0);
}

TEST_CASE("reconstruction_loss rejects a missing branch with nonzero weight") {
  Rng rng(7);
  Tensor<double> image = Tensor<double>::uniform(Shape{1, 3, 16, 16}, rng, 0, 1);
  Batch<double> batch;
  batch.left = image;
  batch.right = image;
  CycleOutputs<double> cycle = stub_cycle({1, 1, 1, 1}, image, 16, 16);
  LossWeights w;
  w.lambda_b = 0.1;
  CHECK_THROWS_AS(reconstruction_loss(cycle, batch, w), StateError);
  w.lambda_b = 0;
  w.lambda_t = 1;
  CHECK_THROWS_AS(reconstruction_loss(cycle, batch, w), StateError);
}

TEST_CASE("reconstruction_loss prefers the true disparity on a synthetic scene") {
  // Constant-disparity scene rendered by the data generator; supplying the
  // true disparity must beat a +1 px perturbation in both variants.
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.background_disparity = 3.0;
  spec.seed = 99;
  StereoSample sample = generate_scene(spec);
  const StereoSample* ptr = &sample;
  Batch<double> batch = make_batch<double>(std::span<const StereoSample* const>(&ptr, 1));
  for (ReconVariant variant : {ReconVariant::upsample_full, ReconVariant::downsampled_compare}) {
    LossWeights w;
    w.lambda_s = 1;
    w.lambda_b = 0;
    w.lambda_t = 0;
    w.recon_variant = variant;
    CycleOutputs<double> truth = stub_cycle({3, 3, 3, 3}, batch.right, 32, 32);
    CycleOutputs<double> off = stub_cycle({4, 4, 4, 4}, batch.right, 32, 32);
    const double loss_truth = reconstruction_loss(truth, batch, w).total_value;
    const double loss_off = reconstruction_loss(off, batch, w).total_value;
    INFO(to_string(variant));
    CHECK(loss_truth < loss_off);
  }
}

TEST_CASE("disparity distillation oracle cases") {
  auto map = [](double v, bool rg = false) {
    return DisparityMap<double>(Tensor<double>::full(Shape{1, 1, 4, 4}, v, rg), 0,
                                FrameAlignment::left);
  };
  CHECK(disparity_distillation_loss(map(2.0), map(2.0)).value() == 0.0);
  CHECK(disparity_distillation_loss(map(2.0), map(5.0)).value() ==
        doctest::Approx(3.0).epsilon(1e-12));

  DisparityMap<double> scaled(Tensor<double>::full(Shape{1, 1, 2, 2}, 1.0), 1,
                              FrameAlignment::left);
  CHECK_THROWS_AS(disparity_distillation_loss(map(1.0), scaled), ShapeError);

  // Teacher-side gradient is exactly zero; student side matches FD.
  auto d = map(2.0, true);
  auto ref = map(5.0, true);
  auto build = [=]() { return disparity_distillation_loss(d, ref); };
  backward(build());
  for (double g : ref.tensor.grad()) CHECK(g == 0.0);
  bool any = false;
  for (double g : d.tensor.grad()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("feature distillation oracle cases") {
  std::array<Tensor<double>, 3> s = {Tensor<double>::full(Shape{1, 2, 4, 4}, 1.0, true),
                                     Tensor<double>::full(Shape{1, 2, 2, 2}, 0.5, true),
                                     Tensor<double>::full(Shape{1, 4, 1, 1}, 0.25, true)};
  std::array<Tensor<double>, 3> t = s;
  CHECK(feature_distillation_loss(s, t).value() == 0.0);

  std::vector<Tensor<double>> one_s = {Tensor<double>::full(Shape{1, 1, 2, 2}, 1.0, true)};
  std::vector<Tensor<double>> one_t = {Tensor<double>::full(Shape{1, 1, 2, 2}, 3.0, true)};
  Tensor<double> loss = feature_distillation_loss(std::span<const Tensor<double>>(one_s),
                                                  std::span<const Tensor<double>>(one_t));
  CHECK(loss.value() == doctest::Approx(4.0).epsilon(1e-12));
  backward(loss);
  for (double g : one_t[0].grad()) CHECK(g == 0.0);

  std::vector<Tensor<double>> bad = {Tensor<double>::full(Shape{1, 1, 2, 3}, 3.0)};
  CHECK_THROWS_AS(feature_distillation_loss(std::span<const Tensor<double>>(one_s),
                                            std::span<const Tensor<double>>(bad)),
                  ShapeError);
}

TEST_CASE("total_loss composition") {
  LossBreakdown<double> rec;
  rec.total = Tensor<double>::full(Shape{1, 1, 1, 1}, 0.5);
  rec.total_value = 0.5;
  Tensor<double> dist = Tensor<double>::full(Shape{1, 1, 1, 1}, 0.2);

  LossWeights w;
  w.dist_mode = DistMode::none;
  w.lambda_dist = 0;
  CHECK(total_loss(rec, dist, w).value() == doctest::Approx(0.5).epsilon(1e-12));

  w.dist_mode = DistMode::disparity;
  w.lambda_dist = 0.1;
  CHECK(total_loss(rec, dist, w).value() == doctest::Approx(0.52).epsilon(1e-12));
}

TEST_CASE("loss breakdown sums to the total and serializes the log schema") {
  Rng rng(8);
  Tensor<double> left = Tensor<double>::uniform(Shape{1, 3, 16, 16}, rng, 0, 1);
  Tensor<double> right = Tensor<double>::uniform(Shape{1, 3, 16, 16}, rng, 0, 1);
  Batch<double> batch;
  batch.left = left;
  batch.right = right;

  NetworkConfig nc;
  nc.base_channels = 2;
  nc.seed = 31;
  NetworkBundle<double> bundle = make_bundle<double>(nc);
  CycleOutputs<double> cycle = forward_cycle(batch.right, bundle, true, true);
  LossWeights w;
  w.lambda_s = 1;
  w.lambda_b = 0.1;
  w.lambda_t = 1;
  w.dist_mode = DistMode::disparity;
  w.lambda_dist = 0.1;
  LossBreakdown<double> out = compute_objective(cycle, batch, w);

  double by_scale = 0, by_network = 0;
  for (double v : out.rec_per_scale) by_scale += v;
  for (double v : out.rec_per_network) by_network += v;
  CHECK(out.total_value ==
        doctest::Approx(by_scale + w.lambda_dist * out.dist).epsilon(1e-6));
  CHECK(out.total_value ==
        doctest::Approx(by_network + w.lambda_dist * out.dist).epsilon(1e-6));
  CHECK(out.total_value > 0);

  const std::string line = out.json_line(12);
  CHECK(line.find("\"step\":12") != std::string::npos);
  for (const char* key : {"\"total\":", "\"rec_s\":", "\"rec_b\":", "\"rec_t\":", "\"dist\":"}) {
    CHECK(line.find(key) != std::string::npos);
  }
}

TEST_CASE("losses stay finite and non-negative on random valid inputs") {
  Rng rng(13);
  for (int i = 0; i < 5; ++i) {
    Tensor<double> left = Tensor<double>::uniform(Shape{1, 3, 32, 32}, rng, 0, 1);
    Tensor<double> right = Tensor<double>::uniform(Shape{1, 3, 32, 32}, rng, 0, 1);
    Batch<double> batch;
    batch.left = left;
    batch.right = right;
    std::array<double, 4> d{};
    for (auto& v : d) v = rng.uniform(0, 4.8);
    CycleOutputs<double> cycle = stub_cycle(d, right, 32, 32);
    LossWeights w;
    w.lambda_s = 1;
    w.lambda_b = 0;
    w.lambda_t = 0;
    w.recon_variant = i % 2 == 0 ? ReconVariant::upsample_full : ReconVariant::downsampled_compare;
    LossBreakdown<double> out = reconstruction_loss(cycle, batch, w);
    CHECK(std::isfinite(out.total_value));
    CHECK(out.total_value >= 0);
  }
}
