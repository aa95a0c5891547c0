// Scratch: isolate the end-to-end FD mismatch coordinate.
#include <cstdio>

#include "cycledepth/gradcheck.hpp"
#include "cycledepth/pipeline.hpp"

using namespace cycledepth;

int main() {
  const u64 seed = 100;
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
  w.recon_variant = ReconVariant::upsample_full;

  CycleOutputs<double> snapshot = forward_cycle(batch.right, bundle, true, true);
  Tensor<double> ref_disp = stop_gradient(snapshot.refined->disparities[0].tensor);
  auto build = [&]() {
    CycleOutputs<double> cycle = forward_cycle(batch.right, bundle, true, true);
    LossBreakdown<double> rec = reconstruction_loss(cycle, batch, w);
    Tensor<double> dist = reduce_mean_abs(sub(cycle.student.disparities[0].tensor, ref_disp));
    return add(rec.total, scale(dist, 0.1));
  };

  // Analytic gradients once.
  auto params = bundle.all_parameters();
  for (auto& p : params) p->value.zero_grad();
  backward(build());

  const double h = 1e-5;
  double worst = 0;
  std::string worst_name;
  i64 worst_coord = 0;
  double worst_a = 0, worst_fd = 0;
  Rng subset(seed);
  for (auto& p : params) {
    auto data = p->value.mutable_data();
    auto grad = p->value.grad();
    std::vector<i64> coords;
    if (static_cast<i64>(data.size()) > 2) {
      coords.push_back(subset.uniform_int(0, static_cast<i64>(data.size()) - 1));
      coords.push_back(subset.uniform_int(0, static_cast<i64>(data.size()) - 1));
    } else {
      for (i64 c = 0; c < static_cast<i64>(data.size()); ++c) coords.push_back(c);
    }
    for (i64 c : coords) {
      const double saved = data[c];
      data[c] = saved + h;
      const double fp = build().value();
      data[c] = saved - h;
      const double fm = build().value();
      data[c] = saved;
      const double fd = (fp - fm) / (2 * h);
      if (std::abs(fd) <= 1e-8) continue;
      const double a = grad[c];
      const double rel = std::abs(a - fd) / std::max(std::abs(a), std::abs(fd));
      if (rel > worst) {
        worst = rel;
        worst_name = p->name;
        worst_coord = c;
        worst_a = a;
        worst_fd = fd;
      }
    }
  }
  std::printf("worst %.3e at %s[%lld]: analytic %.10e fd %.10e\n", worst, worst_name.c_str(),
              (long long)worst_coord, worst_a, worst_fd);

  // Profile the loss along the worst coordinate to reveal kinks.
  for (auto& p : params) {
    if (p->name != worst_name) continue;
    auto data = p->value.mutable_data();
    const double saved = data[worst_coord];
    std::printf("loss profile around %s[%lld]:\n", worst_name.c_str(), (long long)worst_coord);
    for (int i = -4; i <= 4; ++i) {
      data[worst_coord] = saved + i * h / 2;
      std::printf("  %+0.1fh  %.14f\n", i / 2.0, build().value());
    }
    data[worst_coord] = saved;
  }
  return 0;
}
