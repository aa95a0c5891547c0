// Scratch: inspect initial activations and head pre-activations.
#include <cstdio>

#include "cycledepth/pipeline.hpp"

using namespace cycledepth;

template <typename T>
void stats(const char* name, const Tensor<T>& t) {
  double mn = 1e30, mx = -1e30, acc = 0;
  for (T v : t.data()) {
    mn = std::min(mn, static_cast<double>(v));
    mx = std::max(mx, static_cast<double>(v));
    acc += static_cast<double>(v);
  }
  std::printf("%-14s min %+8.4f mean %+8.4f max %+8.4f\n", name, mn,
              acc / static_cast<double>(t.numel()), mx);
}

int main() {
  Dataset ds = make_dataset(4, 64, 32, 7);
  NetworkConfig nc;
  nc.base_channels = 8;
  nc.seed = 1;
  NetworkBundle<float> bundle = make_bundle<float>(nc);
  const StereoSample* ptr = &ds.train[0];
  Batch<float> batch = make_batch<float>(std::span<const StereoSample* const>(&ptr, 1));

  auto feats = net_detail::encoder_forward(bundle.encoder_shared_net, batch.right);
  for (size_t l = 1; l < feats.size(); ++l) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "e%zu", l);
    stats(buf, feats[l]);
  }
  ForwardOutputs<float> out = student_forward(batch.right, bundle);
  for (int n = 0; n < 4; ++n) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "d%d", n);
    stats(buf, out.disparities[n].tensor);
    std::snprintf(buf, sizeof(buf), "xi%d", n);
    if (n < 3) stats(buf, out.features[n]);
  }
  return 0;
}
