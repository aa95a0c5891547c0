#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cycledepth/optimizer.hpp"
#include "cycledepth/warp.hpp"

namespace cycledepth {

struct NetworkConfig {
  i64 base_channels = 16;
  i64 num_encoder_levels = 4;  // each level halves the resolution
  double d_max_fraction = 0.3;
  u64 seed = 1;

  void validate() const {
    if (base_channels < 1) throw ConfigError("network: base_channels must be positive");
    if (num_encoder_levels < 4) {
      throw ConfigError("network: num_encoder_levels must be >= 4 (disparity scales 0..3)");
    }
    if (d_max_fraction <= 0 || d_max_fraction > 1) {
      throw ConfigError("network: d_max_fraction must be in (0, 1]");
    }
  }
};

// Per-scale outputs of one encoder-decoder pass: disparities at the four
// finest scales plus the decoder features used for distillation.
template <typename T>
struct ForwardOutputs {
  std::array<DisparityMap<T>, 4> disparities;  // index = scale n
  std::array<Tensor<T>, 3> features;           // xi at scales 0..2
};

namespace net_detail {

template <typename T>
struct ConvOp {
  std::shared_ptr<Parameter<T>> w;
  std::shared_ptr<Parameter<T>> b;
  i64 stride = 1;
  i64 pad = 1;

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w->value, b->value, stride, pad); }
};

template <typename T>
ConvOp<T> make_conv(const std::string& name, i64 in_ch, i64 out_ch, i64 k, i64 stride, i64 pad,
                    Rng& rng, std::vector<std::shared_ptr<Parameter<T>>>& group) {
  const double fan_in = static_cast<double>(in_ch * k * k);
  const double fan_out = static_cast<double>(out_ch * k * k);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  ConvOp<T> conv;
  conv.w = std::make_shared<Parameter<T>>(
      name + ".weight", Tensor<T>::uniform(Shape{out_ch, in_ch, k, k}, rng, -bound, bound, true));
  conv.b = std::make_shared<Parameter<T>>(name + ".bias",
                                          Tensor<T>::zeros(Shape{out_ch, 1, 1, 1}, true));
  conv.stride = stride;
  conv.pad = pad;
  group.push_back(conv.w);
  group.push_back(conv.b);
  return conv;
}

template <typename T>
struct Encoder {
  // levels[l-1] for l in 1..L; each level is a strided conv followed by a
  // stride-1 conv, both 3x3 with elu.
  struct Level {
    ConvOp<T> a;
    ConvOp<T> b;
  };
  std::vector<Level> levels;
};

template <typename T>
struct Decoder {
  // blocks[n] produces the feature map at scale n; heads exist for n in 0..3.
  struct Block {
    ConvOp<T> conv;
    std::optional<ConvOp<T>> head;
  };
  std::vector<Block> blocks;
};

inline i64 level_width(i64 base, i64 level) { return level == 0 ? base : base << (level - 1); }

template <typename T>
Encoder<T> build_encoder(const std::string& prefix, i64 entry_channels, i64 base, i64 levels,
                         bool disparity_injection, Rng& rng,
                         std::vector<std::shared_ptr<Parameter<T>>>& group) {
  Encoder<T> enc;
  i64 in_ch = entry_channels;
  for (i64 l = 1; l <= levels; ++l) {
    const i64 width = level_width(base, l);
    typename Encoder<T>::Level lvl;
    lvl.a = make_conv<T>(prefix + "/l" + std::to_string(l) + "a", in_ch, width, 3, 2, 1, rng,
                         group);
    lvl.b = make_conv<T>(prefix + "/l" + std::to_string(l) + "b", width, width, 3, 1, 1, rng,
                         group);
    enc.levels.push_back(lvl);
    in_ch = width + ((disparity_injection && l <= 3 && l < levels) ? 1 : 0);
  }
  return enc;
}

template <typename T>
Decoder<T> build_decoder(const std::string& prefix, i64 base, i64 levels, Rng& rng,
                         std::vector<std::shared_ptr<Parameter<T>>>& group) {
  Decoder<T> dec;
  dec.blocks.resize(static_cast<size_t>(levels));
  for (i64 n = levels - 1; n >= 0; --n) {
    const i64 above = level_width(base, n + 1) + ((n + 1 <= 3 && n + 1 <= levels - 1) ? 1 : 0);
    const i64 skip = n >= 1 ? level_width(base, n) : 0;
    const i64 out_ch = level_width(base, std::max<i64>(n, 1));
    typename Decoder<T>::Block block;
    block.conv = make_conv<T>(prefix + "/up" + std::to_string(n), above + skip, out_ch, 3, 1, 1,
                              rng, group);
    if (n <= 3) {
      block.head =
          make_conv<T>(prefix + "/head" + std::to_string(n), out_ch, 1, 3, 1, 1, rng, group);
    }
    dec.blocks[static_cast<size_t>(n)] = block;
  }
  return dec;
}

// Returns encoder features e[l] at resolution H/2^l, l in 1..L (index 0 unused).
// When injections are provided, the feature entering level l+1 is the level-l
// feature concatenated with the matching-resolution disparity channel.
template <typename T>
std::vector<Tensor<T>> encoder_forward(const Encoder<T>& enc, const Tensor<T>& x,
                                       std::span<const Tensor<T>> injections = {}) {
  std::vector<Tensor<T>> feats(enc.levels.size() + 1);
  Tensor<T> f = x;
  for (size_t l = 1; l <= enc.levels.size(); ++l) {
    const auto& lvl = enc.levels[l - 1];
    f = elu(lvl.a(f));
    f = elu(lvl.b(f));
    feats[l] = f;
    if (!injections.empty() && l <= 3 && l < enc.levels.size()) {
      f = concat_channels<T>({f, injections[l - 1]});
    }
  }
  return feats;
}

template <typename T>
ForwardOutputs<T> decoder_forward(const Decoder<T>& dec, const std::vector<Tensor<T>>& feats,
                                  double d_max, FrameAlignment frame) {
  ForwardOutputs<T> out;
  const i64 levels = static_cast<i64>(dec.blocks.size());
  Tensor<T> x = feats[static_cast<size_t>(levels)];
  for (i64 n = levels - 1; n >= 0; --n) {
    x = upsample_nearest(x, 2);
    if (n >= 1) x = concat_channels<T>({x, feats[static_cast<size_t>(n)]});
    const auto& block = dec.blocks[static_cast<size_t>(n)];
    Tensor<T> f = elu(block.conv(x));
    if (block.head) {
      Tensor<T> d = scale(sigmoid((*block.head)(f)), d_max);
      out.disparities[static_cast<size_t>(n)] = DisparityMap<T>(d, static_cast<int>(n), frame);
      if (n > 0) x = concat_channels<T>({f, d});
    } else {
      x = f;
    }
    if (n <= 2) out.features[static_cast<size_t>(n)] = f;
  }
  return out;
}

}  // namespace net_detail

// Parameters and wiring for the student G_s, the backward network G_b (which
// shares the student's encoder storage) and the inconsistency-aware G_i.
template <typename T>
struct NetworkBundle {
  NetworkConfig config;

  std::vector<std::shared_ptr<Parameter<T>>> encoder_shared;
  std::vector<std::shared_ptr<Parameter<T>>> decoder_s;
  std::vector<std::shared_ptr<Parameter<T>>> decoder_b;
  std::vector<std::shared_ptr<Parameter<T>>> encoder_i;
  std::vector<std::shared_ptr<Parameter<T>>> decoder_i;

  net_detail::Encoder<T> encoder_shared_net;
  net_detail::Decoder<T> decoder_s_net;
  net_detail::Decoder<T> decoder_b_net;
  net_detail::Encoder<T> encoder_i_net;
  net_detail::Decoder<T> decoder_i_net;

  static constexpr std::array<const char*, 5> group_names = {
      "encoder_shared", "decoder_s", "decoder_b", "encoder_i", "decoder_i"};

  const std::vector<std::shared_ptr<Parameter<T>>>& group(const std::string& name) const {
    if (name == "encoder_shared") return encoder_shared;
    if (name == "decoder_s") return decoder_s;
    if (name == "decoder_b") return decoder_b;
    if (name == "encoder_i") return encoder_i;
    if (name == "decoder_i") return decoder_i;
    throw ValueError("bundle: unknown parameter group " + name);
  }

  std::vector<std::shared_ptr<Parameter<T>>> all_parameters() const {
    std::vector<std::shared_ptr<Parameter<T>>> all;
    for (const char* g : group_names) {
      const auto& v = group(g);
      all.insert(all.end(), v.begin(), v.end());
    }
    return all;
  }

  void zero_all_grads() const {
    for (const auto& p : all_parameters()) p->value.zero_grad();
  }

  double d_max_for_width(i64 width) const { return config.d_max_fraction * static_cast<double>(width); }
};

template <typename T>
NetworkBundle<T> make_bundle(const NetworkConfig& config) {
  config.validate();
  NetworkBundle<T> b;
  b.config = config;
  Rng rng(config.seed);
  const i64 base = config.base_channels;
  const i64 levels = config.num_encoder_levels;
  b.encoder_shared_net =
      net_detail::build_encoder<T>("encoder_shared", 3, base, levels, false, rng, b.encoder_shared);
  b.decoder_s_net = net_detail::build_decoder<T>("decoder_s", base, levels, rng, b.decoder_s);
  b.decoder_b_net = net_detail::build_decoder<T>("decoder_b", base, levels, rng, b.decoder_b);
  b.encoder_i_net =
      net_detail::build_encoder<T>("encoder_i", 7, base, levels, true, rng, b.encoder_i);
  b.decoder_i_net = net_detail::build_decoder<T>("decoder_i", base, levels, rng, b.decoder_i);
  return b;
}

namespace net_detail {

template <typename T>
void check_input_dims(const Tensor<T>& x, const NetworkConfig& config, i64 want_channels,
                      const char* who) {
  const Shape& s = x.shape();
  if (s.c != want_channels) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(want_channels) +
                     " channels, got " + s.str());
  }
  const i64 divisor = i64(1) << config.num_encoder_levels;
  if (s.h % divisor != 0 || s.w % divisor != 0) {
    throw ShapeError(std::string(who) + ": input dims " + s.str() + " not divisible by " +
                     std::to_string(divisor));
  }
}

}  // namespace net_detail

// G_s: right image -> right-to-left disparity pyramid.
template <typename T>
ForwardOutputs<T> student_forward(const Tensor<T>& right_image, const NetworkBundle<T>& bundle) {
  net_detail::check_input_dims(right_image, bundle.config, 3, "student_forward");
  auto feats = net_detail::encoder_forward(bundle.encoder_shared_net, right_image);
  return net_detail::decoder_forward(bundle.decoder_s_net, feats,
                                     bundle.d_max_for_width(right_image.shape().w),
                                     FrameAlignment::left);
}

// G_b: synthesized left image -> left-to-right disparity pyramid. Uses the
// same encoder storage as G_s.
template <typename T>
ForwardOutputs<T> backward_forward(const Tensor<T>& left_synth, const NetworkBundle<T>& bundle) {
  net_detail::check_input_dims(left_synth, bundle.config, 3, "backward_forward");
  auto feats = net_detail::encoder_forward(bundle.encoder_shared_net, left_synth);
  return net_detail::decoder_forward(bundle.decoder_b_net, feats,
                                     bundle.d_max_for_width(left_synth.shape().w),
                                     FrameAlignment::right);
}

// G_i: concatenation of the right image, the cycle inconsistency and the
// student disparity, with the student's low-resolution disparities injected
// at the matching encoder levels. Disparity channels are normalized by d_max
// before entering the network.
template <typename T>
ForwardOutputs<T> inconsistency_forward(const Tensor<T>& right_image, const Tensor<T>& inconsistency,
                                        const DisparityMap<T>& student_disparity,
                                        const std::array<DisparityMap<T>, 3>& student_multiscale,
                                        const NetworkBundle<T>& bundle) {
  net_detail::check_input_dims(right_image, bundle.config, 3, "inconsistency_forward");
  const Shape& rs = right_image.shape();
  const Shape& is = inconsistency.shape();
  if (is.c != 3 || is.n != rs.n || is.h != rs.h || is.w != rs.w) {
    throw ShapeError("inconsistency_forward: inconsistency " + is.str() +
                     " does not match image " + rs.str());
  }
  if (student_disparity.scale != 0) {
    throw ShapeError("inconsistency_forward: student disparity must be at scale 0");
  }
  const double d_max = bundle.d_max_for_width(rs.w);
  Tensor<T> d0 = scale(student_disparity.tensor, 1.0 / d_max);
  Tensor<T> entry = concat_channels<T>({right_image, inconsistency, d0});

  std::vector<Tensor<T>> injections;
  injections.reserve(3);
  for (int n = 1; n <= 3; ++n) {
    const DisparityMap<T>& d = student_multiscale[static_cast<size_t>(n - 1)];
    if (d.scale != n) {
      throw ShapeError("inconsistency_forward: expected scale " + std::to_string(n) +
                       " disparity, got scale " + std::to_string(d.scale));
    }
    injections.push_back(scale(d.tensor, 1.0 / d_max));
  }

  auto feats = net_detail::encoder_forward(bundle.encoder_i_net, entry,
                                           std::span<const Tensor<T>>(injections));
  return net_detail::decoder_forward(bundle.decoder_i_net, feats, d_max, FrameAlignment::left);
}

}  // namespace cycledepth
