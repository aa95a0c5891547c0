#pragma once

#include <algorithm>
#include <cmath>

#include "cycledepth/tensor.hpp"

namespace cycledepth {

namespace detail {

inline i64 div_floor(i64 a, i64 b) {
  i64 q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

inline i64 div_ceil(i64 a, i64 b) { return -div_floor(-a, b); }

}  // namespace detail

// 2-D convolution, square kernel, NCHW layout. weight is (Cout, Cin, k, k).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 i64 stride, i64 padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (stride < 1) throw ValueError("conv2d: stride must be positive");
  if (padding < 0) throw ValueError("conv2d: padding must be non-negative");
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
  if (ws.c != is.c) {
    throw ShapeError("conv2d: input channels mismatch, input " + is.str() + " vs weight " +
                     ws.str());
  }
  const Shape& bs = bias.shape();
  if (bs.numel() != ws.n) {
    throw ShapeError("conv2d: bias " + bs.str() + " does not match out channels of " + ws.str());
  }
  const i64 k = ws.h;
  const i64 ho = detail::div_floor(is.h + 2 * padding - k, stride) + 1;
  const i64 wo = detail::div_floor(is.w + 2 * padding - k, stride) + 1;
  if (ho <= 0 || wo <= 0) {
    throw ShapeError("conv2d: non-positive output dims for input " + is.str() + ", kernel " +
                     ws.str());
  }
  Shape os{is.n, ws.n, ho, wo};

  const T* in = input.data().data();
  const T* w = weight.data().data();
  const T* b = bias.data().data();
  std::vector<T> out(static_cast<size_t>(os.numel()));

  const i64 cin = is.c, cout = ws.n, hi = is.h, wi = is.w;
  for (i64 n = 0; n < is.n; ++n) {
    for (i64 co = 0; co < cout; ++co) {
      T* op = out.data() + ((n * cout + co) * ho) * wo;
      std::fill(op, op + ho * wo, b[co]);
      for (i64 ci = 0; ci < cin; ++ci) {
        const T* ip = in + ((n * cin + ci) * hi) * wi;
        const T* wp = w + ((co * cin + ci) * k) * k;
        for (i64 ky = 0; ky < k; ++ky) {
          const i64 oy_lo = std::max<i64>(0, detail::div_ceil(padding - ky, stride));
          const i64 oy_hi = std::min(ho - 1, detail::div_floor(hi - 1 + padding - ky, stride));
          for (i64 kx = 0; kx < k; ++kx) {
            const T wgt = wp[ky * k + kx];
            const i64 ox_lo = std::max<i64>(0, detail::div_ceil(padding - kx, stride));
            const i64 ox_hi = std::min(wo - 1, detail::div_floor(wi - 1 + padding - kx, stride));
            for (i64 oy = oy_lo; oy <= oy_hi; ++oy) {
              const T* irow = ip + (oy * stride - padding + ky) * wi - padding + kx;
              T* orow = op + oy * wo;
              for (i64 ox = ox_lo; ox <= ox_hi; ++ox) {
                orow[ox] += wgt * irow[ox * stride];
              }
            }
          }
        }
      }
    }
  }

  auto inode = input.node();
  auto wnode = weight.node();
  auto bnode = bias.node();
  auto fn = [inode, wnode, bnode, stride, padding, k](TensorNode<T>& self) {
    const Shape& os2 = self.shape;
    const Shape& is2 = inode->shape;
    const i64 n_ = is2.n, cin2 = is2.c, hi2 = is2.h, wi2 = is2.w;
    const i64 cout2 = os2.c, ho2 = os2.h, wo2 = os2.w;
    const T* g = self.grad.data();
    if (bnode->requires_grad) {
      bnode->ensure_grad();
      for (i64 n = 0; n < n_; ++n) {
        for (i64 co = 0; co < cout2; ++co) {
          const T* gp = g + ((n * cout2 + co) * ho2) * wo2;
          T acc = 0;
          for (i64 i = 0; i < ho2 * wo2; ++i) acc += gp[i];
          bnode->grad[static_cast<size_t>(co)] += acc;
        }
      }
    }
    if (wnode->requires_grad) {
      wnode->ensure_grad();
      const T* in2 = inode->data.data();
      for (i64 n = 0; n < n_; ++n) {
        for (i64 co = 0; co < cout2; ++co) {
          const T* gp = g + ((n * cout2 + co) * ho2) * wo2;
          for (i64 ci = 0; ci < cin2; ++ci) {
            const T* ip = in2 + ((n * cin2 + ci) * hi2) * wi2;
            T* dwp = wnode->grad.data() + ((co * cin2 + ci) * k) * k;
            for (i64 ky = 0; ky < k; ++ky) {
              const i64 oy_lo = std::max<i64>(0, detail::div_ceil(padding - ky, stride));
              const i64 oy_hi =
                  std::min(ho2 - 1, detail::div_floor(hi2 - 1 + padding - ky, stride));
              for (i64 kx = 0; kx < k; ++kx) {
                const i64 ox_lo = std::max<i64>(0, detail::div_ceil(padding - kx, stride));
                const i64 ox_hi =
                    std::min(wo2 - 1, detail::div_floor(wi2 - 1 + padding - kx, stride));
                T acc = 0;
                for (i64 oy = oy_lo; oy <= oy_hi; ++oy) {
                  const T* irow = ip + (oy * stride - padding + ky) * wi2 - padding + kx;
                  const T* grow = gp + oy * wo2;
                  for (i64 ox = ox_lo; ox <= ox_hi; ++ox) {
                    acc += grow[ox] * irow[ox * stride];
                  }
                }
                dwp[ky * k + kx] += acc;
              }
            }
          }
        }
      }
    }
    if (inode->requires_grad) {
      inode->ensure_grad();
      const T* w2 = wnode->data.data();
      for (i64 n = 0; n < n_; ++n) {
        for (i64 co = 0; co < cout2; ++co) {
          const T* gp = g + ((n * cout2 + co) * ho2) * wo2;
          for (i64 ci = 0; ci < cin2; ++ci) {
            T* dip = inode->grad.data() + ((n * cin2 + ci) * hi2) * wi2;
            const T* wp = w2 + ((co * cin2 + ci) * k) * k;
            for (i64 ky = 0; ky < k; ++ky) {
              const i64 oy_lo = std::max<i64>(0, detail::div_ceil(padding - ky, stride));
              const i64 oy_hi =
                  std::min(ho2 - 1, detail::div_floor(hi2 - 1 + padding - ky, stride));
              for (i64 kx = 0; kx < k; ++kx) {
                const T wgt = wp[ky * k + kx];
                const i64 ox_lo = std::max<i64>(0, detail::div_ceil(padding - kx, stride));
                const i64 ox_hi =
                    std::min(wo2 - 1, detail::div_floor(wi2 - 1 + padding - kx, stride));
                for (i64 oy = oy_lo; oy <= oy_hi; ++oy) {
                  T* irow = dip + (oy * stride - padding + ky) * wi2 - padding + kx;
                  const T* grow = gp + oy * wo2;
                  for (i64 ox = ox_lo; ox <= ox_hi; ++ox) {
                    irow[ox * stride] += wgt * grow[ox];
                  }
                }
              }
            }
          }
        }
      }
    }
  };
  return make_op<T>(os, std::move(out), {inode, wnode, bnode}, fn);
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, i64 factor) {
  if (factor < 1) throw ValueError("upsample_nearest: factor must be >= 1");
  const Shape& is = input.shape();
  Shape os{is.n, is.c, is.h * factor, is.w * factor};
  std::vector<T> out(static_cast<size_t>(os.numel()));
  const T* in = input.data().data();
  for (i64 p = 0; p < is.n * is.c; ++p) {
    const T* ip = in + p * is.h * is.w;
    T* op = out.data() + p * os.h * os.w;
    for (i64 y = 0; y < os.h; ++y) {
      const T* irow = ip + (y / factor) * is.w;
      T* orow = op + y * os.w;
      for (i64 x = 0; x < os.w; ++x) orow[x] = irow[x / factor];
    }
  }
  auto inode = input.node();
  auto fn = [inode, factor](TensorNode<T>& self) {
    if (!inode->requires_grad) return;
    inode->ensure_grad();
    const Shape& is2 = inode->shape;
    const Shape& os2 = self.shape;
    const T* g = self.grad.data();
    for (i64 p = 0; p < is2.n * is2.c; ++p) {
      const T* gp = g + p * os2.h * os2.w;
      T* dp = inode->grad.data() + p * is2.h * is2.w;
      for (i64 y = 0; y < os2.h; ++y) {
        const T* grow = gp + y * os2.w;
        T* drow = dp + (y / factor) * is2.w;
        for (i64 x = 0; x < os2.w; ++x) drow[x / factor] += grow[x];
      }
    }
  };
  return make_op<T>(os, std::move(out), {inode}, fn);
}

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Bwd bwd) {
  check_same_shape(a.shape(), b.shape(), name);
  std::vector<T> out(static_cast<size_t>(a.numel()));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
  auto an = a.node();
  auto bn = b.node();
  auto fn = [an, bn, bwd](TensorNode<T>& self) {
    const T* g = self.grad.data();
    const T* pa2 = an->data.data();
    const T* pb2 = bn->data.data();
    const T* po = self.data.data();
    T* da = nullptr;
    T* db = nullptr;
    if (an->requires_grad) {
      an->ensure_grad();
      da = an->grad.data();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      db = bn->grad.data();
    }
    for (size_t i = 0; i < self.data.size(); ++i) {
      bwd(g[i], pa2[i], pb2[i], po[i], da ? da + i : nullptr, db ? db + i : nullptr);
    }
  };
  return make_op<T>(a.shape(), std::move(out), {an, bn}, fn);
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T g, T, T, T, T* da, T* db) {
        if (da) *da += g;
        if (db) *db += g;
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T g, T, T, T, T* da, T* db) {
        if (da) *da += g;
        if (db) *db -= g;
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T g, T x, T y, T, T* da, T* db) {
        if (da) *da += g * y;
        if (db) *db += g * x;
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T g, T, T y, T o, T* da, T* db) {
        if (da) *da += g / y;
        if (db) *db -= g * o / y;
      });
}

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  std::vector<T> out(static_cast<size_t>(a.numel()));
  const T* pa = a.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i]);
  auto an = a.node();
  auto fn = [an, bwd](TensorNode<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const T* g = self.grad.data();
    const T* pa2 = an->data.data();
    const T* po = self.data.data();
    T* da = an->grad.data();
    for (size_t i = 0; i < self.data.size(); ++i) da[i] += bwd(g[i], pa2[i], po[i]);
  };
  return make_op<T>(a.shape(), std::move(out), {an}, fn);
}

}  // namespace detail

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op<T>(
      a,
      [](T x) {
        if (x >= 0) {
          T e = std::exp(-x);
          return T(1) / (T(1) + e);
        }
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T g, T, T o) { return g * o * (T(1) - o); });
}

template <typename T>
Tensor<T> elu(const Tensor<T>& a) {
  return detail::unary_op<T>(
      a, [](T x) { return x >= 0 ? x : std::exp(x) - T(1); },
      [](T g, T x, T o) { return x >= 0 ? g : g * (o + T(1)); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor) {
  const T f = static_cast<T>(factor);
  return detail::unary_op<T>(
      a, [f](T x) { return f * x; }, [f](T g, T, T) { return f * g; });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = inputs[0].shape();
  i64 total_c = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: spatial mismatch " + s0.str() + " vs " + s.str());
    }
    total_c += s.c;
  }
  Shape os{s0.n, total_c, s0.h, s0.w};
  std::vector<T> out(static_cast<size_t>(os.numel()));
  const i64 plane = s0.h * s0.w;
  for (i64 n = 0; n < os.n; ++n) {
    i64 coff = 0;
    for (const auto& t : inputs) {
      const i64 tc = t.shape().c;
      const T* ip = t.data().data() + n * tc * plane;
      std::copy(ip, ip + tc * plane, out.data() + (n * total_c + coff) * plane);
      coff += tc;
    }
  }
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  parents.reserve(inputs.size());
  for (const auto& t : inputs) parents.push_back(t.node());
  auto fn = [parents, plane, total_c](TensorNode<T>& self) {
    const T* g = self.grad.data();
    for (i64 n = 0; n < self.shape.n; ++n) {
      i64 coff = 0;
      for (const auto& p : parents) {
        const i64 tc = p->shape.c;
        if (p->requires_grad) {
          p->ensure_grad();
          const T* gp = g + (n * total_c + coff) * plane;
          T* dp = p->grad.data() + n * tc * plane;
          for (i64 i = 0; i < tc * plane; ++i) dp[i] += gp[i];
        }
        coff += tc;
      }
    }
  };
  return make_op<T>(os, std::move(out), std::move(parents), fn);
}

// Stride-1, padding-0 mean over 3x3 windows.
template <typename T>
Tensor<T> avg_pool3x3(const Tensor<T>& input) {
  const Shape& is = input.shape();
  if (is.h < 3 || is.w < 3) {
    throw ShapeError("avg_pool3x3: input " + is.str() + " smaller than the 3x3 window");
  }
  Shape os{is.n, is.c, is.h - 2, is.w - 2};
  std::vector<T> out(static_cast<size_t>(os.numel()));
  const T* in = input.data().data();
  const T ninth = T(1) / T(9);
  for (i64 p = 0; p < is.n * is.c; ++p) {
    const T* ip = in + p * is.h * is.w;
    T* op = out.data() + p * os.h * os.w;
    for (i64 y = 0; y < os.h; ++y) {
      for (i64 x = 0; x < os.w; ++x) {
        T acc = 0;
        for (i64 dy = 0; dy < 3; ++dy) {
          const T* irow = ip + (y + dy) * is.w + x;
          acc += irow[0] + irow[1] + irow[2];
        }
        op[y * os.w + x] = acc * ninth;
      }
    }
  }
  auto inode = input.node();
  auto fn = [inode, ninth](TensorNode<T>& self) {
    if (!inode->requires_grad) return;
    inode->ensure_grad();
    const Shape& is2 = inode->shape;
    const Shape& os2 = self.shape;
    const T* g = self.grad.data();
    for (i64 p = 0; p < is2.n * is2.c; ++p) {
      const T* gp = g + p * os2.h * os2.w;
      T* dp = inode->grad.data() + p * is2.h * is2.w;
      for (i64 y = 0; y < os2.h; ++y) {
        for (i64 x = 0; x < os2.w; ++x) {
          const T gv = gp[y * os2.w + x] * ninth;
          for (i64 dy = 0; dy < 3; ++dy) {
            T* drow = dp + (y + dy) * is2.w + x;
            drow[0] += gv;
            drow[1] += gv;
            drow[2] += gv;
          }
        }
      }
    }
  };
  return make_op<T>(os, std::move(out), {inode}, fn);
}

// 2x2 area average, stride 2; the downsampling used for pyramid targets.
template <typename T>
Tensor<T> avg_downsample2x2(const Tensor<T>& input) {
  const Shape& is = input.shape();
  if (is.h % 2 != 0 || is.w % 2 != 0) {
    throw ShapeError("avg_downsample2x2: dims of " + is.str() + " must be even");
  }
  Shape os{is.n, is.c, is.h / 2, is.w / 2};
  std::vector<T> out(static_cast<size_t>(os.numel()));
  const T* in = input.data().data();
  const T quarter = T(0.25);
  for (i64 p = 0; p < is.n * is.c; ++p) {
    const T* ip = in + p * is.h * is.w;
    T* op = out.data() + p * os.h * os.w;
    for (i64 y = 0; y < os.h; ++y) {
      const T* r0 = ip + 2 * y * is.w;
      const T* r1 = r0 + is.w;
      for (i64 x = 0; x < os.w; ++x) {
        op[y * os.w + x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter;
      }
    }
  }
  auto inode = input.node();
  auto fn = [inode, quarter](TensorNode<T>& self) {
    if (!inode->requires_grad) return;
    inode->ensure_grad();
    const Shape& is2 = inode->shape;
    const Shape& os2 = self.shape;
    const T* g = self.grad.data();
    for (i64 p = 0; p < is2.n * is2.c; ++p) {
      const T* gp = g + p * os2.h * os2.w;
      T* dp = inode->grad.data() + p * is2.h * is2.w;
      for (i64 y = 0; y < os2.h; ++y) {
        T* r0 = dp + 2 * y * is2.w;
        T* r1 = r0 + is2.w;
        for (i64 x = 0; x < os2.w; ++x) {
          const T gv = gp[y * os2.w + x] * quarter;
          r0[2 * x] += gv;
          r0[2 * x + 1] += gv;
          r1[2 * x] += gv;
          r1[2 * x + 1] += gv;
        }
      }
    }
  };
  return make_op<T>(os, std::move(out), {inode}, fn);
}

enum class ReduceKind { mean, mean_abs, mean_sq };

template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& input) {
  const i64 count = input.numel();
  if (count == 0) throw ShapeError("reduce: empty tensor " + input.shape().str());
  const T* in = input.data().data();
  T acc = 0;
  switch (kind) {
    case ReduceKind::mean:
      for (i64 i = 0; i < count; ++i) acc += in[i];
      break;
    case ReduceKind::mean_abs:
      for (i64 i = 0; i < count; ++i) acc += std::abs(in[i]);
      break;
    case ReduceKind::mean_sq:
      for (i64 i = 0; i < count; ++i) acc += in[i] * in[i];
      break;
  }
  const T inv = T(1) / static_cast<T>(count);
  auto inode = input.node();
  auto fn = [inode, kind, inv](TensorNode<T>& self) {
    if (!inode->requires_grad) return;
    inode->ensure_grad();
    const T g = self.grad[0] * inv;
    const T* x = inode->data.data();
    T* d = inode->grad.data();
    const size_t sz = inode->data.size();
    switch (kind) {
      case ReduceKind::mean:
        for (size_t i = 0; i < sz; ++i) d[i] += g;
        break;
      case ReduceKind::mean_abs:
        // Subgradient at exactly zero is zero.
        for (size_t i = 0; i < sz; ++i) {
          d[i] += x[i] > 0 ? g : (x[i] < 0 ? -g : T(0));
        }
        break;
      case ReduceKind::mean_sq:
        for (size_t i = 0; i < sz; ++i) d[i] += T(2) * g * x[i];
        break;
    }
  };
  return make_op<T>(Shape{1, 1, 1, 1}, {acc * inv}, {inode}, fn);
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& t) {
  return reduce(ReduceKind::mean, t);
}

template <typename T>
Tensor<T> reduce_mean_abs(const Tensor<T>& t) {
  return reduce(ReduceKind::mean_abs, t);
}

template <typename T>
Tensor<T> reduce_mean_sq(const Tensor<T>& t) {
  return reduce(ReduceKind::mean_sq, t);
}

// Identity forward, zero gradient to everything upstream.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& input) {
  return Tensor<T>::from_vector(input.shape(),
                                std::vector<T>(input.data().begin(), input.data().end()));
}

}  // namespace cycledepth
