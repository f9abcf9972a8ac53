#pragma once

// Differentiable layer primitives.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "pcgkit/autograd/gemm.hpp"
#include "pcgkit/autograd/tensor.hpp"
#include "pcgkit/random.hpp"

namespace pcgkit::ag {

namespace detail {
inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}
}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (T* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], T(0));
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const T* x = parent_value(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (x[i] > T(0)) g[i] += self.grad[i];
      }
    }
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel(shape) == a.numel(), "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return Tensor<T>::make_result(std::move(shape), a.values(), {a}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// N x ... -> N x (product of the rest).
template <class T>
Tensor<T> flatten(const Tensor<T>& a) {
  return reshape(a, {a.dim(0), a.numel() / a.dim(0)});
}

/// Swaps the last two axes of a rank-3 tensor: N x A x B -> N x B x A.
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  detail::require(x.rank() == 3, "transpose_last2: expected rank 3");
  const std::size_t n = x.dim(0), a = x.dim(1), b = x.dim(2);
  std::vector<T> out(x.numel());
  const T* in = x.data().data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) out[s * a * b + j * a + i] = in[s * a * b + i * b + j];
  return Tensor<T>::make_result({n, b, a}, std::move(out), {x}, [n, a, b](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < a; ++i)
          for (std::size_t j = 0; j < b; ++j) g[s * a * b + i * b + j] += self.grad[s * a * b + j * a + i];
    }
  });
}

/// Concatenates N x k_i matrices along the feature axis.
template <class T>
Tensor<T> concat_features(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat: no inputs");
  const std::size_t n = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rank() == 2 && p.dim(0) == n, "concat: inputs must be N x k with equal N");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(n * total);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      std::copy_n(parts[i].data().data() + s * widths[i], widths[i], out.data() + s * total + off);
      off += widths[i];
    }
  }
  return Tensor<T>::make_result({n, total}, std::move(out), parts, [n, widths, total](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (T* g = parent_grad(self, i)) {
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t j = 0; j < widths[i]; ++j) g[s * widths[i] + j] += self.grad[s * total + off + j];
      }
      off += widths[i];
    }
  });
}

/// y = x W^T + b with x: N x in, W: out x in, b: out.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
                  "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  detail::require(b.numel() == out_f, "linear: bias size mismatch");
  std::vector<T> y(n * out_f);
  for (std::size_t s = 0; s < n; ++s) std::copy(b.data().begin(), b.data().end(), y.begin() + s * out_f);
  gemm<T>(false, true, n, out_f, in, T(1), x.data().data(), w.data().data(), T(1), y.data());
  return Tensor<T>::make_result({n, out_f}, std::move(y), {x, w, b}, [n, in, out_f](Node<T>& self) {
    const T* dy = self.grad.data();
    if (T* gx = parent_grad(self, 0)) gemm<T>(false, false, n, in, out_f, T(1), dy, parent_value(self, 1), T(1), gx);
    if (T* gw = parent_grad(self, 1)) gemm<T>(true, false, out_f, in, n, T(1), dy, parent_value(self, 0), T(1), gw);
    if (T* gb = parent_grad(self, 2)) {
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < out_f; ++o) gb[o] += dy[s * out_f + o];
    }
  });
}

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

namespace detail {

struct ConvGeometry {
  std::size_t c, h, w, kh, kw, oh, ow;
  Conv2dOptions o;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_pixels() const { return oh * ow; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t op = g.out_pixels();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((ch * g.kh + ki) * g.kw + kj) * op;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.o.stride_h + ki) - static_cast<long>(g.o.pad_h);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.ow, T(0));
            continue;
          }
          const T* src = x + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.o.stride_w + kj) - static_cast<long>(g.o.pad_w);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t op = g.out_pixels();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((ch * g.kh + ki) * g.kw + kj) * op;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.o.stride_h + ki) - static_cast<long>(g.o.pad_h);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = dx + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.o.stride_w + kj) - static_cast<long>(g.o.pad_w);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// Output extent of a convolution/pool along one axis, or 0 when the kernel does not fit.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t padded = in + 2 * pad;
  if (stride == 0 || padded < k) return 0;
  return (padded - k) / stride + 1;
}

/// Cross-correlation. x: N x C x H x W, w: F x C x kh x kw, b: F.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Conv2dOptions opt = {}) {
  detail::require(x.rank() == 4 && w.rank() == 4, "conv2d: expected rank-4 input and kernel");
  detail::require(x.dim(1) == w.dim(1), "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                            shape_str(w.shape()));
  detail::require(b.numel() == w.dim(0), "conv2d: bias size mismatch");
  const std::size_t n = x.dim(0), f = w.dim(0);
  detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), 0, 0, opt};
  g.oh = conv_out_extent(g.h, g.kh, opt.stride_h, opt.pad_h);
  g.ow = conv_out_extent(g.w, g.kw, opt.stride_w, opt.pad_w);
  detail::require(g.oh > 0 && g.ow > 0, "conv2d: kernel larger than padded input " + shape_str(x.shape()));
  const std::size_t op = g.out_pixels(), patch = g.patch(), in_sz = g.c * g.h * g.w;
  std::vector<T> y(n * f * op);
  std::vector<T> cols(patch * op);
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(x.data().data() + s * in_sz, g, cols.data());
    T* ys = y.data() + s * f * op;
    for (std::size_t o = 0; o < f; ++o) std::fill_n(ys + o * op, op, b.data()[o]);
    gemm<T>(false, false, f, op, patch, T(1), w.data().data(), cols.data(), T(1), ys);
  }
  return Tensor<T>::make_result({n, f, g.oh, g.ow}, std::move(y), {x, w, b}, [n, f, g](Node<T>& self) {
    const std::size_t op = g.out_pixels(), patch = g.patch(), in_sz = g.c * g.h * g.w;
    T* gx = parent_grad(self, 0);
    T* gw = parent_grad(self, 1);
    T* gb = parent_grad(self, 2);
    const T* xv = parent_value(self, 0);
    const T* wv = parent_value(self, 1);
    std::vector<T> cols(patch * op);
    for (std::size_t s = 0; s < n; ++s) {
      const T* dy = self.grad.data() + s * f * op;
      if (gb) {
        for (std::size_t o = 0; o < f; ++o) {
          T acc = 0;
          for (std::size_t p = 0; p < op; ++p) acc += dy[o * op + p];
          gb[o] += acc;
        }
      }
      if (gw) {
        detail::im2col(xv + s * in_sz, g, cols.data());
        gemm<T>(false, true, f, patch, op, T(1), dy, cols.data(), T(1), gw);
      }
      if (gx) {
        gemm<T>(true, false, patch, op, f, T(1), wv, dy, T(0), cols.data());
        detail::col2im_add(cols.data(), g, gx + s * in_sz);
      }
    }
  });
}

/// x: N x C x L, w: F x C x k, b: F.
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride = 1,
                 std::size_t pad = 0) {
  detail::require(x.rank() == 3 && w.rank() == 3, "conv1d: expected rank-3 input and kernel");
  auto x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  auto w4 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2)});
  auto y = conv2d(x4, w4, b, Conv2dOptions{1, stride, 0, pad});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

/// Max over kh x kw windows; ties route the gradient to the first element.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw) {
  detail::require(x.rank() == 4, "maxpool2d: expected rank 4");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = conv_out_extent(h, kh, sh, 0), ow = conv_out_extent(w, kw, sw, 0);
  detail::require(oh > 0 && ow > 0, "maxpool2d: window larger than input " + shape_str(x.shape()));
  std::vector<T> y(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(y.size());
  const T* xv = x.data().data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = xv + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * sh) * w + ox * sw;
        T best_v = src[best];
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t idx = (oy * sh + i) * w + ox * sw + j;
            if (src[idx] > best_v) {
              best_v = src[idx];
              best = idx;
            }
          }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        y[o] = best_v;
        (*argmax)[o] = plane * h * w + best;
      }
  }
  return Tensor<T>::make_result({n, c, oh, ow}, std::move(y), {x}, [argmax](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*argmax)[o]] += self.grad[o];
    }
  });
}

/// Inverted dropout; evaluation mode (or p == 0) returns the input itself.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
    y[i] = x.data()[i] * (*mask)[i];
  }
  return Tensor<T>::make_result(x.shape(), std::move(y), {x}, [mask](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += (*mask)[i] * self.grad[i];
    }
  });
}

/// Hidden state at the final timestep: N x L x H -> N x H.
template <class T>
Tensor<T> last_timestep(const Tensor<T>& x) {
  detail::require(x.rank() == 3, "last_timestep: expected rank 3");
  const std::size_t n = x.dim(0), l = x.dim(1), h = x.dim(2);
  std::vector<T> y(n * h);
  for (std::size_t s = 0; s < n; ++s) std::copy_n(x.data().data() + (s * l + l - 1) * h, h, y.data() + s * h);
  return Tensor<T>::make_result({n, h}, std::move(y), {x}, [n, l, h](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < h; ++j) g[(s * l + l - 1) * h + j] += self.grad[s * h + j];
    }
  });
}

namespace detail {
template <class T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}
}  // namespace detail

/// One LSTM layer with zero initial state, gates ordered (input, forget, cell, output).
/// x: N x L x C, w_ih: 4H x C, w_hh: 4H x H, b: 4H. Returns the N x L x H hidden sequence.
template <class T>
Tensor<T> lstm_layer(const Tensor<T>& x, const Tensor<T>& w_ih, const Tensor<T>& w_hh, const Tensor<T>& b) {
  detail::require(x.rank() == 3 && w_ih.rank() == 2 && w_hh.rank() == 2, "lstm: bad ranks");
  const std::size_t n = x.dim(0), l = x.dim(1), c = x.dim(2), h = w_hh.dim(1);
  detail::require(l >= 1, "lstm: empty sequence");
  detail::require(w_ih.dim(0) == 4 * h && w_ih.dim(1) == c && w_hh.dim(0) == 4 * h && b.numel() == 4 * h,
                  "lstm: weight shapes do not match input " + shape_str(x.shape()));
  const std::size_t g4 = 4 * h;
  // Per-timestep caches laid out [t][n][.].
  auto gates = std::make_shared<std::vector<T>>(l * n * g4);  // activated i, f, g, o
  auto cell = std::make_shared<std::vector<T>>(l * n * h);
  auto hidden = std::make_shared<std::vector<T>>(l * n * h);
  std::vector<T> proj(n * l * g4);
  gemm<T>(false, true, n * l, g4, c, T(1), x.data().data(), w_ih.data().data(), T(0), proj.data());
  std::vector<T> z(n * g4);
  for (std::size_t t = 0; t < l; ++t) {
    for (std::size_t s = 0; s < n; ++s) {
      const T* pr = proj.data() + (s * l + t) * g4;
      for (std::size_t j = 0; j < g4; ++j) z[s * g4 + j] = pr[j] + b.data()[j];
    }
    if (t > 0) gemm<T>(false, true, n, g4, h, T(1), hidden->data() + (t - 1) * n * h, w_hh.data().data(), T(1), z.data());
    T* ga = gates->data() + t * n * g4;
    T* ct = cell->data() + t * n * h;
    T* ht = hidden->data() + t * n * h;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < h; ++j) {
        const T i_g = detail::sigmoid(z[s * g4 + j]);
        const T f_g = detail::sigmoid(z[s * g4 + h + j]);
        const T c_g = std::tanh(z[s * g4 + 2 * h + j]);
        const T o_g = detail::sigmoid(z[s * g4 + 3 * h + j]);
        const T c_prev = t > 0 ? cell->data()[(t - 1) * n * h + s * h + j] : T(0);
        const T c_new = f_g * c_prev + i_g * c_g;
        ga[s * g4 + j] = i_g;
        ga[s * g4 + h + j] = f_g;
        ga[s * g4 + 2 * h + j] = c_g;
        ga[s * g4 + 3 * h + j] = o_g;
        ct[s * h + j] = c_new;
        ht[s * h + j] = o_g * std::tanh(c_new);
      }
    }
  }
  std::vector<T> y(n * l * h);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t s = 0; s < n; ++s)
      std::copy_n(hidden->data() + (t * n + s) * h, h, y.data() + (s * l + t) * h);

  return Tensor<T>::make_result({n, l, h}, std::move(y), {x, w_ih, w_hh, b},
                                [n, l, c, h, gates, cell, hidden](Node<T>& self) {
    const std::size_t g4 = 4 * h;
    T* gx = parent_grad(self, 0);
    T* gwih = parent_grad(self, 1);
    T* gwhh = parent_grad(self, 2);
    T* gb = parent_grad(self, 3);
    const T* xv = parent_value(self, 0);
    const T* wih = parent_value(self, 1);
    const T* whh = parent_value(self, 2);
    std::vector<T> dz_all(n * l * g4);
    std::vector<T> dh_next(n * h, T(0)), dc_next(n * h, T(0)), dz(n * g4);
    for (std::size_t t = l; t-- > 0;) {
      const T* ga = gates->data() + t * n * g4;
      const T* ct = cell->data() + t * n * h;
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t j = 0; j < h; ++j) {
          const T i_g = ga[s * g4 + j], f_g = ga[s * g4 + h + j], c_g = ga[s * g4 + 2 * h + j],
                  o_g = ga[s * g4 + 3 * h + j];
          const T tc = std::tanh(ct[s * h + j]);
          const T c_prev = t > 0 ? cell->data()[(t - 1) * n * h + s * h + j] : T(0);
          const T dh = self.grad[(s * l + t) * h + j] + dh_next[s * h + j];
          const T d_o = dh * tc;
          const T dc = dh * o_g * (T(1) - tc * tc) + dc_next[s * h + j];
          dz[s * g4 + j] = dc * c_g * i_g * (T(1) - i_g);
          dz[s * g4 + h + j] = dc * c_prev * f_g * (T(1) - f_g);
          dz[s * g4 + 2 * h + j] = dc * i_g * (T(1) - c_g * c_g);
          dz[s * g4 + 3 * h + j] = d_o * o_g * (T(1) - o_g);
          dc_next[s * h + j] = dc * f_g;
        }
      }
      if (t > 0) {
        const T* h_prev = hidden->data() + (t - 1) * n * h;
        if (gwhh) gemm<T>(true, false, g4, h, n, T(1), dz.data(), h_prev, T(1), gwhh);
        gemm<T>(false, false, n, h, g4, T(1), dz.data(), whh, T(0), dh_next.data());
      }
      for (std::size_t s = 0; s < n; ++s) {
        std::copy_n(dz.data() + s * g4, g4, dz_all.data() + (s * l + t) * g4);
        if (gb)
          for (std::size_t j = 0; j < g4; ++j) gb[j] += dz[s * g4 + j];
      }
    }
    if (gwih) gemm<T>(true, false, g4, c, n * l, T(1), dz_all.data(), xv, T(1), gwih);
    if (gx) gemm<T>(false, false, n * l, c, g4, T(1), dz_all.data(), wih, T(1), gx);
  });
}

}  // namespace pcgkit::ag
