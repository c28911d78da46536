#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <vector>

#include "lcanet/tensor.hpp"

namespace lcanet {

enum class Activation { linear, relu };

/// Convolution weights [K,K,Cin,Cout] (K odd) and per-output-channel bias [Cout].
template <typename S>
struct ConvParams {
  Tensor<S> w;
  Tensor<S> b;
};

/// Per-pixel channel-mixing weights [Cin,Cout] and bias [Cout].
template <typename S>
struct DenseParams {
  Tensor<S> w;
  Tensor<S> b;
};

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using ConstRowVecMap = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>;

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  const S* px = x.data();
  S* py = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) py[i] = px[i] > S(0) ? px[i] : S(0);
  return y;
}

/// Subgradient mask: 1 where x > 0, else 0 (the derivative at exactly 0 is
/// taken as 0).
template <typename S>
Tensor<S> relu_mask(const Tensor<S>& x) {
  Tensor<S> m(x.shape());
  const S* px = x.data();
  S* pm = m.data();
  for (std::size_t i = 0; i < x.size(); ++i) pm[i] = px[i] > S(0) ? S(1) : S(0);
  return m;
}

namespace detail {

template <typename S>
void apply_relu_inplace(Tensor<S>& t) {
  S* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) p[i] = p[i] > S(0) ? p[i] : S(0);
}

// dy masked by the ReLU subgradient of the saved pre-activation.
template <typename S>
Tensor<S> mask_by_preact(const Tensor<S>& dy, const Tensor<S>& preact) {
  require_same_shape(dy, preact, "activation backward");
  Tensor<S> out(dy.shape());
  const S* pd = dy.data();
  const S* pp = preact.data();
  S* po = out.data();
  for (std::size_t i = 0; i < dy.size(); ++i) po[i] = pp[i] > S(0) ? pd[i] : S(0);
  return out;
}

template <typename S>
void validate_conv_args(const Tensor<S>& x, const ConvParams<S>& p, const char* what) {
  if (x.rank() != 3) throw ShapeError(std::string(what) + ": input must be rank 3 (H,W,C)");
  if (p.w.rank() != 4) throw ShapeError(std::string(what) + ": weights must be rank 4 (K,K,Cin,Cout)");
  const std::size_t k = p.w.dim(0);
  if (p.w.dim(1) != k || k % 2 == 0) {
    throw ShapeError(std::string(what) + ": kernel must be square with odd size, got " +
                     shape_to_string(p.w.shape()));
  }
  if (p.w.dim(2) != x.dim(2)) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(2)) +
                     " channels but weights expect " + std::to_string(p.w.dim(2)));
  }
  if (p.b.rank() != 1 || p.b.dim(0) != p.w.dim(3)) {
    throw ShapeError(std::string(what) + ": bias must be [Cout]");
  }
  require_finite(p.w, what);
  require_finite(p.b, what);
}

// Patch-matrix row blocks are capped so the scratch buffer stays modest even
// at 512x512x50.
inline constexpr std::size_t kConvBlockScalars = std::size_t(1) << 23;

inline std::size_t conv_block_rows(std::size_t h, std::size_t w, std::size_t patch) {
  const std::size_t per_row = w * patch;
  return std::clamp<std::size_t>(kConvBlockScalars / std::max<std::size_t>(per_row, 1), 1, h);
}

// Gathers "same"-padded KxKxC receptive fields for output rows [r0, r1) of a
// stride-1 cross-correlation into a row-major (r1-r0)*W x K*K*C matrix. The
// channel axis is contiguous in both the image and the patch, so each (u,v)
// tap is one contiguous copy.
template <typename S>
void im2col_rows(const Tensor<S>& x, std::size_t k, std::size_t r0, std::size_t r1, S* out) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(x.dim(0));
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(x.dim(1));
  const std::size_t c = x.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t patch = k * k * c;
  const S* px = x.data();
  S* dst = out;
  for (std::size_t i = r0; i < r1; ++i) {
    for (std::ptrdiff_t j = 0; j < w; ++j, dst += patch) {
      S* cell = dst;
      for (std::size_t u = 0; u < k; ++u) {
        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + u) - pad;
        for (std::size_t v = 0; v < k; ++v, cell += c) {
          const std::ptrdiff_t cc = j + static_cast<std::ptrdiff_t>(v) - pad;
          if (r < 0 || r >= h || cc < 0 || cc >= w) {
            std::fill(cell, cell + c, S(0));
          } else {
            const S* src = px + (static_cast<std::size_t>(r) * w + static_cast<std::size_t>(cc)) * c;
            std::copy(src, src + c, cell);
          }
        }
      }
    }
  }
}

// Adjoint of im2col_rows: scatter-adds patch gradients back onto the image.
template <typename S>
void col2im_rows_add(const S* g, std::size_t k, std::size_t r0, std::size_t r1, Tensor<S>& dx) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(dx.dim(0));
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(dx.dim(1));
  const std::size_t c = dx.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t patch = k * k * c;
  S* pdx = dx.data();
  const S* src_row = g;
  for (std::size_t i = r0; i < r1; ++i) {
    for (std::ptrdiff_t j = 0; j < w; ++j, src_row += patch) {
      const S* cell = src_row;
      for (std::size_t u = 0; u < k; ++u) {
        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + u) - pad;
        for (std::size_t v = 0; v < k; ++v, cell += c) {
          const std::ptrdiff_t cc = j + static_cast<std::ptrdiff_t>(v) - pad;
          if (r < 0 || r >= h || cc < 0 || cc >= w) continue;
          S* dst = pdx + (static_cast<std::size_t>(r) * w + static_cast<std::size_t>(cc)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += cell[ch];
        }
      }
    }
  }
}

}  // namespace detail

/// Saved forward state for conv/deconv backward. preact is kept only for
/// ReLU layers.
template <typename S>
struct ConvCache {
  Tensor<S> input;
  Tensor<S> preact;
  Activation act = Activation::linear;
};

template <typename S>
struct ConvBackward {
  Tensor<S> dx;
  ConvParams<S> grads;
};

/// Stride-1 "same" cross-correlation with zero padding of (K-1)/2, bias per
/// output channel, then activation. Output is H x W x Cout.
template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& x, const ConvParams<S>& p, Activation act,
                         ConvCache<S>* cache = nullptr) {
  detail::validate_conv_args(x, p, "conv2d");
  const std::size_t h = x.dim(0), w = x.dim(1);
  const std::size_t k = p.w.dim(0), cout = p.w.dim(3);
  const std::size_t patch = k * k * x.dim(2);

  Tensor<S> y({h, w, cout});
  ConstMatMap<S> wm(p.w.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(cout));
  ConstRowVecMap<S> bv(p.b.data(), static_cast<Eigen::Index>(cout));

  const std::size_t block = detail::conv_block_rows(h, w, patch);
  std::vector<S> pbuf(block * w * patch);
  for (std::size_t r0 = 0; r0 < h; r0 += block) {
    const std::size_t r1 = std::min(h, r0 + block);
    const std::size_t rows = (r1 - r0) * w;
    detail::im2col_rows(x, k, r0, r1, pbuf.data());
    ConstMatMap<S> pm(pbuf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(patch));
    MatMap<S> ym(y.data() + r0 * w * cout, static_cast<Eigen::Index>(rows),
                 static_cast<Eigen::Index>(cout));
    ym.noalias() = pm * wm;
    ym.rowwise() += bv;
  }

  if (cache) {
    cache->act = act;
    cache->input = x;
    cache->preact = act == Activation::relu ? y : Tensor<S>{};
  }
  if (act == Activation::relu) detail::apply_relu_inplace(y);
  return y;
}

/// Exact gradients of conv2d_forward: dL/dx plus ConvParams-shaped weight and
/// bias gradients.
template <typename S>
ConvBackward<S> conv2d_backward(const ConvCache<S>& cache, const ConvParams<S>& p,
                                const Tensor<S>& dy) {
  if (cache.input.empty()) throw ShapeError("conv2d backward: cache missing forward input");
  const Tensor<S>& x = cache.input;
  detail::validate_conv_args(x, p, "conv2d backward");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t k = p.w.dim(0), cout = p.w.dim(3);
  if (dy.rank() != 3 || dy.dim(0) != h || dy.dim(1) != w || dy.dim(2) != cout) {
    throw ShapeError("conv2d backward: upstream gradient " + shape_to_string(dy.shape()) +
                     " does not match cached forward output");
  }

  Tensor<S> dpre = cache.act == Activation::relu ? detail::mask_by_preact(dy, cache.preact) : dy;

  ConvBackward<S> out{Tensor<S>({h, w, cin}),
                      ConvParams<S>{Tensor<S>({k, k, cin, cout}), Tensor<S>({cout})}};
  const std::size_t patch = k * k * cin;

  ConstMatMap<S> wm(p.w.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(cout));
  MatMap<S> dwm(out.grads.w.data(), static_cast<Eigen::Index>(patch),
                static_cast<Eigen::Index>(cout));
  ConstMatMap<S> dprem(dpre.data(), static_cast<Eigen::Index>(h * w),
                       static_cast<Eigen::Index>(cout));
  Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(out.grads.b.data(),
                                                  static_cast<Eigen::Index>(cout)) =
      dprem.colwise().sum();

  const std::size_t block = detail::conv_block_rows(h, w, patch);
  std::vector<S> pbuf(block * w * patch);
  std::vector<S> gbuf(block * w * patch);
  for (std::size_t r0 = 0; r0 < h; r0 += block) {
    const std::size_t r1 = std::min(h, r0 + block);
    const std::size_t rows = (r1 - r0) * w;
    detail::im2col_rows(x, k, r0, r1, pbuf.data());
    ConstMatMap<S> pm(pbuf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(patch));
    ConstMatMap<S> dyb(dpre.data() + r0 * w * cout, static_cast<Eigen::Index>(rows),
                       static_cast<Eigen::Index>(cout));
    dwm.noalias() += pm.transpose() * dyb;
    MatMap<S> gm(gbuf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(patch));
    gm.noalias() = dyb * wm.transpose();
    detail::col2im_rows_add(gbuf.data(), k, r0, r1, out.dx);
  }
  return out;
}

/// Kernel with both spatial axes reversed; channel axes untouched.
template <typename S>
Tensor<S> rotate180(const Tensor<S>& w) {
  if (w.rank() != 4) throw ShapeError("rotate180 expects rank-4 weights");
  const std::size_t k0 = w.dim(0), k1 = w.dim(1), cin = w.dim(2), cout = w.dim(3);
  Tensor<S> out(w.shape());
  const std::size_t inner = cin * cout;
  const S* src = w.data();
  S* dst = out.data();
  for (std::size_t u = 0; u < k0; ++u) {
    for (std::size_t v = 0; v < k1; ++v) {
      const S* s = src + (u * k1 + v) * inner;
      S* d = dst + ((k0 - 1 - u) * k1 + (k1 - 1 - v)) * inner;
      std::copy(s, s + inner, d);
    }
  }
  return out;
}

/// Stride-1 same-size transposed convolution: the adjoint of conv2d, realized
/// as a same-padding cross-correlation with the 180-degree-rotated kernel
/// (channel axes swapped wrt the conv it transposes).
template <typename S>
Tensor<S> deconv2d_forward(const Tensor<S>& x, const ConvParams<S>& p, Activation act,
                           ConvCache<S>* cache = nullptr) {
  detail::validate_conv_args(x, p, "deconv2d");
  return conv2d_forward(x, ConvParams<S>{rotate180(p.w), p.b}, act, cache);
}

template <typename S>
ConvBackward<S> deconv2d_backward(const ConvCache<S>& cache, const ConvParams<S>& p,
                                  const Tensor<S>& dy) {
  auto res = conv2d_backward(cache, ConvParams<S>{rotate180(p.w), p.b}, dy);
  res.grads.w = rotate180(res.grads.w);
  return res;
}

struct PoolCache {
  std::size_t h = 0, w = 0, c = 0;
};

/// 2x2 stride-2 average pooling. H and W must be even. Each 2x2 block is
/// summed pairwise ((a+b)+(c+d)) so that pooling an upsampled tensor
/// reproduces it exactly.
template <typename S>
Tensor<S> avgpool2_forward(const Tensor<S>& x, PoolCache* cache = nullptr) {
  if (x.rank() != 3) throw ShapeError("avgpool2: input must be rank 3");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("avgpool2: H and W must be even, got " + shape_to_string(x.shape()));
  }
  Tensor<S> y({h / 2, w / 2, c});
  const S* px = x.data();
  S* py = y.data();
  for (std::size_t i = 0; i < h / 2; ++i) {
    for (std::size_t j = 0; j < w / 2; ++j) {
      const S* r0 = px + ((2 * i) * w + 2 * j) * c;
      const S* r1 = px + ((2 * i + 1) * w + 2 * j) * c;
      S* o = py + (i * (w / 2) + j) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        o[ch] = ((r0[ch] + r0[c + ch]) + (r1[ch] + r1[c + ch])) * S(0.25);
      }
    }
  }
  if (cache) *cache = PoolCache{h, w, c};
  return y;
}

/// Each upstream value is distributed as value/4 to its four source pixels.
template <typename S>
Tensor<S> avgpool2_backward(const PoolCache& cache, const Tensor<S>& dy) {
  if (cache.h == 0) throw ShapeError("avgpool2 backward: cache missing forward call");
  if (dy.rank() != 3 || dy.dim(0) != cache.h / 2 || dy.dim(1) != cache.w / 2 ||
      dy.dim(2) != cache.c) {
    throw ShapeError("avgpool2 backward: upstream gradient " + shape_to_string(dy.shape()) +
                     " does not match cached forward output");
  }
  const std::size_t h = cache.h, w = cache.w, c = cache.c;
  Tensor<S> dx({h, w, c});
  const S* pd = dy.data();
  S* px = dx.data();
  for (std::size_t i = 0; i < h / 2; ++i) {
    for (std::size_t j = 0; j < w / 2; ++j) {
      const S* g = pd + (i * (w / 2) + j) * c;
      S* r0 = px + ((2 * i) * w + 2 * j) * c;
      S* r1 = px + ((2 * i + 1) * w + 2 * j) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const S v = g[ch] * S(0.25);
        r0[ch] = v;
        r0[c + ch] = v;
        r1[ch] = v;
        r1[c + ch] = v;
      }
    }
  }
  return dx;
}

struct UpsampleCache {
  std::size_t h = 0, w = 0, c = 0;
};

/// Nearest-neighbor 2x upsampling: every pixel becomes a 2x2 block.
template <typename S>
Tensor<S> upsample2_forward(const Tensor<S>& x, UpsampleCache* cache = nullptr) {
  if (x.rank() != 3) throw ShapeError("upsample2: input must be rank 3");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<S> y({2 * h, 2 * w, c});
  const S* px = x.data();
  S* py = y.data();
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const S* s = px + (i * w + j) * c;
      S* d00 = py + ((2 * i) * 2 * w + 2 * j) * c;
      S* d10 = py + ((2 * i + 1) * 2 * w + 2 * j) * c;
      std::copy(s, s + c, d00);
      std::copy(s, s + c, d00 + c);
      std::copy(s, s + c, d10);
      std::copy(s, s + c, d10 + c);
    }
  }
  if (cache) *cache = UpsampleCache{h, w, c};
  return y;
}

/// Each source pixel's gradient is the sum over its replicated 2x2 block.
template <typename S>
Tensor<S> upsample2_backward(const UpsampleCache& cache, const Tensor<S>& dy) {
  if (cache.h == 0) throw ShapeError("upsample2 backward: cache missing forward call");
  if (dy.rank() != 3 || dy.dim(0) != 2 * cache.h || dy.dim(1) != 2 * cache.w ||
      dy.dim(2) != cache.c) {
    throw ShapeError("upsample2 backward: upstream gradient " + shape_to_string(dy.shape()) +
                     " does not match cached forward output");
  }
  const std::size_t h = cache.h, w = cache.w, c = cache.c;
  Tensor<S> dx({h, w, c});
  const S* pd = dy.data();
  S* px = dx.data();
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const S* g00 = pd + ((2 * i) * 2 * w + 2 * j) * c;
      const S* g10 = pd + ((2 * i + 1) * 2 * w + 2 * j) * c;
      S* o = px + (i * w + j) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        o[ch] = (g00[ch] + g00[c + ch]) + (g10[ch] + g10[c + ch]);
      }
    }
  }
  return dx;
}

template <typename S>
struct DenseCache {
  Tensor<S> input;
  Tensor<S> preact;
  Activation act = Activation::linear;
};

template <typename S>
struct DenseBackward {
  Tensor<S> dx;
  DenseParams<S> grads;
};

namespace detail {
template <typename S>
void validate_dense_args(const Tensor<S>& x, const DenseParams<S>& p, const char* what) {
  if (x.rank() != 3) throw ShapeError(std::string(what) + ": input must be rank 3 (H,W,C)");
  if (p.w.rank() != 2) throw ShapeError(std::string(what) + ": weights must be rank 2 (Cin,Cout)");
  if (p.w.dim(0) != x.dim(2)) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(2)) +
                     " channels but weights expect " + std::to_string(p.w.dim(0)));
  }
  if (p.b.rank() != 1 || p.b.dim(0) != p.w.dim(1)) {
    throw ShapeError(std::string(what) + ": bias must be [Cout]");
  }
  require_finite(p.w, what);
  require_finite(p.b, what);
}
}  // namespace detail

/// At every spatial location independently: y = act(W^T x + b). Spatial
/// dimensions are unchanged.
template <typename S>
Tensor<S> dense_forward(const Tensor<S>& x, const DenseParams<S>& p, Activation act,
                        DenseCache<S>* cache = nullptr) {
  detail::validate_dense_args(x, p, "dense");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t cout = p.w.dim(1);
  Tensor<S> y({h, w, cout});
  ConstMatMap<S> xm(x.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cin));
  ConstMatMap<S> wm(p.w.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cout));
  MatMap<S> ym(y.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cout));
  ym.noalias() = xm * wm;
  ym.rowwise() += ConstRowVecMap<S>(p.b.data(), static_cast<Eigen::Index>(cout));
  if (cache) {
    cache->act = act;
    cache->input = x;
    cache->preact = act == Activation::relu ? y : Tensor<S>{};
  }
  if (act == Activation::relu) detail::apply_relu_inplace(y);
  return y;
}

/// Weight/bias gradients are summed over all spatial positions.
template <typename S>
DenseBackward<S> dense_backward(const DenseCache<S>& cache, const DenseParams<S>& p,
                                const Tensor<S>& dy) {
  if (cache.input.empty()) throw ShapeError("dense backward: cache missing forward input");
  const Tensor<S>& x = cache.input;
  detail::validate_dense_args(x, p, "dense backward");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t cout = p.w.dim(1);
  if (dy.rank() != 3 || dy.dim(0) != h || dy.dim(1) != w || dy.dim(2) != cout) {
    throw ShapeError("dense backward: upstream gradient " + shape_to_string(dy.shape()) +
                     " does not match cached forward output");
  }
  Tensor<S> dpre = cache.act == Activation::relu ? detail::mask_by_preact(dy, cache.preact) : dy;

  DenseBackward<S> out{Tensor<S>({h, w, cin}),
                       DenseParams<S>{Tensor<S>({cin, cout}), Tensor<S>({cout})}};
  ConstMatMap<S> xm(x.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cin));
  ConstMatMap<S> dym(dpre.data(), static_cast<Eigen::Index>(h * w),
                     static_cast<Eigen::Index>(cout));
  ConstMatMap<S> wm(p.w.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cout));
  MatMap<S> dwm(out.grads.w.data(), static_cast<Eigen::Index>(cin),
                static_cast<Eigen::Index>(cout));
  MatMap<S> dxm(out.dx.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cin));
  dwm.noalias() = xm.transpose() * dym;
  Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(out.grads.b.data(),
                                                  static_cast<Eigen::Index>(cout)) =
      dym.colwise().sum();
  dxm.noalias() = dym * wm.transpose();
  return out;
}

}  // namespace lcanet
