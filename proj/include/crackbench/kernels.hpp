#pragma once

// Forward/backward kernels over plain tensors. The autodiff graph in graph.hpp
// wraps these; tests call them directly against independent oracles.

#include "crackbench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace crackbench::kernels {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline void check_conv_shapes(const Shape& in, const Shape& w, const Shape& b, int stride, int pad) {
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0, got " + std::to_string(pad));
  if (w.h != w.w) throw ShapeError("conv2d: kernel must be square, weight " + w.str());
  if (in.c != w.c)
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, weight " + w.str() +
                     " expects " + std::to_string(w.c));
  if (b.numel() != w.n)
    throw ShapeError("conv2d: bias " + b.str() + " must hold " + std::to_string(w.n) + " values");
  if (in.h + 2 * pad < w.h || in.w + 2 * pad < w.w)
    throw ShapeError("conv2d: kernel " + w.str() + " larger than padded input " + in.str());
}

// (C*k*k) x (Ho*Wo) patch matrix for sample n.
template <typename Scalar>
RowMatrix<Scalar> im2col(const Tensor<Scalar>& in, int n, int k, int stride, int pad, int ho, int wo) {
  const Shape& s = in.shape();
  RowMatrix<Scalar> col(static_cast<Eigen::Index>(s.c) * k * k, static_cast<Eigen::Index>(ho) * wo);
  for (int c = 0; c < s.c; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = col.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * wo + ox] =
                (iy >= 0 && iy < s.h && ix >= 0 && ix < s.w) ? in(n, c, iy, ix) : Scalar(0);
          }
        }
      }
  return col;
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& col, Tensor<Scalar>& in_grad, int n, int k, int stride, int pad,
                int ho, int wo) {
  const Shape& s = in_grad.shape();
  for (int c = 0; c < s.c; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = col.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= s.h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < s.w) in_grad(n, c, iy, ix) += row[oy * wo + ox];
          }
        }
      }
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& in, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      int stride, int pad) {
  const Shape& s = in.shape();
  const Shape& ws = weight.shape();
  check_conv_shapes(s, ws, bias.shape(), stride, pad);
  const int k = ws.h;
  const int ho = conv_out_extent(s.h, k, stride, pad);
  const int wo = conv_out_extent(s.w, k, stride, pad);
  Tensor<Scalar> out(Shape{s.n, ws.n, ho, wo});
  Eigen::Map<const RowMatrix<Scalar>> wmat(weight.data(), ws.n, static_cast<Eigen::Index>(ws.c) * k * k);
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> bvec(bias.data(), ws.n);
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<RowMatrix<Scalar>> omat(out.data() + out.index(n, 0, 0, 0), ws.n,
                                       static_cast<Eigen::Index>(ho) * wo);
    if (k == 1 && stride == 1 && pad == 0) {
      Eigen::Map<const RowMatrix<Scalar>> imat(in.data() + in.index(n, 0, 0, 0), s.c, s.plane());
      omat.noalias() = wmat * imat;
    } else {
      omat.noalias() = wmat * im2col(in, n, k, stride, pad, ho, wo);
    }
    omat.colwise() += bvec;
  }
  return out;
}

/// Accumulates input, weight and bias gradients for conv2d.
template <typename Scalar>
void conv2d_backward(const Tensor<Scalar>& in, const Tensor<Scalar>& weight, const Tensor<Scalar>& out_grad,
                     int stride, int pad, Tensor<Scalar>* in_grad, Tensor<Scalar>* weight_grad,
                     Tensor<Scalar>* bias_grad) {
  const Shape& s = in.shape();
  const Shape& ws = weight.shape();
  const Shape& os = out_grad.shape();
  const int k = ws.h;
  const Eigen::Index kk = static_cast<Eigen::Index>(ws.c) * k * k;
  const Eigen::Index npix = static_cast<Eigen::Index>(os.h) * os.w;
  Eigen::Map<const RowMatrix<Scalar>> wmat(weight.data(), ws.n, kk);
  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<const RowMatrix<Scalar>> gmat(out_grad.data() + out_grad.index(n, 0, 0, 0), os.c, npix);
    if (bias_grad) {
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> bg(bias_grad->data(), ws.n);
      bg += gmat.rowwise().sum();
    }
    if (pointwise) {
      Eigen::Map<const RowMatrix<Scalar>> imat(in.data() + in.index(n, 0, 0, 0), s.c, s.plane());
      if (weight_grad) {
        Eigen::Map<RowMatrix<Scalar>> wg(weight_grad->data(), ws.n, kk);
        wg.noalias() += gmat * imat.transpose();
      }
      if (in_grad) {
        Eigen::Map<RowMatrix<Scalar>> ig(in_grad->data() + in_grad->index(n, 0, 0, 0), s.c, s.plane());
        ig.noalias() += wmat.transpose() * gmat;
      }
      continue;
    }
    if (weight_grad) {
      Eigen::Map<RowMatrix<Scalar>> wg(weight_grad->data(), ws.n, kk);
      wg.noalias() += gmat * im2col(in, n, k, stride, pad, os.h, os.w).transpose();
    }
    if (in_grad) {
      RowMatrix<Scalar> dcol = wmat.transpose() * gmat;
      col2im_add(dcol, *in_grad, n, k, stride, pad, os.h, os.w);
    }
  }
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& in) {
  return Tensor<Scalar>(in.shape(), in.array().max(Scalar(0)));
}

template <typename Scalar>
Scalar sigmoid(Scalar a) {
  // Two branches keep exp() from overflowing for large |a|.
  if (a >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-a));
  const Scalar e = std::exp(a);
  return e / (Scalar(1) + e);
}

/// log(1 + exp(x)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& in) {
  Tensor<Scalar> out(in.shape());
  for (std::ptrdiff_t i = 0; i < in.size(); ++i) out[i] = sigmoid(in[i]);
  return out;
}

/// Replication-pads the bottom row / right column when H or W is odd.
template <typename Scalar>
Tensor<Scalar> pad_to_even(const Tensor<Scalar>& in) {
  const Shape& s = in.shape();
  const int h = s.h + (s.h % 2), w = s.w + (s.w % 2);
  if (h == s.h && w == s.w) return in;
  Tensor<Scalar> out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(n, c, y, x) = in(n, c, std::min(y, s.h - 1), std::min(x, s.w - 1));
  return out;
}

/// 2x2 / stride-2 max pooling on an even-extent input. `argmax` receives, for each
/// output element, the flat index of the first (row-major) maximum in its window.
template <typename Scalar>
Tensor<Scalar> maxpool2(const Tensor<Scalar>& in, std::vector<std::ptrdiff_t>* argmax = nullptr) {
  const Shape& s = in.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError("maxpool2: extents must be even after padding, got " + s.str());
  Tensor<Scalar> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
  std::ptrdiff_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / 2; ++y)
        for (int x = 0; x < s.w / 2; ++x, ++o) {
          std::ptrdiff_t best = in.index(n, c, 2 * y, 2 * x);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::ptrdiff_t i = in.index(n, c, 2 * y + dy, 2 * x + dx);
              if (in[i] > in[best]) best = i;
            }
          out[o] = in[best];
          if (argmax) (*argmax)[static_cast<std::size_t>(o)] = best;
        }
  return out;
}

/// Standard bilinear up-sampling kernel of size 2f x 2f (row-major), the
/// weights of a transposed convolution with stride f.
template <typename Scalar>
Tensor<Scalar> bilinear_kernel(int factor) {
  if (factor < 1) throw ShapeError("bilinear_kernel: factor must be >= 1");
  const int k = 2 * factor - factor % 2;
  const double center = factor % 2 == 1 ? factor - 1 : factor - 0.5;
  Tensor<Scalar> ker(Shape{1, 1, k, k});
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x)
      ker(0, 0, y, x) = static_cast<Scalar>((1.0 - std::abs(y - center) / factor) *
                                            (1.0 - std::abs(x - center) / factor));
  return ker;
}

namespace detail {

// Transposed-convolution taps for one output coordinate: the two input indices
// (edge-replicated) and their kernel weights along one axis.
struct Taps {
  int i0, i1;
  int k0, k1;
};

inline Taps upsample_taps(int o, int factor, int extent) {
  const int pad = factor / 2;
  // Inputs i with 0 <= o + pad - i*factor < k.
  const int hi = (o + pad) / factor;
  const int lo = hi - 1;
  Taps t{};
  t.k0 = o + pad - lo * factor;
  t.k1 = o + pad - hi * factor;
  t.i0 = std::clamp(lo, 0, extent - 1);
  t.i1 = std::clamp(hi, 0, extent - 1);
  return t;
}

}  // namespace detail

/// Depthwise transposed convolution with the separable bilinear kernel, stride
/// `factor`, on an edge-replicated input, cropped to out_h x out_w (at most
/// factor*H x factor*W). Realizes bilinear interpolation with half-pixel centers.
template <typename Scalar>
Tensor<Scalar> bilinear_upsample(const Tensor<Scalar>& in, const Tensor<Scalar>& kernel, int factor, int out_h,
                                 int out_w) {
  const Shape& s = in.shape();
  if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1, got " + std::to_string(factor));
  if (factor == 1) {
    if (out_h != s.h || out_w != s.w) throw ShapeError("bilinear_upsample: factor 1 cannot change extents");
    return in;
  }
  if (factor % 2 != 0)
    throw ShapeError("bilinear_upsample: factor must be 1 or even, got " + std::to_string(factor));
  if (out_h > s.h * factor || out_w > s.w * factor || out_h < 1 || out_w < 1)
    throw ShapeError("bilinear_upsample: target extent exceeds factor x input " + s.str());
  const Shape& ks = kernel.shape();
  if (ks.h != 2 * factor || ks.w != 2 * factor)
    throw ShapeError("bilinear_upsample: kernel " + ks.str() + " does not match factor " + std::to_string(factor));

  Tensor<Scalar> out(Shape{s.n, s.c, out_h, out_w});
  std::vector<detail::Taps> ty(static_cast<std::size_t>(out_h)), tx(static_cast<std::size_t>(out_w));
  for (int y = 0; y < out_h; ++y) ty[static_cast<std::size_t>(y)] = detail::upsample_taps(y, factor, s.h);
  for (int x = 0; x < out_w; ++x) tx[static_cast<std::size_t>(x)] = detail::upsample_taps(x, factor, s.w);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < out_h; ++y) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        for (int x = 0; x < out_w; ++x) {
          const auto& b = tx[static_cast<std::size_t>(x)];
          out(n, c, y, x) = kernel(0, 0, a.k0, b.k0) * in(n, c, a.i0, b.i0) +
                            kernel(0, 0, a.k0, b.k1) * in(n, c, a.i0, b.i1) +
                            kernel(0, 0, a.k1, b.k0) * in(n, c, a.i1, b.i0) +
                            kernel(0, 0, a.k1, b.k1) * in(n, c, a.i1, b.i1);
        }
      }
  return out;
}

/// Transpose of bilinear_upsample; accumulates into in_grad.
template <typename Scalar>
void bilinear_upsample_backward(const Tensor<Scalar>& out_grad, const Tensor<Scalar>& kernel, int factor,
                                Tensor<Scalar>& in_grad) {
  const Shape& s = in_grad.shape();
  const Shape& os = out_grad.shape();
  if (factor == 1) {
    in_grad.array() += out_grad.array();
    return;
  }
  for (int y = 0; y < os.h; ++y) {
    const auto a = detail::upsample_taps(y, factor, s.h);
    for (int x = 0; x < os.w; ++x) {
      const auto b = detail::upsample_taps(x, factor, s.w);
      const Scalar w00 = kernel(0, 0, a.k0, b.k0), w01 = kernel(0, 0, a.k0, b.k1);
      const Scalar w10 = kernel(0, 0, a.k1, b.k0), w11 = kernel(0, 0, a.k1, b.k1);
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const Scalar g = out_grad(n, c, y, x);
          in_grad(n, c, a.i0, b.i0) += w00 * g;
          in_grad(n, c, a.i0, b.i1) += w01 * g;
          in_grad(n, c, a.i1, b.i0) += w10 * g;
          in_grad(n, c, a.i1, b.i1) += w11 * g;
        }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: N/H/W mismatch " + sa.str() + " vs " + sb.str());
  Tensor<Scalar> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::ptrdiff_t na = sa.c * sa.plane(), nb = sb.c * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    Scalar* dst = out.data() + out.index(n, 0, 0, 0);
    std::copy_n(a.data() + n * na, na, dst);
    std::copy_n(b.data() + n * nb, nb, dst + na);
  }
  return out;
}

}  // namespace crackbench::kernels
