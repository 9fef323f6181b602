#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "avfusion/tensor.hpp"

// Forward kernels and their exact adjoints. Every function here is pure: no
// hidden state, and each output element is reduced in a fixed order so that
// results are bit-reproducible regardless of how callers schedule them.
namespace avf::ops {

namespace detail {

// C[m x n] += A[m x k] * B[k x n]. Each C element accumulates over k in
// increasing order; the column blocking only changes which elements are
// visited together.
template <class T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
              std::size_t k, std::size_t n) {
  constexpr std::size_t kColBlock = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t j1 = std::min(n, j0 + kColBlock);
    for (std::size_t p = 0; p < k; ++p) {
      const T* __restrict brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = a[i * k + p];
        T* __restrict crow = c + i * n;
        for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T. Each dot product runs over eight
// interleaved partial sums (lane j % 8) combined in a fixed order.
template <class T>
void gemm_abt_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
                  std::size_t k, std::size_t n) {
  constexpr std::size_t kLanes = 8;
  const std::size_t body = k - k % kLanes;
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T lane[kLanes] = {};
      for (std::size_t p = 0; p < body; p += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) lane[l] += arow[p + l] * brow[p + l];
      T acc{0};
      for (std::size_t l = 0; l < kLanes; ++l) acc += lane[l];
      for (std::size_t p = body; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

template <class T>
void transpose_into(const T* __restrict src, T* __restrict dst, std::size_t rows,
                    std::size_t cols) {
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kTile)
    for (std::size_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::size_t i1 = std::min(rows, i0 + kTile);
      const std::size_t j1 = std::min(cols, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t pad, const char* axis) {
  if (stride == 0) throw ShapeError(std::string("conv: zero stride on axis ") + axis);
  if (kernel == 0) throw ShapeError(std::string("conv: zero kernel extent on axis ") + axis);
  const std::size_t span = in + 2 * pad;
  if (span < kernel || (span - kernel) % stride != 0)
    throw ShapeError(std::string("conv: non-integer output size on axis ") + axis + " (in=" +
                     std::to_string(in) + ", kernel=" + std::to_string(kernel) + ", stride=" +
                     std::to_string(stride) + ", pad=" + std::to_string(pad) + ")");
  return (span - kernel) / stride + 1;
}

/// Geometry of a 3D cross-correlation from an input volume to an output volume.
struct ConvDims {
  std::size_t c_in = 0, t = 0, h = 0, w = 0;
  std::size_t c_out = 0, kt = 1, kh = 1, kw = 1;
  std::size_t st = 1, sh = 1, sw = 1;
  std::size_t pt = 0, ph = 0, pw = 0;
  std::size_t ot = 0, oh = 0, ow = 0;

  std::size_t patch() const { return c_in * kt * kh * kw; }
  std::size_t positions() const { return ot * oh * ow; }
  std::size_t in_size() const { return c_in * t * h * w; }
};

// cols[patch x positions]; zero padding outside the input volume.
template <class T>
void im2col(const T* x, const ConvDims& d, T* cols) {
  const std::size_t positions = d.positions();
  for (std::size_t c = 0; c < d.c_in; ++c)
    for (std::size_t a = 0; a < d.kt; ++a)
      for (std::size_t b = 0; b < d.kh; ++b)
        for (std::size_t e = 0; e < d.kw; ++e) {
          const std::size_t row = ((c * d.kt + a) * d.kh + b) * d.kw + e;
          T* out = cols + row * positions;
          for (std::size_t ot = 0; ot < d.ot; ++ot) {
            const long it = static_cast<long>(ot * d.st + a) - static_cast<long>(d.pt);
            for (std::size_t oh = 0; oh < d.oh; ++oh) {
              const long ih = static_cast<long>(oh * d.sh + b) - static_cast<long>(d.ph);
              T* dst = out + (ot * d.oh + oh) * d.ow;
              if (it < 0 || it >= static_cast<long>(d.t) || ih < 0 ||
                  ih >= static_cast<long>(d.h)) {
                std::fill(dst, dst + d.ow, T{0});
                continue;
              }
              const T* src = x + ((c * d.t + static_cast<std::size_t>(it)) * d.h +
                                  static_cast<std::size_t>(ih)) * d.w;
              if (d.pw == 0) {
                const T* s = src + e;
                for (std::size_t ow = 0; ow < d.ow; ++ow) dst[ow] = s[ow * d.sw];
                continue;
              }
              for (std::size_t ow = 0; ow < d.ow; ++ow) {
                const long iw = static_cast<long>(ow * d.sw + e) - static_cast<long>(d.pw);
                dst[ow] = (iw < 0 || iw >= static_cast<long>(d.w)) ? T{0}
                                                                    : src[static_cast<std::size_t>(iw)];
              }
            }
          }
        }
}

// Adjoint of im2col: scatter-add columns back into the (zeroed) input volume.
template <class T>
void col2im(const T* cols, const ConvDims& d, T* x) {
  const std::size_t positions = d.positions();
  for (std::size_t c = 0; c < d.c_in; ++c)
    for (std::size_t a = 0; a < d.kt; ++a)
      for (std::size_t b = 0; b < d.kh; ++b)
        for (std::size_t e = 0; e < d.kw; ++e) {
          const std::size_t row = ((c * d.kt + a) * d.kh + b) * d.kw + e;
          const T* in = cols + row * positions;
          for (std::size_t ot = 0; ot < d.ot; ++ot) {
            const long it = static_cast<long>(ot * d.st + a) - static_cast<long>(d.pt);
            if (it < 0 || it >= static_cast<long>(d.t)) continue;
            for (std::size_t oh = 0; oh < d.oh; ++oh) {
              const long ih = static_cast<long>(oh * d.sh + b) - static_cast<long>(d.ph);
              if (ih < 0 || ih >= static_cast<long>(d.h)) continue;
              const T* src = in + (ot * d.oh + oh) * d.ow;
              T* dst = x + ((c * d.t + static_cast<std::size_t>(it)) * d.h +
                            static_cast<std::size_t>(ih)) * d.w;
              for (std::size_t ow = 0; ow < d.ow; ++ow) {
                const long iw = static_cast<long>(ow * d.sw + e) - static_cast<long>(d.pw);
                if (iw >= 0 && iw < static_cast<long>(d.w)) dst[iw] += src[ow];
              }
            }
          }
        }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  Tensor<T> c({a.dim(0), b.dim(1)});
  detail::gemm_acc(a.ptr(), b.ptr(), c.ptr(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + to_string(a.shape()));
  Tensor<T> out({a.dim(1), a.dim(0)});
  detail::transpose_into(a.ptr(), out.ptr(), a.dim(0), a.dim(1));
  return out;
}

/// Gradients of matmul(a, b) given the upstream gradient gy.
template <class T>
std::pair<Tensor<T>, Tensor<T>> matmul_backward(const Tensor<T>& a, const Tensor<T>& b,
                                                const Tensor<T>& gy) {
  return {matmul(gy, transpose(b)), matmul(transpose(a), gy)};
}

/// Row-wise softmax with max subtraction.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("softmax_rows: expected a matrix, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* in = x.ptr() + i * cols;
    T* out = y.ptr() + i * cols;
    const T m = *std::max_element(in, in + cols);
    T sum{0};
    for (std::size_t j = 0; j < cols; ++j) sum += (out[j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < cols; ++j) out[j] /= sum;
  }
  return y;
}

template <class T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& gy) {
  require_same_shape(y, gy, "softmax_rows_backward");
  const std::size_t rows = y.dim(0), cols = y.dim(1);
  Tensor<T> gx(y.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* yr = y.ptr() + i * cols;
    const T* gr = gy.ptr() + i * cols;
    T s{0};
    for (std::size_t j = 0; j < cols; ++j) s += yr[j] * gr[j];
    for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] = yr[j] * (gr[j] - s);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation convention, zero padding)

struct Conv2dGeom {
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
};

struct Conv3dGeom {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{0, 0, 0};
};

inline Conv3dGeom lift(const Conv2dGeom& g) {
  return {{1, g.stride[0], g.stride[1]}, {0, g.padding[0], g.padding[1]}};
}

namespace detail {

inline ConvDims conv_dims(const Shape& x, const Shape& k, const Conv3dGeom& g) {
  if (x.size() != 4 || k.size() != 5)
    throw ShapeError("conv3d: expected input [C,T,H,W] and kernel [Co,Ci,kt,kh,kw], got " +
                     to_string(x) + " and " + to_string(k));
  if (k[1] != x[0])
    throw ShapeError("conv3d: kernel expects " + std::to_string(k[1]) + " input channels, input has " +
                     std::to_string(x[0]));
  ConvDims d;
  d.c_in = x[0], d.t = x[1], d.h = x[2], d.w = x[3];
  d.c_out = k[0], d.kt = k[2], d.kh = k[3], d.kw = k[4];
  d.st = g.stride[0], d.sh = g.stride[1], d.sw = g.stride[2];
  d.pt = g.padding[0], d.ph = g.padding[1], d.pw = g.padding[2];
  d.ot = conv_out_extent(d.t, d.kt, d.st, d.pt, "T");
  d.oh = conv_out_extent(d.h, d.kh, d.sh, d.ph, "H");
  d.ow = conv_out_extent(d.w, d.kw, d.sw, d.pw, "W");
  return d;
}

inline std::size_t transpose_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                        std::size_t pad, const char* axis) {
  if (stride == 0 || kernel == 0)
    throw ShapeError(std::string("conv_transpose: zero stride or kernel on axis ") + axis);
  const std::size_t full = (in - 1) * stride + kernel;
  if (full <= 2 * pad)
    throw ShapeError(std::string("conv_transpose: invalid geometry on axis ") + axis +
                     " (output extent would be non-positive)");
  return full - 2 * pad;
}

// The transposed convolution from x[Ci,T,H,W] with kernel [Ci,Co,...] is the
// adjoint of the convolution whose input is the transposed output volume.
inline ConvDims transpose_dims(const Shape& x, const Shape& k, const Conv3dGeom& g) {
  if (x.size() != 4 || k.size() != 5)
    throw ShapeError("conv_transpose: expected input [C,T,H,W] and kernel [Ci,Co,kt,kh,kw], got " +
                     to_string(x) + " and " + to_string(k));
  if (k[0] != x[0])
    throw ShapeError("conv_transpose: kernel expects " + std::to_string(k[0]) +
                     " input channels, input has " + std::to_string(x[0]));
  ConvDims d;
  d.c_out = k[0];
  d.c_in = k[1];
  d.kt = k[2], d.kh = k[3], d.kw = k[4];
  d.st = g.stride[0], d.sh = g.stride[1], d.sw = g.stride[2];
  d.pt = g.padding[0], d.ph = g.padding[1], d.pw = g.padding[2];
  d.ot = x[1], d.oh = x[2], d.ow = x[3];
  d.t = transpose_out_extent(x[1], d.kt, d.st, d.pt, "T");
  d.h = transpose_out_extent(x[2], d.kh, d.sh, d.ph, "H");
  d.w = transpose_out_extent(x[3], d.kw, d.sw, d.pw, "W");
  return d;
}

}  // namespace detail

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& k, const Conv3dGeom& geom) {
  const auto d = detail::conv_dims(x.shape(), k.shape(), geom);
  std::vector<T> cols(d.patch() * d.positions());
  detail::im2col(x.ptr(), d, cols.data());
  Tensor<T> y({d.c_out, d.ot, d.oh, d.ow});
  detail::gemm_acc(k.ptr(), cols.data(), y.ptr(), d.c_out, d.patch(), d.positions());
  return y;
}

template <class T>
struct ConvGrads {
  Tensor<T> input;   // empty when not requested
  Tensor<T> kernel;
};

template <class T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gy,
                             const Conv3dGeom& geom, bool need_input_grad = true) {
  const auto d = detail::conv_dims(x.shape(), k.shape(), geom);
  if (gy.shape() != Shape{d.c_out, d.ot, d.oh, d.ow})
    throw ShapeError("conv3d_backward: upstream gradient shape " + to_string(gy.shape()));
  const std::size_t patch = d.patch(), positions = d.positions();
  std::vector<T> cols(patch * positions);
  detail::im2col(x.ptr(), d, cols.data());
  ConvGrads<T> g;
  g.kernel = Tensor<T>(k.shape());
  detail::gemm_abt_acc(gy.ptr(), cols.data(), g.kernel.ptr(), d.c_out, positions, patch);
  if (need_input_grad) {
    std::vector<T> k_t(k.size());
    detail::transpose_into(k.ptr(), k_t.data(), d.c_out, patch);
    std::fill(cols.begin(), cols.end(), T{0});
    detail::gemm_acc(k_t.data(), gy.ptr(), cols.data(), patch, d.c_out, positions);
    g.input = Tensor<T>(x.shape());
    detail::col2im(cols.data(), d, g.input.ptr());
  }
  return g;
}

/// Transposed 3D convolution. Kernel layout [Ci, Co, kt, kh, kw]; output
/// extent per axis is (in - 1) * stride - 2 * padding + kernel.
template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& k, const Conv3dGeom& geom) {
  const auto d = detail::transpose_dims(x.shape(), k.shape(), geom);
  const std::size_t patch = d.patch(), positions = d.positions();
  std::vector<T> k_t(k.size());
  detail::transpose_into(k.ptr(), k_t.data(), d.c_out, patch);
  std::vector<T> cols(patch * positions);
  detail::gemm_acc(k_t.data(), x.ptr(), cols.data(), patch, d.c_out, positions);
  Tensor<T> y({d.c_in, d.t, d.h, d.w});
  detail::col2im(cols.data(), d, y.ptr());
  return y;
}

template <class T>
ConvGrads<T> conv_transpose3d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gy,
                                       const Conv3dGeom& geom, bool need_input_grad = true) {
  const auto d = detail::transpose_dims(x.shape(), k.shape(), geom);
  if (gy.shape() != Shape{d.c_in, d.t, d.h, d.w})
    throw ShapeError("conv_transpose3d_backward: upstream gradient shape " + to_string(gy.shape()));
  const std::size_t patch = d.patch(), positions = d.positions();
  std::vector<T> cols(patch * positions);
  detail::im2col(gy.ptr(), d, cols.data());
  ConvGrads<T> g;
  if (need_input_grad) {
    g.input = Tensor<T>(x.shape());
    detail::gemm_acc(k.ptr(), cols.data(), g.input.ptr(), d.c_out, patch, positions);
  }
  g.kernel = Tensor<T>(k.shape());
  detail::gemm_abt_acc(x.ptr(), cols.data(), g.kernel.ptr(), d.c_out, positions, patch);
  return g;
}

namespace detail {

inline Shape lift_input(const Shape& x, const char* op) {
  if (x.size() != 3) throw ShapeError(std::string(op) + ": expected input [C,H,W], got " + to_string(x));
  return {x[0], 1, x[1], x[2]};
}

inline Shape lift_kernel(const Shape& k, const char* op) {
  if (k.size() != 4) throw ShapeError(std::string(op) + ": expected a rank-4 kernel, got " + to_string(k));
  return {k[0], k[1], 1, k[2], k[3]};
}

inline Shape drop_time(const Shape& s) { return {s[0], s[2], s[3]}; }

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Conv2dGeom& geom) {
  auto y = conv3d(x.reshaped(detail::lift_input(x.shape(), "conv2d")),
                  k.reshaped(detail::lift_kernel(k.shape(), "conv2d")), lift(geom));
  return std::move(y).reshaped(detail::drop_time(y.shape()));
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gy,
                             const Conv2dGeom& geom, bool need_input_grad = true) {
  if (gy.rank() != 3) throw ShapeError("conv2d_backward: upstream gradient must be [C,H,W]");
  auto g = conv3d_backward(x.reshaped(detail::lift_input(x.shape(), "conv2d")),
                           k.reshaped(detail::lift_kernel(k.shape(), "conv2d")),
                           gy.reshaped({gy.dim(0), 1, gy.dim(1), gy.dim(2)}), lift(geom),
                           need_input_grad);
  if (need_input_grad) g.input.reshape(x.shape());
  g.kernel.reshape(k.shape());
  return g;
}

/// Transposed 2D convolution, kernel layout [Ci, Co, kh, kw].
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& k, const Conv2dGeom& geom) {
  auto y = conv_transpose3d(x.reshaped(detail::lift_input(x.shape(), "conv_transpose2d")),
                            k.reshaped(detail::lift_kernel(k.shape(), "conv_transpose2d")),
                            lift(geom));
  return std::move(y).reshaped(detail::drop_time(y.shape()));
}

template <class T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gy,
                                       const Conv2dGeom& geom, bool need_input_grad = true) {
  if (gy.rank() != 3) throw ShapeError("conv_transpose2d_backward: upstream gradient must be [C,H,W]");
  auto g = conv_transpose3d_backward(
      x.reshaped(detail::lift_input(x.shape(), "conv_transpose2d")),
      k.reshaped(detail::lift_kernel(k.shape(), "conv_transpose2d")),
      gy.reshaped({gy.dim(0), 1, gy.dim(1), gy.dim(2)}), lift(geom), need_input_grad);
  if (need_input_grad) g.input.reshape(x.shape());
  g.kernel.reshape(k.shape());
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise

enum class Pointwise { sigmoid, leaky_relu, exp, log };

inline constexpr double kLeakySlope = 0.1;
inline constexpr double kLogEpsilon = 1e-10;

inline const char* name(Pointwise f) {
  switch (f) {
    case Pointwise::sigmoid: return "sigmoid";
    case Pointwise::leaky_relu: return "leaky_relu";
    case Pointwise::exp: return "exp";
    case Pointwise::log: return "log";
  }
  return "?";
}

template <class T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
Tensor<T> pointwise(const Tensor<T>& x, Pointwise f) {
  Tensor<T> y(x.shape());
  const T slope = static_cast<T>(kLeakySlope);
  const T eps = static_cast<T>(kLogEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    switch (f) {
      case Pointwise::sigmoid: y[i] = sigmoid(v); break;
      case Pointwise::leaky_relu: y[i] = v > T{0} ? v : slope * v; break;
      case Pointwise::exp: y[i] = std::exp(v); break;
      case Pointwise::log:
        if (!(v >= T{0})) throw DomainError("log: argument must be non-negative");
        y[i] = std::log(v + eps);
        break;
    }
  }
  return y;
}

/// Gradient of pointwise(x, f) given its output y and upstream gradient gy.
template <class T>
Tensor<T> pointwise_backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gy,
                             Pointwise f) {
  require_same_shape(x, gy, "pointwise_backward");
  Tensor<T> gx(x.shape());
  const T slope = static_cast<T>(kLeakySlope);
  const T eps = static_cast<T>(kLogEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) {
    T d{};
    switch (f) {
      case Pointwise::sigmoid: d = y[i] * (T{1} - y[i]); break;
      case Pointwise::leaky_relu: d = x[i] > T{0} ? T{1} : slope; break;
      case Pointwise::exp: d = y[i]; break;
      case Pointwise::log: d = T{1} / (x[i] + eps); break;
    }
    gx[i] = d * gy[i];
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Structural helpers

/// x[C, ...] + b[C] broadcast over the trailing axes.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() < 1 || b.rank() != 1 || b.dim(0) != x.dim(0))
    throw ShapeError("add_channel_bias: bias " + to_string(b.shape()) + " vs input " +
                     to_string(x.shape()));
  Tensor<T> y = x;
  const std::size_t inner = x.size() / x.dim(0);
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < inner; ++i) y[c * inner + i] += b[c];
  return y;
}

template <class T>
Tensor<T> channel_bias_grad(const Tensor<T>& gy) {
  Tensor<T> gb({gy.dim(0)});
  const std::size_t inner = gy.size() / gy.dim(0);
  for (std::size_t c = 0; c < gy.dim(0); ++c) {
    T s{0};
    for (std::size_t i = 0; i < inner; ++i) s += gy[c * inner + i];
    gb[c] = s;
  }
  return gb;
}

/// x[N, C] + b[C] broadcast over rows.
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
    throw ShapeError("add_row_bias: bias " + to_string(b.shape()) + " vs input " +
                     to_string(x.shape()));
  Tensor<T> y = x;
  const std::size_t cols = x.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] += b[j];
  return y;
}

template <class T>
Tensor<T> row_bias_grad(const Tensor<T>& gy) {
  const std::size_t cols = gy.dim(1);
  Tensor<T> gb({cols});
  for (std::size_t i = 0; i < gy.dim(0); ++i)
    for (std::size_t j = 0; j < cols; ++j) gb[j] += gy[i * cols + j];
  return gb;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

/// [N, A] and [N, B] -> [N, A + B].
template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor<T> y({n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.ptr() + i * ca, ca, y.ptr() + i * (ca + cb));
    std::copy_n(b.ptr() + i * cb, cb, y.ptr() + i * (ca + cb) + ca);
  }
  return y;
}

}  // namespace avf::ops
