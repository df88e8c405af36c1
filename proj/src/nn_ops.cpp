#include "oosdsd/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oosdsd::nn {

using Eigen::Index;

namespace {

// Output columns [lo, hi) whose input column ox*stride - pad + k lands inside [0, in).
inline void valid_range(Index out, Index in, Index stride, Index pad, Index k, Index& lo, Index& hi) {
  // ox*stride >= pad - k  and  ox*stride <= in - 1 + pad - k
  const Index a = pad - k;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const Index b = in - 1 + pad - k;
  hi = b < 0 ? 0 : std::min(out, b / stride + 1);
  if (hi < lo) hi = lo;
}

} // namespace

template <typename Scalar>
void im2col(const Scalar* src, Index channels, Index height, Index width, const ConvGeometry& g,
            RowMatrix<Scalar>& cols) {
  const Index k = g.kernel, s = g.stride, p = g.pad;
  const Index oh = g.out_size(height), ow = g.out_size(width);
  cols.resize(channels * k * k, oh * ow);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = src + c * height * width;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = cols.data() + ((c * k + ky) * k + kx) * oh * ow;
        Index xlo, xhi;
        valid_range(ow, width, s, p, kx, xlo, xhi);
        for (Index oy = 0; oy < oh; ++oy) {
          Scalar* out = row + oy * ow;
          const Index iy = oy * s - p + ky;
          if (iy < 0 || iy >= height) {
            std::fill(out, out + ow, Scalar(0));
            continue;
          }
          const Scalar* in = plane + iy * width;
          std::fill(out, out + xlo, Scalar(0));
          if (s == 1) {
            std::copy(in + xlo - p + kx, in + xhi - p + kx, out + xlo);
          } else {
            for (Index ox = xlo; ox < xhi; ++ox) out[ox] = in[ox * s - p + kx];
          }
          std::fill(out + xhi, out + ow, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, Index channels, Index height, Index width,
            const ConvGeometry& g, Scalar* dst) {
  const Index k = g.kernel, s = g.stride, p = g.pad;
  const Index oh = g.out_size(height), ow = g.out_size(width);
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = dst + c * height * width;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = cols.data() + ((c * k + ky) * k + kx) * oh * ow;
        Index xlo, xhi;
        valid_range(ow, width, s, p, kx, xlo, xhi);
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * s - p + ky;
          if (iy < 0 || iy >= height) continue;
          const Scalar* in = row + oy * ow;
          Scalar* out = plane + iy * width;
          for (Index ox = xlo; ox < xhi; ++ox) out[ox * s - p + kx] += in[ox];
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const RowMatrix<Scalar>& weight,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* bias, const ConvGeometry& g) {
  const Index cin = x.c();
  if (weight.cols() != cin * g.kernel * g.kernel)
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.cols() / (g.kernel * g.kernel)) +
                     " input channels, got " + std::to_string(cin));
  const Index oh = g.out_size(x.h()), ow = g.out_size(x.w());
  Tensor<Scalar> y(x.n(), weight.rows(), oh, ow);
  RowMatrix<Scalar> cols;
  for (Index n = 0; n < x.n(); ++n) {
    auto out = y.sample(n);
    if (g.is_pointwise()) {
      out.noalias() = weight * x.sample(n);
    } else {
      im2col(x.ptr() + n * x.sample_size(), cin, x.h(), x.w(), g, cols);
      out.noalias() = weight * cols;
    }
    if (bias) out.colwise() += *bias;
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> conv2d_backward(const Tensor<Scalar>& x, const RowMatrix<Scalar>& weight,
                               const Tensor<Scalar>& dy, const ConvGeometry& g,
                               RowMatrix<Scalar>& dweight,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* dbias, bool want_dx) {
  Tensor<Scalar> dx;
  if (want_dx) dx = Tensor<Scalar>::zeros_like(x);
  RowMatrix<Scalar> cols, dcols;
  for (Index n = 0; n < x.n(); ++n) {
    const auto g_out = dy.sample(n);
    if (dbias) *dbias += g_out.rowwise().sum();
    if (g.is_pointwise()) {
      dweight.noalias() += g_out * x.sample(n).transpose();
      if (want_dx) dx.sample(n).noalias() = weight.transpose() * g_out;
    } else {
      im2col(x.ptr() + n * x.sample_size(), x.c(), x.h(), x.w(), g, cols);
      dweight.noalias() += g_out * cols.transpose();
      if (want_dx) {
        dcols.noalias() = weight.transpose() * g_out;
        col2im(dcols, x.c(), x.h(), x.w(), g, dx.ptr() + n * x.sample_size());
      }
    }
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<const Tensor<Scalar>*>& parts) {
  Index channels = 0;
  const auto& first = *parts.front();
  for (const auto* p : parts) {
    if (p->n() != first.n() || p->h() != first.h() || p->w() != first.w())
      throw ShapeError("concat: " + p->shape_string() + " vs " + first.shape_string());
    channels += p->c();
  }
  Tensor<Scalar> y(first.n(), channels, first.h(), first.w());
  for (Index n = 0; n < first.n(); ++n) {
    Index offset = 0;
    for (const auto* p : parts) {
      y.sample(n).middleRows(offset, p->c()) = p->sample(n);
      offset += p->c();
    }
  }
  return y;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> split_channels(const Tensor<Scalar>& x, const std::vector<Index>& sizes) {
  std::vector<Tensor<Scalar>> out;
  Index offset = 0;
  for (Index c : sizes) {
    Tensor<Scalar> part(x.n(), c, x.h(), x.w());
    for (Index n = 0; n < x.n(); ++n) part.sample(n) = x.sample(n).middleRows(offset, c);
    offset += c;
    out.push_back(std::move(part));
  }
  if (offset != x.c()) throw ShapeError("split: chunk sizes do not sum to channel count");
  return out;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (Index n = 0; n < x.n(); ++n)
    for (Index c = 0; c < x.c(); ++c) {
      const auto src = x.plane(n, c);
      auto dst = y.plane(n, c);
      for (Index r = 0; r < x.h(); ++r)
        for (Index q = 0; q < x.w(); ++q) {
          const Scalar v = src(r, q);
          dst(2 * r, 2 * q) = v;
          dst(2 * r, 2 * q + 1) = v;
          dst(2 * r + 1, 2 * q) = v;
          dst(2 * r + 1, 2 * q + 1) = v;
        }
    }
  return y;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x_backward(const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
  for (Index n = 0; n < dy.n(); ++n)
    for (Index c = 0; c < dy.c(); ++c) {
      const auto src = dy.plane(n, c);
      auto dst = dx.plane(n, c);
      for (Index r = 0; r < dx.h(); ++r)
        for (Index q = 0; q < dx.w(); ++q)
          dst(r, q) = src(2 * r, 2 * q) + src(2 * r, 2 * q + 1) + src(2 * r + 1, 2 * q) +
                      src(2 * r + 1, 2 * q + 1);
    }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> maxpool_same(const Tensor<Scalar>& x, Index kernel, std::vector<std::int32_t>& argmax) {
  const Index pad = kernel / 2, H = x.h(), W = x.w();
  Tensor<Scalar> y(x.n(), x.c(), H, W);
  argmax.assign(static_cast<std::size_t>(y.size()), 0);
  // Separable: horizontal max then vertical max, tracking the winning source index.
  std::vector<Scalar> rowmax(static_cast<std::size_t>(H * W));
  std::vector<std::int32_t> rowarg(static_cast<std::size_t>(H * W));
  for (Index plane = 0; plane < x.n() * x.c(); ++plane) {
    const Scalar* src = x.ptr() + plane * H * W;
    Scalar* dst = y.ptr() + plane * H * W;
    std::int32_t* arg = argmax.data() + plane * H * W;
    for (Index r = 0; r < H; ++r)
      for (Index q = 0; q < W; ++q) {
        const Index lo = std::max<Index>(0, q - pad), hi = std::min<Index>(W - 1, q + pad);
        Index best = lo;
        for (Index t = lo + 1; t <= hi; ++t)
          if (src[r * W + t] > src[r * W + best]) best = t;
        rowmax[r * W + q] = src[r * W + best];
        rowarg[r * W + q] = static_cast<std::int32_t>(r * W + best);
      }
    for (Index r = 0; r < H; ++r)
      for (Index q = 0; q < W; ++q) {
        const Index lo = std::max<Index>(0, r - pad), hi = std::min<Index>(H - 1, r + pad);
        Index best = lo;
        for (Index t = lo + 1; t <= hi; ++t)
          if (rowmax[t * W + q] > rowmax[best * W + q]) best = t;
        dst[r * W + q] = rowmax[best * W + q];
        arg[r * W + q] = rowarg[best * W + q];
      }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> maxpool_same_backward(const Tensor<Scalar>& dy, const std::vector<std::int32_t>& argmax) {
  Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(dy);
  const Index hw = dy.spatial();
  for (Index plane = 0; plane < dy.n() * dy.c(); ++plane) {
    const Scalar* g = dy.ptr() + plane * hw;
    Scalar* out = dx.ptr() + plane * hw;
    const std::int32_t* arg = argmax.data() + plane * hw;
    for (Index i = 0; i < hw; ++i) out[arg[i]] += g[i];
  }
  return dx;
}

std::vector<LinearTap> bilinear_taps(Index in, Index out) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index i0 = static_cast<Index>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const Index i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  const auto ty = bilinear_taps(x.h(), out_h);
  const auto tx = bilinear_taps(x.w(), out_w);
  Tensor<Scalar> y(x.n(), x.c(), out_h, out_w);
  std::vector<Scalar> tmp(static_cast<std::size_t>(x.h() * out_w));
  for (Index plane = 0; plane < x.n() * x.c(); ++plane) {
    const Scalar* src = x.ptr() + plane * x.spatial();
    Scalar* dst = y.ptr() + plane * out_h * out_w;
    for (Index r = 0; r < x.h(); ++r)
      for (Index q = 0; q < out_w; ++q) {
        const auto& t = tx[q];
        const Scalar f = Scalar(t.frac);
        tmp[r * out_w + q] = src[r * x.w() + t.i0] * (Scalar(1) - f) + src[r * x.w() + t.i1] * f;
      }
    for (Index r = 0; r < out_h; ++r) {
      const auto& t = ty[r];
      const Scalar f = Scalar(t.frac);
      for (Index q = 0; q < out_w; ++q)
        dst[r * out_w + q] = tmp[t.i0 * out_w + q] * (Scalar(1) - f) + tmp[t.i1 * out_w + q] * f;
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear_backward(const Tensor<Scalar>& dy, Index in_h, Index in_w) {
  const Index out_h = dy.h(), out_w = dy.w();
  const auto ty = bilinear_taps(in_h, out_h);
  const auto tx = bilinear_taps(in_w, out_w);
  Tensor<Scalar> dx = Tensor<Scalar>::zeros(dy.n(), dy.c(), in_h, in_w);
  std::vector<Scalar> tmp(static_cast<std::size_t>(in_h * out_w));
  for (Index plane = 0; plane < dy.n() * dy.c(); ++plane) {
    const Scalar* g = dy.ptr() + plane * out_h * out_w;
    Scalar* out = dx.ptr() + plane * in_h * in_w;
    std::fill(tmp.begin(), tmp.end(), Scalar(0));
    for (Index r = 0; r < out_h; ++r) {
      const auto& t = ty[r];
      const Scalar f = Scalar(t.frac);
      for (Index q = 0; q < out_w; ++q) {
        tmp[t.i0 * out_w + q] += g[r * out_w + q] * (Scalar(1) - f);
        tmp[t.i1 * out_w + q] += g[r * out_w + q] * f;
      }
    }
    for (Index r = 0; r < in_h; ++r)
      for (Index q = 0; q < out_w; ++q) {
        const auto& t = tx[q];
        const Scalar f = Scalar(t.frac);
        out[r * in_w + t.i0] += tmp[r * out_w + q] * (Scalar(1) - f);
        out[r * in_w + t.i1] += tmp[r * out_w + q] * f;
      }
  }
  return dx;
}

#define OOSDSD_INSTANTIATE_OPS(S)                                                                   \
  template void im2col<S>(const S*, Index, Index, Index, const ConvGeometry&, RowMatrix<S>&);      \
  template void col2im<S>(const RowMatrix<S>&, Index, Index, Index, const ConvGeometry&, S*);      \
  template Tensor<S> conv2d<S>(const Tensor<S>&, const RowMatrix<S>&,                             \
                               const Eigen::Matrix<S, Eigen::Dynamic, 1>*, const ConvGeometry&);   \
  template Tensor<S> conv2d_backward<S>(const Tensor<S>&, const RowMatrix<S>&, const Tensor<S>&,  \
                                        const ConvGeometry&, RowMatrix<S>&,                        \
                                        Eigen::Matrix<S, Eigen::Dynamic, 1>*, bool);               \
  template Tensor<S> concat_channels<S>(const std::vector<const Tensor<S>*>&);                    \
  template std::vector<Tensor<S>> split_channels<S>(const Tensor<S>&, const std::vector<Index>&); \
  template Tensor<S> upsample_nearest2x<S>(const Tensor<S>&);                                     \
  template Tensor<S> upsample_nearest2x_backward<S>(const Tensor<S>&);                            \
  template Tensor<S> maxpool_same<S>(const Tensor<S>&, Index, std::vector<std::int32_t>&);        \
  template Tensor<S> maxpool_same_backward<S>(const Tensor<S>&, const std::vector<std::int32_t>&);\
  template Tensor<S> resize_bilinear<S>(const Tensor<S>&, Index, Index);                          \
  template Tensor<S> resize_bilinear_backward<S>(const Tensor<S>&, Index, Index);

OOSDSD_INSTANTIATE_OPS(float)
OOSDSD_INSTANTIATE_OPS(double)

} // namespace oosdsd::nn
