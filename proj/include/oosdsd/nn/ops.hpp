#pragma once

#include "oosdsd/tensor.hpp"

#include <vector>

namespace oosdsd::nn {

/// Geometry of a square-kernel 2-D convolution.
struct ConvGeometry {
  Eigen::Index kernel = 1;
  Eigen::Index stride = 1;
  Eigen::Index pad = 0;

  Eigen::Index out_size(Eigen::Index in) const { return (in + 2 * pad - kernel) / stride + 1; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

/// Unfold one sample (C x H x W) into a (C*k*k) x (Ho*Wo) column matrix.
template <typename Scalar>
void im2col(const Scalar* src, Eigen::Index channels, Eigen::Index height, Eigen::Index width,
            const ConvGeometry& g, RowMatrix<Scalar>& cols);

/// Adjoint of im2col: accumulate columns back into a (C x H x W) buffer.
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, Eigen::Index channels, Eigen::Index height,
            Eigen::Index width, const ConvGeometry& g, Scalar* dst);

/// y = W * unfold(x) (+ bias). weight is Cout x (Cin*k*k).
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const RowMatrix<Scalar>& weight,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* bias, const ConvGeometry& g);

/// Accumulates dweight/dbias and returns dx (empty tensor when want_dx is false).
template <typename Scalar>
Tensor<Scalar> conv2d_backward(const Tensor<Scalar>& x, const RowMatrix<Scalar>& weight,
                               const Tensor<Scalar>& dy, const ConvGeometry& g,
                               RowMatrix<Scalar>& dweight,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* dbias, bool want_dx = true);

template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<const Tensor<Scalar>*>& parts);

/// Splits along channels into consecutive chunks of the given sizes.
template <typename Scalar>
std::vector<Tensor<Scalar>> split_channels(const Tensor<Scalar>& x,
                                           const std::vector<Eigen::Index>& sizes);

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x_backward(const Tensor<Scalar>& dy);

/// Stride-1 max pooling with "same" padding; argmax holds flat in-plane source indices.
template <typename Scalar>
Tensor<Scalar> maxpool_same(const Tensor<Scalar>& x, Eigen::Index kernel,
                            std::vector<std::int32_t>& argmax);

template <typename Scalar>
Tensor<Scalar> maxpool_same_backward(const Tensor<Scalar>& dy,
                                     const std::vector<std::int32_t>& argmax);

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Eigen::Index out_h, Eigen::Index out_w);

template <typename Scalar>
Tensor<Scalar> resize_bilinear_backward(const Tensor<Scalar>& dy, Eigen::Index in_h,
                                        Eigen::Index in_w);

/// Source taps for one output coordinate under half-pixel bilinear sampling.
struct LinearTap {
  Eigen::Index i0 = 0;
  Eigen::Index i1 = 0;
  double frac = 0.0;
};
std::vector<LinearTap> bilinear_taps(Eigen::Index in, Eigen::Index out);

template <typename Scalar>
inline Scalar sigmoid(Scalar v) {
  using std::exp;
  return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + exp(-v)) : exp(v) / (Scalar(1) + exp(v));
}

} // namespace oosdsd::nn
