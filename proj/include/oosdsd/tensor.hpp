#pragma once

#include "oosdsd/errors.hpp"

#include <Eigen/Dense>

#include <array>
#include <string>

namespace oosdsd {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense NCHW activation tensor.
template <typename Scalar>
class Tensor {
public:
  using Index = Eigen::Index;
  using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using SampleMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstSampleMap = Eigen::Map<const RowMatrix<Scalar>>;
  using PlaneMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstPlaneMap =
      Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;
  Tensor(Index n, Index c, Index h, Index w) : shape_{n, c, h, w}, data_(n * c * h * w) {}

  static Tensor zeros(Index n, Index c, Index h, Index w) {
    Tensor t(n, c, h, w);
    t.data_.setZero();
    return t;
  }
  static Tensor zeros_like(const Tensor& o) { return zeros(o.n(), o.c(), o.h(), o.w()); }

  Index n() const { return shape_[0]; }
  Index c() const { return shape_[1]; }
  Index h() const { return shape_[2]; }
  Index w() const { return shape_[3]; }
  Index size() const { return data_.size(); }
  Index spatial() const { return shape_[2] * shape_[3]; }
  const std::array<Index, 4>& shape() const { return shape_; }
  bool empty() const { return data_.size() == 0; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  /// One sample viewed as a (C x H*W) matrix.
  SampleMap sample(Index n) { return SampleMap(ptr() + n * sample_size(), c(), spatial()); }
  ConstSampleMap sample(Index n) const {
    return ConstSampleMap(ptr() + n * sample_size(), c(), spatial());
  }

  PlaneMap plane(Index n, Index c) { return PlaneMap(ptr() + (n * shape_[1] + c) * spatial(), h(), w()); }
  ConstPlaneMap plane(Index n, Index c) const {
    return ConstPlaneMap(ptr() + (n * shape_[1] + c) * spatial(), h(), w());
  }

  Index sample_size() const { return shape_[1] * shape_[2] * shape_[3]; }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> t(n(), c(), h(), w());
    t.data() = data_.template cast<Other>();
    return t;
  }

  std::string shape_string() const;

private:
  std::array<Index, 4> shape_{0, 0, 0, 0};
  Storage data_;
};

template <typename Scalar>
std::string Tensor<Scalar>::shape_string() const {
  return "[" + std::to_string(shape_[0]) + "," + std::to_string(shape_[1]) + "," +
         std::to_string(shape_[2]) + "," + std::to_string(shape_[3]) + "]";
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape " + a.shape_string() + " vs " + b.shape_string());
}

} // namespace oosdsd
