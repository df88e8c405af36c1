#pragma once

#include "oosdsd/nn/ops.hpp"
#include "oosdsd/rng.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace oosdsd::nn {

/// Named parameter or buffer with its gradient accumulator.
template <typename Scalar>
struct Parameter {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::string name;
  std::vector<Eigen::Index> shape;
  Vector value;
  Vector grad;
  bool trainable = true;
  /// Weight decay applies (conv kernels only).
  bool decay = false;

  Parameter() = default;
  Parameter(std::string n, std::vector<Eigen::Index> s, bool train, bool wd);
  Eigen::Index numel() const { return value.size(); }
};

template <typename Scalar>
using ParamRefs = std::vector<Parameter<Scalar>*>;

using oosdsd::Rng;
using oosdsd::derive_seed;

/// Plain convolution with optional bias (the final projection of a head).
template <typename Scalar>
class Conv2d {
public:
  Conv2d(const std::string& prefix, Eigen::Index cin, Eigen::Index cout, Eigen::Index kernel,
         Eigen::Index stride, bool bias);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool train);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy, bool want_dx = true);
  void collect(ParamRefs<Scalar>& out);
  void init(Rng& rng);

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }
  Eigen::Index in_channels() const { return cin_; }
  Eigen::Index out_channels() const { return cout_; }

private:
  Eigen::Map<RowMatrix<Scalar>> weight_matrix();
  Eigen::Index cin_, cout_;
  ConvGeometry geom_;
  bool has_bias_;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  Tensor<Scalar> input_;
};

/// Conv2d (no bias) -> BatchNorm -> SiLU.
template <typename Scalar>
class ConvBlock {
public:
  static constexpr double kEps = 1e-3;
  static constexpr double kMomentum = 0.03;

  ConvBlock(const std::string& prefix, Eigen::Index cin, Eigen::Index cout, Eigen::Index kernel = 1,
            Eigen::Index stride = 1);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool train);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy, bool want_dx = true);
  void collect(ParamRefs<Scalar>& out);
  void init(Rng& rng);
  Eigen::Index out_channels() const { return cout_; }

private:
  Eigen::Map<RowMatrix<Scalar>> weight_matrix();
  Eigen::Index cin_, cout_;
  ConvGeometry geom_;
  Parameter<Scalar> weight_, gamma_, beta_, running_mean_, running_var_;
  Tensor<Scalar> input_;
  Tensor<Scalar> xhat_;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std_;
  bool cached_train_ = false;
};

template <typename Scalar>
class Bottleneck {
public:
  Bottleneck(const std::string& prefix, Eigen::Index cin, Eigen::Index cout, bool shortcut);
  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool train);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);
  void collect(ParamRefs<Scalar>& out);
  void init(Rng& rng);

private:
  ConvBlock<Scalar> cv1_, cv2_;
  bool add_;
};

/// Split-transform-merge block with n bottlenecks.
template <typename Scalar>
class C2f {
public:
  C2f(const std::string& prefix, Eigen::Index cin, Eigen::Index cout, int n, bool shortcut);
  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool train);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);
  void collect(ParamRefs<Scalar>& out);
  void init(Rng& rng);
  Eigen::Index out_channels() const { return cv2_.out_channels(); }

private:
  Eigen::Index hidden_;
  ConvBlock<Scalar> cv1_;
  std::vector<Bottleneck<Scalar>> m_;
  ConvBlock<Scalar> cv2_;
};

/// Conv, three chained 5x5 max pools, concat, conv.
template <typename Scalar>
class SPPF {
public:
  SPPF(const std::string& prefix, Eigen::Index cin, Eigen::Index cout, Eigen::Index kernel = 5);
  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool train);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);
  void collect(ParamRefs<Scalar>& out);
  void init(Rng& rng);
  Eigen::Index out_channels() const { return cv2_.out_channels(); }

private:
  Eigen::Index hidden_, kernel_;
  ConvBlock<Scalar> cv1_, cv2_;
  std::array<std::vector<std::int32_t>, 3> argmax_;
};

/// Kaiming-uniform draw with PyTorch's default negative slope sqrt(5): bound = 1/sqrt(fan_in).
template <typename Scalar>
void kaiming_uniform(Parameter<Scalar>& p, Eigen::Index fan_in, Rng& rng);

} // namespace oosdsd::nn
