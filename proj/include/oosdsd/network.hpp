#pragma once

#include "oosdsd/nn/layers.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace oosdsd {

/// Architecture hyperparameters and head switches.
struct NetworkConfig {
  bool detect = true;
  bool segment = true;
  bool depth = true;
  /// Small-variant scaling: round(n * depth_multiple) bottlenecks, ceil8(min(c, max_channels) * width_multiple) channels.
  double depth_multiple = 0.33;
  double width_multiple = 0.50;
  int max_channels = 1024;
  int reg_max = 16;
  int num_classes = 2;
  /// Channels of blocks 23-28; 0 picks half of the stride-8 neck width.
  int aux_channels = 0;

  bool any_aux() const { return segment || depth; }
  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

enum class HeadKind { detect, segment, depth };

struct HeadSpec {
  HeadKind kind;
  std::vector<int> strides;
  int num_classes = 0;
  int reg_max = 0;
};

template <typename Scalar>
struct NetworkOutput {
  /// Per stride {8,16,32}: N x (4*reg_max + num_classes) x H/s x W/s. Empty when detection is off.
  std::vector<Tensor<Scalar>> det_raw;
  /// N x 1 x H x W logits at input resolution (empty when segmentation is off).
  Tensor<Scalar> seg_logits;
  /// N x 1 x H x W linear depth at input resolution (empty when depth is off).
  Tensor<Scalar> depth_pred;
};

/// Gradients of the loss with respect to each NetworkOutput field.
template <typename Scalar>
struct NetworkGrads {
  std::vector<Tensor<Scalar>> det_raw;
  Tensor<Scalar> seg_logits;
  Tensor<Scalar> depth_pred;
};

inline constexpr std::array<int, 3> kDetectStrides{8, 16, 32};
inline constexpr int kDenseStride = 4;
inline constexpr int kLastBackboneBlock = 22;

/// Anchor-free decoupled detection head applied at three scales.
template <typename Scalar>
class DetectHead {
public:
  DetectHead(const std::string& prefix, const std::array<Eigen::Index, 3>& channels, int num_classes,
             int reg_max);
  std::vector<Tensor<Scalar>> forward(const std::array<const Tensor<Scalar>*, 3>& feats, bool train);
  std::array<Tensor<Scalar>, 3> backward(const std::vector<Tensor<Scalar>>& grads);
  void collect(nn::ParamRefs<Scalar>& out);
  void init(nn::Rng& rng);

private:
  struct Branch {
    nn::ConvBlock<Scalar> a, b;
    nn::Conv2d<Scalar> out;
  };
  int nc_, reg_max_;
  std::vector<Branch> box_, cls_;
};

/// Detector with optional segmentation and depth heads sharing blocks 23-24.
template <typename Scalar>
class Network {
public:
  Network(const NetworkConfig& cfg, std::uint64_t seed);

  NetworkOutput<Scalar> forward(const Tensor<Scalar>& images, bool train);
  /// Backpropagates; gradients accumulate into parameters until zero_grad().
  void backward(const NetworkGrads<Scalar>& grads);

  const NetworkConfig& config() const { return cfg_; }
  std::vector<HeadSpec> heads() const;
  nn::ParamRefs<Scalar> parameters();
  std::map<std::string, nn::Parameter<Scalar>*> named_parameters();
  void zero_grad();
  /// Trainable scalar count (batch-norm running statistics excluded).
  Eigen::Index parameter_count();
  /// Re-draws parameters of one block index from its seeded stream.
  void init_block(int block, std::uint64_t seed);
  void init_all(std::uint64_t seed);

  /// Channel width of each stride-8/16/32 neck output.
  std::array<Eigen::Index, 3> neck_channels() const { return {c15_, c18_, c21_}; }

private:
  NetworkConfig cfg_;
  Eigen::Index c4_ = 0, c6_ = 0, c9_ = 0, c12_ = 0, c15_ = 0, c18_ = 0, c21_ = 0, caux_ = 0;
  Eigen::Index in_h_ = 0, in_w_ = 0;

  std::map<int, nn::ConvBlock<Scalar>> convs_;  // blocks 0,1,3,5,7,16,19
  std::map<int, nn::C2f<Scalar>> c2fs_;         // blocks 2,4,6,8,12,15,18,21
  std::optional<nn::SPPF<Scalar>> sppf_;      // block 9
  std::optional<DetectHead<Scalar>> detect_; // block 22
  std::optional<nn::ConvBlock<Scalar>> b23_, b25_, b26a_, b27_, b28a_;
  std::optional<nn::Conv2d<Scalar>> b26b_, b28b_;

  nn::ConvBlock<Scalar>& conv(int block) { return convs_.at(block); }
  nn::C2f<Scalar>& c2f(int block) { return c2fs_.at(block); }
  Tensor<Scalar> dense_backward(nn::ConvBlock<Scalar>& a, nn::ConvBlock<Scalar>& b,
                                nn::Conv2d<Scalar>& out, const Tensor<Scalar>& g);
};

/// Channel count after width scaling, rounded up to a multiple of 8.
Eigen::Index scaled_channels(int channels, const NetworkConfig& cfg);
/// Bottleneck repeat count after depth scaling (at least 1).
int scaled_depth(int n, const NetworkConfig& cfg);
/// Block index encoded in a parameter name ("15.m.0.cv1.conv.weight" -> 15).
int block_of(const std::string& param_name);

extern template class DetectHead<float>;
extern template class DetectHead<double>;
extern template class Network<float>;
extern template class Network<double>;

} // namespace oosdsd
