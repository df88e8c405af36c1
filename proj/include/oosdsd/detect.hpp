#pragma once

#include "oosdsd/tensor.hpp"
#include "oosdsd/types.hpp"

#include <vector>

namespace oosdsd {

/// Anchor points of all detection scales, flattened scale by scale in row-major cell order.
struct AnchorGrid {
  /// Cell centers in grid units of their own scale.
  std::vector<double> gx, gy;
  std::vector<double> stride;
  std::vector<int> scale;
  std::vector<Eigen::Index> cell;  ///< y * w + x within its scale

  Eigen::Index size() const { return static_cast<Eigen::Index>(gx.size()); }
  double px(Eigen::Index a) const { return gx[a] * stride[a]; }
  double py(Eigen::Index a) const { return gy[a] * stride[a]; }
};

/// Anchors for det_raw tensors of the three strides {8,16,32}.
template <typename Scalar>
AnchorGrid make_anchors(const std::vector<Tensor<Scalar>>& det_raw);

/// Per-image view of raw detection outputs in double precision.
struct DecodedImage {
  /// A x 4*reg_max softmax probabilities (side-major: left, top, right, bottom).
  Eigen::MatrixXd dist_prob;
  /// A x 4 expected distances (l, t, r, b) in grid units.
  Eigen::MatrixXd ltrb;
  /// A x num_classes logits.
  Eigen::MatrixXd logits;

  /// Predicted box of anchor a in grid units.
  Box<double> grid_box(const AnchorGrid& g, Eigen::Index a) const {
    return {g.gx[a] - ltrb(a, 0), g.gy[a] - ltrb(a, 1), g.gx[a] + ltrb(a, 2), g.gy[a] + ltrb(a, 3)};
  }
  Box<double> pixel_box(const AnchorGrid& g, Eigen::Index a) const {
    const auto b = grid_box(g, a);
    const double s = g.stride[a];
    return {b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s};
  }
};

template <typename Scalar>
DecodedImage decode_image(const std::vector<Tensor<Scalar>>& det_raw, const AnchorGrid& anchors, Eigen::Index n,
                          int reg_max, int num_classes);

struct DecodeConfig {
  double conf_threshold = 0.25;
  double iou_threshold = 0.7;
  int max_det = 300;
  /// Suppress across classes instead of per class.
  bool agnostic = false;
};

/// Candidate for NMS in pixel coordinates.
struct ScoredBox {
  Box<double> box;
  double score = 0.0;
  int cls = 0;
};

/// Greedy NMS by descending score (stable for ties). Returns kept indices in score order.
std::vector<std::size_t> nms(const std::vector<ScoredBox>& boxes, double iou_threshold, bool agnostic = false);

/// Boxes per image: best class per anchor, confidence filter, NMS, clip to the image, normalize
/// by the input size taken from the stride-8 grid.
template <typename Scalar>
std::vector<std::vector<OOSInstance>> decode_detections(const std::vector<Tensor<Scalar>>& det_raw, int reg_max,
                                                        int num_classes, const DecodeConfig& cfg = {});

} // namespace oosdsd
