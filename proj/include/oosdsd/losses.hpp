#pragma once

#include "oosdsd/detect.hpp"
#include "oosdsd/network.hpp"

#include <string_view>
#include <vector>

namespace oosdsd {

enum class SegLossKind { dice, bce, mse, l1 };
enum class DepthLossKind { l1, mse };

std::string_view to_string(SegLossKind k);
std::string_view to_string(DepthLossKind k);
SegLossKind seg_loss_kind_from_string(std::string_view s);
DepthLossKind depth_loss_kind_from_string(std::string_view s);

struct DetectionLossConfig {
  double box_gain = 7.5;
  double cls_gain = 0.5;
  double dfl_gain = 1.5;
  double vfl_alpha = 0.75;
  double vfl_gamma = 2.0;
  /// Task-aligned assigner.
  int topk = 10;
  double tal_alpha = 0.5;
  double tal_beta = 6.0;

  bool operator==(const DetectionLossConfig&) const = default;
};

struct LossConfig {
  SegLossKind seg = SegLossKind::dice;
  DepthLossKind depth = DepthLossKind::l1;
  /// Task weights (detection, segmentation, depth).
  std::array<double, 3> task_weights{1.0, 1.0, 1.0};
  double dice_eps = 1.0;
  /// Refuse unnormalized depth targets. Off only to study training on raw depth.
  bool require_normalized_depth = true;
  DetectionLossConfig det;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

/// Detection components already carry their sub-gains; total is the task-weighted sum.
struct LossBreakdown {
  double det_ciou = 0.0;
  double det_dfl = 0.0;
  double det_vfl = 0.0;
  double seg = 0.0;
  double depth = 0.0;
  double total = 0.0;

  double detection() const { return det_ciou + det_dfl + det_vfl; }
};

/// Which heads contribute to the total.
struct EnabledHeads {
  bool detect = true, segment = true, depth = true;
  static EnabledHeads from(const NetworkConfig& c) { return {c.detect, c.segment, c.depth}; }
};

/// Fills total from the components; disabled heads contribute exactly zero and are zeroed.
LossBreakdown total_loss(LossBreakdown parts, const LossConfig& cfg, EnabledHeads heads);

// ---- detection ---------------------------------------------------------------------------------

/// Per-image assignment of anchors to ground-truth boxes.
struct Assignment {
  /// Ground-truth index per anchor, -1 for background.
  std::vector<int> target_gt;
  /// Normalized alignment metric of foreground anchors (the classification target), 0 elsewhere.
  std::vector<double> target_score;

  Eigen::Index foreground() const;
};

/// Task-aligned assignment computed from detached predictions. gts are normalized to the
/// input size implied by the stride-8 grid.
template <typename Scalar>
std::vector<Assignment> assign(const std::vector<Tensor<Scalar>>& det_raw,
                               const std::vector<std::vector<OOSInstance>>& gts, int reg_max, int num_classes,
                               const DetectionLossConfig& cfg);

template <typename Scalar>
struct DetectionLoss {
  double ciou = 0.0, dfl = 0.0, vfl = 0.0;
  /// d(ciou + dfl + vfl) / d det_raw; empty unless requested.
  std::vector<Tensor<Scalar>> grad;
};

/// Detection loss for a fixed assignment (used directly by gradient checks).
template <typename Scalar>
DetectionLoss<Scalar> detection_loss_with_assignment(const std::vector<Tensor<Scalar>>& det_raw,
                                                     const std::vector<std::vector<OOSInstance>>& gts,
                                                     const std::vector<Assignment>& assignment, int reg_max,
                                                     int num_classes, const DetectionLossConfig& cfg,
                                                     bool want_grad);

template <typename Scalar>
DetectionLoss<Scalar> detection_loss(const std::vector<Tensor<Scalar>>& det_raw,
                                     const std::vector<std::vector<OOSInstance>>& gts, int reg_max, int num_classes,
                                     const DetectionLossConfig& cfg, bool want_grad);

// ---- dense maps --------------------------------------------------------------------------------

template <typename Scalar>
struct DenseLoss {
  double value = 0.0;
  Tensor<Scalar> grad;  ///< empty unless requested
};

/// Segmentation loss on logits. valid (optional, same shape) masks out padding.
/// Dice is computed per image and averaged; the others are means over valid pixels.
template <typename Scalar>
DenseLoss<Scalar> seg_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target, SegLossKind kind,
                           const Tensor<Scalar>* valid = nullptr, double dice_eps = 1.0, bool want_grad = false);

/// Depth loss: mean absolute or squared difference over valid pixels.
template <typename Scalar>
DenseLoss<Scalar> depth_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, DepthLossKind kind,
                             const Tensor<Scalar>* valid = nullptr, bool want_grad = false);

/// Single-map forms. depth_loss throws NotNormalizedError for raw targets unless told otherwise.
double seg_loss(const DepthGrid& logits, const SegmentationMap& gt, SegLossKind kind, double dice_eps = 1.0);
double depth_loss(const DepthGrid& pred, const DepthMap& gt, DepthLossKind kind, bool require_normalized = true);

// ---- composite ---------------------------------------------------------------------------------

template <typename Scalar>
struct Targets {
  std::vector<std::vector<OOSInstance>> boxes;
  Tensor<Scalar> seg;    ///< N x 1 x H x W in {0,1}
  Tensor<Scalar> depth;  ///< N x 1 x H x W
  Tensor<Scalar> valid;  ///< N x 1 x H x W in {0,1}; empty means all valid
  bool depth_normalized = true;
};

template <typename Scalar>
struct CompositeLoss {
  LossBreakdown breakdown;
  NetworkGrads<Scalar> grads;
  /// Detection assignment the loss was computed with (targets are treated as constants).
  std::vector<Assignment> assignment;
};

/// All enabled task losses and, on request, gradients scaled by the task weights. The detection
/// assignment is recomputed from the predictions unless one is supplied.
template <typename Scalar>
CompositeLoss<Scalar> compute_loss(const NetworkOutput<Scalar>& out, const Targets<Scalar>& targets,
                                   const NetworkConfig& net, const LossConfig& cfg, bool want_grad,
                                   const std::vector<Assignment>* assignment = nullptr);

} // namespace oosdsd
