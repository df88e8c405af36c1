#pragma once

#include "oosdsd/types.hpp"

#include <array>
#include <optional>
#include <utility>
#include <vector>

namespace oosdsd {

using InstancesPerImage = std::vector<std::vector<OOSInstance>>;

/// Precision-recall curve of one class and its all-points interpolated area.
struct ClassAP {
  std::vector<double> precision, recall;  ///< one point per prediction, descending confidence
  double ap = 0.0;
  std::size_t num_gt = 0, num_pred = 0;
};

/// Area under the monotone precision envelope, summed over recall steps.
double interpolated_area(const std::vector<double>& recall, const std::vector<double>& precision);

/// AP over all given instances (callers filter by class). Predictions are matched greedily in
/// descending confidence (stable), each to the best-IoU unmatched ground truth of the same image
/// with IoU >= iou_thresh.
ClassAP average_precision(const InstancesPerImage& preds, const InstancesPerImage& gts, double iou_thresh);

/// Single-image convenience form.
double average_precision(const std::vector<OOSInstance>& preds, const std::vector<OOSInstance>& gts,
                         double iou_thresh);

struct DetectionMatchResult {
  std::array<ClassAP, kNumOOSClasses> per_class;
  std::array<bool, kNumOOSClasses> present{};  ///< class has ground truth
  /// Mean AP over classes present in ground truth (0 when none is).
  double map = 0.0;
};

DetectionMatchResult evaluate_detections(const InstancesPerImage& preds, const InstancesPerImage& gts,
                                         double iou_thresh);

/// mAP averaged over IoU thresholds 0.50, 0.55, ..., 0.95.
double map_50_95(const InstancesPerImage& preds, const InstancesPerImage& gts);

/// |P ∩ G| / |P ∪ G| over pixels where valid is nonzero; 1 when both are empty.
double segmentation_iou(const SegmentationMap& pred, const SegmentationMap& gt, const MaskGrid* valid = nullptr);

/// Mean |pred - gt| over valid pixels. Throws EmptyMaskError for an empty valid mask.
double depth_mae(const DepthGrid& pred, const DepthMap& gt, const MaskGrid& valid);

struct AspectFilterConfig {
  bool enabled = false;
  /// Closed [min, max] interval of w/h per class; nullopt disables the filter for that class.
  std::array<std::optional<std::pair<double, double>>, kNumOOSClasses> intervals;

  void validate() const;
};

/// Removes instances whose pixel aspect ratio w/h falls outside their class interval.
/// image_aspect is W/H of the frame the normalized boxes refer to. Order is preserved.
std::vector<OOSInstance> aspect_filter(const std::vector<OOSInstance>& preds, const AspectFilterConfig& cfg,
                                       double image_aspect = 1.0);

/// Linear-interpolation percentile (numpy default) of unsorted values; p in [0, 100].
double percentile(std::vector<double> values, double p);

/// Per-class [lo, hi] percentile interval of ground-truth aspect ratios; classes without
/// ground truth are left unfiltered.
AspectFilterConfig calibrate_aspect_filter(const InstancesPerImage& train_gts, double image_aspect = 1.0,
                                           double lo_pct = 1.0, double hi_pct = 99.0);

} // namespace oosdsd
