#pragma once

#include "oosdsd/types.hpp"

#include <string>
#include <vector>

namespace oosdsd {

/// Target mean depth over product pixels.
inline constexpr double kTargetProductDepth = 0.5;
/// Means below this are refused; the scale factor would explode.
inline constexpr double kMinProductDepth = 1e-4;

struct NormalizationResult {
  DepthMap normalized;
  double mean_product_depth = 0.0;
  double scale_factor = 0.0;
};

/// sum(seg * depth) / sum(seg). Throws EmptyMaskError, ShapeError, DegenerateDepthError.
double mean_product_depth(const DepthMap& depth, const SegmentationMap& seg);

/// Rescales depth so its product mean is 0.5. Values are not clipped. Accepts maps that are
/// already normalized, so the procedure is idempotent.
NormalizationResult normalize_depth(const DepthMap& depth, const SegmentationMap& seg);

struct NormalizationEntry {
  std::string image_id;
  bool ok = false;
  double mean_product_depth = 0.0;
  double scale_factor = 0.0;
  std::string error;
};

struct NormalizationReport {
  std::vector<NormalizationEntry> entries;
  std::size_t failures() const;
};

struct NormalizedDataset {
  /// Successfully normalized records, input order.
  std::vector<DatasetRecord> records;
  NormalizationReport report;
};

/// Normalizes every record. Failing records are reported and left out; throws
/// DegenerateDepthError only when every record fails.
NormalizedDataset normalize_dataset(const std::vector<DatasetRecord>& records);

} // namespace oosdsd
