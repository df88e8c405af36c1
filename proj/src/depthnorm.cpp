#include "oosdsd/depthnorm.hpp"

#include "oosdsd/errors.hpp"

#include <cmath>

namespace oosdsd {

double mean_product_depth(const DepthMap& depth, const SegmentationMap& seg) {
  if (depth.rows() != seg.rows() || depth.cols() != seg.cols())
    throw ShapeError("depth " + std::to_string(depth.cols()) + "x" + std::to_string(depth.rows()) +
                     " does not match mask " + std::to_string(seg.cols()) + "x" + std::to_string(seg.rows()));
  const auto mask = (seg.pixels > 0).cast<double>();
  const double count = mask.sum();
  if (count == 0.0) throw EmptyMaskError("segmentation mask has no product pixels");
  const double mean = (mask * depth.pixels).sum() / count;
  if (!std::isfinite(mean) || mean < kMinProductDepth)
    throw DegenerateDepthError("mean product depth " + std::to_string(mean) + " is below " +
                               std::to_string(kMinProductDepth));
  return mean;
}

NormalizationResult normalize_depth(const DepthMap& depth, const SegmentationMap& seg) {
  NormalizationResult r;
  r.mean_product_depth = mean_product_depth(depth, seg);
  r.scale_factor = kTargetProductDepth / r.mean_product_depth;
  r.normalized.pixels = depth.pixels * r.scale_factor;
  r.normalized.normalized = true;
  return r;
}

std::size_t NormalizationReport::failures() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.ok ? 0 : 1;
  return n;
}

NormalizedDataset normalize_dataset(const std::vector<DatasetRecord>& records) {
  NormalizedDataset out;
  for (const auto& rec : records) {
    NormalizationEntry e;
    e.image_id = rec.image_id;
    try {
      auto res = normalize_depth(rec.depth, rec.seg);
      e.ok = true;
      e.mean_product_depth = res.mean_product_depth;
      e.scale_factor = res.scale_factor;
      DatasetRecord copy = rec;
      copy.depth = std::move(res.normalized);
      out.records.push_back(std::move(copy));
    } catch (const ValidationError& err) {
      e.error = err.what();
    }
    out.report.entries.push_back(std::move(e));
  }
  if (!records.empty() && out.records.empty())
    throw DegenerateDepthError("depth normalization failed for all " + std::to_string(records.size()) +
                               " records; first error: " + out.report.entries.front().error);
  return out;
}

} // namespace oosdsd
