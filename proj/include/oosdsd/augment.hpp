#pragma once

#include "oosdsd/types.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace oosdsd {

struct AugmentConfig {
  double flip_prob = 0.5;
  /// Maximum shift as a fraction of the target size, drawn per axis from [-t, t].
  double translate_frac = 0.1;
  double mosaic_prob = 1.0;
  /// Mosaic is switched off for this trailing fraction of the epochs.
  double close_mosaic_frac = 0.1;
  /// Hue, saturation and value gains.
  std::array<double, 3> hsv_gains{0.015, 0.7, 0.4};
  int target_size = 1280;

  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

inline constexpr float kImagePad = 114.0f / 255.0f;
inline constexpr double kDepthPad = 0.5;

/// Axis-aligned placement of a source frame onto a canvas: dest = src * scale + offset, in
/// continuous pixel coordinates where pixel i spans [i, i+1).
struct Placement {
  double sx = 1.0, sy = 1.0;
  double ox = 0.0, oy = 0.0;
};

/// Pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  Eigen::Index x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct LetterboxTransform {
  double scale = 1.0;
  Eigen::Index pad_left = 0, pad_top = 0;
  Eigen::Index new_cols = 0, new_rows = 0;
  Eigen::Index target = 0;
  Eigen::Index src_rows = 0, src_cols = 0;

  Placement placement() const;
  /// Maps a box normalized to the letterboxed frame back to the source frame.
  OOSInstance to_source(const OOSInstance& b) const;
};

struct LetterboxResult {
  DatasetRecord record;
  LetterboxTransform transform;
};

/// Canvas filled with the padding values (image 114/255, seg 0, depth 0.5, valid 0).
DatasetRecord blank_canvas(Eigen::Index rows, Eigen::Index cols, const DatasetRecord& like);

/// Resamples src into the clip rectangle of dst: bilinear for image and depth, nearest for seg
/// and validity. Boxes are mapped, clipped to the rectangle, and dropped when the clipped area is
/// below min_area_frac of the mapped area. Surviving boxes are appended to dst.boxes.
void paste(const DatasetRecord& src, const Placement& pl, const PixelRect& clip, DatasetRecord& dst,
           double min_area_frac = 0.01);

/// Scales by min(T/h, T/w) and pads symmetrically to a T x T square.
LetterboxResult letterbox(const DatasetRecord& rec, int target);

/// Mirrors the record left to right.
DatasetRecord hflip(const DatasetRecord& rec);

/// Integer pixel shift; uncovered pixels become padding.
DatasetRecord translate(const DatasetRecord& rec, Eigen::Index dx, Eigen::Index dy);

/// Four records of equal size composited around a split point drawn from [0.25, 0.75] of each
/// axis. Each record is scaled to cover its quadrant, anchored at the split point, and cropped.
DatasetRecord mosaic(const std::array<const DatasetRecord*, 4>& recs, std::uint64_t seed);

/// Mosaic with an explicit split point (pixels).
DatasetRecord mosaic_at(const std::array<const DatasetRecord*, 4>& recs, Eigen::Index cx, Eigen::Index cy);

/// Random HSV gain: hue rotated by a factor, saturation and value scaled, each by
/// 1 + U(-g, g). Only the image changes.
DatasetRecord hsv_jitter(const DatasetRecord& rec, const std::array<double, 3>& gains, std::uint64_t seed);

/// Full training transform of pool[index]. Pool records must already be letterboxed to
/// cfg.target_size. Mosaic partners are drawn from the pool.
DatasetRecord augment_sample(const std::vector<const DatasetRecord*>& pool, std::size_t index,
                             const AugmentConfig& cfg, bool allow_mosaic, std::uint64_t seed);

} // namespace oosdsd
