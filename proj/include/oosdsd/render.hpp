#pragma once

#include "oosdsd/types.hpp"

#include <array>
#include <string>
#include <vector>

namespace oosdsd {

using Color = std::array<float, 3>;

inline constexpr Color kNormalColor{0.95f, 0.20f, 0.15f};
inline constexpr Color kFrontColor{1.00f, 0.75f, 0.05f};
inline constexpr Color kGroundTruthColor{0.15f, 0.85f, 0.25f};

/// Rectangle outline of the given thickness, clipped to the image. Box in pixel corners.
void draw_rect(Image& img, const Box<double>& px, const Color& color, int thickness = 2);

/// Draws normalized boxes; predictions are colored by class, ground truth uses one color.
void draw_boxes(Image& img, const std::vector<OOSInstance>& boxes, bool ground_truth, int thickness = 2);

/// 5x7 bitmap text (digits, letters, a few symbols), magnified by scale. Unknown glyphs are blank.
void draw_text(Image& img, int x, int y, const std::string& text, const Color& color, int scale = 1);
int text_width(const std::string& text, int scale = 1);

/// Linear gray ramp of values in [lo, hi].
Image grayscale(const DepthGrid& values, double lo, double hi);

/// Perceptual color map (viridis) of values in [lo, hi]; pixels with valid == 0 are black.
Image colorize(const DepthGrid& values, double lo, double hi, const MaskGrid* valid = nullptr);

/// Bilinear resize.
Image resize(const Image& img, Eigen::Index rows, Eigen::Index cols);

/// Side-by-side layout with a gap; images are top-aligned on a background of the given gray.
Image hconcat(const std::vector<Image>& images, int gap = 8, float background = 1.0f);
Image vconcat(const std::vector<Image>& images, int gap = 8, float background = 1.0f);

/// Input with predicted (and optionally ground-truth) boxes, segmentation probability and depth,
/// left to right, each panel with a caption. Empty maps are skipped.
Image qualitative_panel(const Image& image, const std::vector<OOSInstance>& predictions,
                        const std::vector<OOSInstance>* ground_truth, const DepthGrid& seg_prob,
                        const DepthGrid& depth, double depth_lo = 0.0, double depth_hi = 1.0);

struct PlotSeries {
  std::string label;
  Color color;
  std::vector<double> x, y;
};

/// Line chart with axes, tick labels, title and legend.
Image plot_lines(const std::vector<PlotSeries>& series, const std::string& title, int width = 640,
                 int height = 400);

} // namespace oosdsd
