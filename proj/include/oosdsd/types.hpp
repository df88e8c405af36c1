#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace oosdsd {

/// Row-major 2-D grid, the in-memory layout of every image-like map.
template <typename Scalar>
using Grid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MaskGrid = Grid<std::uint8_t>;
using DepthGrid = Grid<double>;
using Plane = Grid<float>;

enum class OOSClass : int { normal = 0, front = 1 };
inline constexpr int kNumOOSClasses = 2;

std::string_view to_string(OOSClass cls);
OOSClass oos_class_from_index(int index);

/// Axis-aligned box in corner form.
template <typename Scalar>
struct Box {
  Scalar x1{}, y1{}, x2{}, y2{};

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return width() * height(); }

  template <typename Other>
  Box<Other> cast() const {
    return {Other(x1), Other(y1), Other(x2), Other(y2)};
  }
};

/// One OOS region, center form, coordinates normalized to the image.
struct OOSInstance {
  double x = 0.0;
  double y = 0.0;
  double h = 0.0;
  double w = 0.0;
  OOSClass cls = OOSClass::normal;
  double c = 1.0;

  Box<double> corners() const { return {x - w / 2, y - h / 2, x + w / 2, y + h / 2}; }
  static OOSInstance from_corners(const Box<double>& b, OOSClass cls, double c = 1.0);
};

/// Throws ValidationError when the instance breaks its invariants.
void validate(const OOSInstance& inst, double clip_tol = 1e-6);

struct SegmentationMap {
  MaskGrid pixels;

  Eigen::Index rows() const { return pixels.rows(); }
  Eigen::Index cols() const { return pixels.cols(); }
};

struct DepthMap {
  DepthGrid pixels;
  bool normalized = false;

  Eigen::Index rows() const { return pixels.rows(); }
  Eigen::Index cols() const { return pixels.cols(); }
};

/// RGB image with channel values in [0,1].
struct Image {
  std::array<Plane, 3> channels;

  Image() = default;
  Image(Eigen::Index rows, Eigen::Index cols, float fill = 0.0f);

  Eigen::Index rows() const { return channels[0].rows(); }
  Eigen::Index cols() const { return channels[0].cols(); }
  bool operator==(const Image& o) const;
};

struct DatasetRecord {
  std::string image_id;
  Image image;
  std::vector<OOSInstance> boxes;
  SegmentationMap seg;
  DepthMap depth;
  bool depth_is_pseudo = true;
  /// Pixels that carry real content (0 on letterbox or mosaic padding). Empty means all valid.
  MaskGrid valid;

  Eigen::Index rows() const { return image.rows(); }
  Eigen::Index cols() const { return image.cols(); }
  MaskGrid valid_mask() const;
};

/// Throws on any broken record invariant (box ranges, map dimensions, value domains).
void validate(const DatasetRecord& rec);

} // namespace oosdsd
