#include "oosdsd/types.hpp"

#include "oosdsd/errors.hpp"

#include <cmath>
#include <sstream>

namespace oosdsd {

std::string_view to_string(OOSClass cls) {
  switch (cls) {
  case OOSClass::normal: return "normal";
  case OOSClass::front: return "front";
  }
  return "unknown";
}

OOSClass oos_class_from_index(int index) {
  if (index == 0) return OOSClass::normal;
  if (index == 1) return OOSClass::front;
  throw ValidationError("unknown OOS class index " + std::to_string(index));
}

OOSInstance OOSInstance::from_corners(const Box<double>& b, OOSClass cls, double c) {
  return {(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2, b.y2 - b.y1, b.x2 - b.x1, cls, c};
}

void validate(const OOSInstance& inst, double tol) {
  auto fail = [&](const char* what) {
    std::ostringstream os;
    os << "invalid OOS instance (" << what << "): x=" << inst.x << " y=" << inst.y << " w=" << inst.w
       << " h=" << inst.h << " c=" << inst.c;
    throw ValidationError(os.str());
  };
  if (!std::isfinite(inst.x) || !std::isfinite(inst.y) || !std::isfinite(inst.w) || !std::isfinite(inst.h))
    fail("non-finite");
  if (inst.x < 0 || inst.x > 1 || inst.y < 0 || inst.y > 1) fail("center outside image");
  if (!(inst.w > 0) || inst.w > 1 || !(inst.h > 0) || inst.h > 1) fail("size out of range");
  const auto b = inst.corners();
  if (b.x1 < -tol || b.y1 < -tol || b.x2 > 1 + tol || b.y2 > 1 + tol) fail("box leaves image");
  if (!(inst.c >= 0 && inst.c <= 1)) fail("confidence out of range");
}

Image::Image(Eigen::Index rows, Eigen::Index cols, float fill) {
  for (auto& ch : channels) ch = Plane::Constant(rows, cols, fill);
}

bool Image::operator==(const Image& o) const {
  for (int c = 0; c < 3; ++c) {
    if (channels[c].rows() != o.channels[c].rows() || channels[c].cols() != o.channels[c].cols()) return false;
    if ((channels[c] != o.channels[c]).any()) return false;
  }
  return true;
}

MaskGrid DatasetRecord::valid_mask() const {
  if (valid.size() == 0) return MaskGrid::Ones(rows(), cols());
  return valid;
}

void validate(const DatasetRecord& rec) {
  const auto H = rec.rows(), W = rec.cols();
  auto mismatch = [&](const char* what, Eigen::Index r, Eigen::Index c) {
    throw DimensionMismatchError("record '" + rec.image_id + "': " + what + " is " + std::to_string(c) + "x" +
                                 std::to_string(r) + " but image is " + std::to_string(W) + "x" +
                                 std::to_string(H));
  };
  if (H == 0 || W == 0) throw ValidationError("record '" + rec.image_id + "': empty image");
  for (const auto& ch : rec.image.channels)
    if (ch.rows() != H || ch.cols() != W) mismatch("image channel", ch.rows(), ch.cols());
  if (rec.seg.rows() != H || rec.seg.cols() != W) mismatch("segmentation map", rec.seg.rows(), rec.seg.cols());
  if (rec.depth.rows() != H || rec.depth.cols() != W) mismatch("depth map", rec.depth.rows(), rec.depth.cols());
  if (rec.valid.size() != 0 && (rec.valid.rows() != H || rec.valid.cols() != W))
    mismatch("validity mask", rec.valid.rows(), rec.valid.cols());
  if ((rec.seg.pixels > 1).any())
    throw ValidationError("record '" + rec.image_id + "': segmentation map is not binary");
  if (!rec.depth.pixels.isFinite().all())
    throw ValidationError("record '" + rec.image_id + "': depth map has non-finite values");
  if (rec.depth.normalized) {
    if ((rec.depth.pixels < 0).any())
      throw ValidationError("record '" + rec.image_id + "': normalized depth has negative values");
  } else if ((rec.depth.pixels < 0).any() || (rec.depth.pixels > 1).any()) {
    throw ValidationError("record '" + rec.image_id + "': raw depth outside [0,1]");
  }
  for (const auto& b : rec.boxes) {
    try {
      validate(b);
    } catch (const ValidationError& e) {
      throw ValidationError("record '" + rec.image_id + "': " + e.what());
    }
  }
}

} // namespace oosdsd
