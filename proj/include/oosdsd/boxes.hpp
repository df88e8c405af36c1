#pragma once

#include "oosdsd/types.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <numbers>

namespace oosdsd {

/// Strips derivative information; identity for plain scalars.
template <typename Scalar>
inline auto value_of(const Scalar& v) {
  if constexpr (std::is_arithmetic_v<Scalar>) return v;
  else return value_of(v.value());
}

namespace detail {
template <typename S>
inline S min_of(const S& a, const S& b) { return a < b ? S(a) : S(b); }
template <typename S>
inline S max_of(const S& a, const S& b) { return a < b ? S(b) : S(a); }
} // namespace detail

/// Plain intersection-over-union of two corner boxes (0 when disjoint).
template <typename Scalar>
Scalar box_iou(const Box<Scalar>& a, const Box<Scalar>& b, double eps = 1e-7) {
  using detail::max_of;
  using detail::min_of;
  const Scalar iw = min_of(a.x2, b.x2) - max_of(a.x1, b.x1);
  const Scalar ih = min_of(a.y2, b.y2) - max_of(a.y1, b.y1);
  if (!(iw > Scalar(0)) || !(ih > Scalar(0))) return Scalar(0);
  const Scalar inter = iw * ih;
  return inter / (a.area() + b.area() - inter + Scalar(eps));
}

/// Complete IoU: IoU minus normalized center distance minus aspect-consistency penalty.
template <typename Scalar>
Scalar box_ciou(const Box<Scalar>& pred, const Box<Scalar>& target, double eps = 1e-7) {
  using detail::max_of;
  using detail::min_of;
  using std::atan2;
  const Scalar w1 = pred.x2 - pred.x1, h1 = pred.y2 - pred.y1 + Scalar(eps);
  const Scalar w2 = target.x2 - target.x1, h2 = target.y2 - target.y1 + Scalar(eps);
  Scalar iw = min_of(pred.x2, target.x2) - max_of(pred.x1, target.x1);
  Scalar ih = min_of(pred.y2, target.y2) - max_of(pred.y1, target.y1);
  if (iw < Scalar(0)) iw = Scalar(0);
  if (ih < Scalar(0)) ih = Scalar(0);
  const Scalar inter = iw * ih;
  const Scalar uni = w1 * h1 + w2 * h2 - inter + Scalar(eps);
  const Scalar iou = inter / uni;
  const Scalar cw = max_of(pred.x2, target.x2) - min_of(pred.x1, target.x1);
  const Scalar ch = max_of(pred.y2, target.y2) - min_of(pred.y1, target.y1);
  const Scalar c2 = cw * cw + ch * ch + Scalar(eps);
  const Scalar dx = target.x1 + target.x2 - pred.x1 - pred.x2;
  const Scalar dy = target.y1 + target.y2 - pred.y1 - pred.y2;
  const Scalar rho2 = (dx * dx + dy * dy) / Scalar(4);
  // atan2(w, h) == atan(w / h) for h > 0.
  const Scalar dv = atan2(w2, h2) - atan2(w1, h1);
  const Scalar v = Scalar(4.0 / (std::numbers::pi * std::numbers::pi)) * dv * dv;
  const Scalar alpha = v / (v - iou + Scalar(1.0 + eps));
  return iou - (rho2 / c2 + v * alpha);
}

/// CIoU together with its gradient with respect to the predicted corners (x1, y1, x2, y2).
template <typename Scalar>
Scalar box_ciou_with_grad(const Box<Scalar>& pred, const Box<Scalar>& target,
                          Eigen::Matrix<Scalar, 4, 1>& grad) {
  using Ad = Eigen::AutoDiffScalar<Eigen::Matrix<Scalar, 4, 1>>;
  Box<Ad> p{Ad(pred.x1, 4, 0), Ad(pred.y1, 4, 1), Ad(pred.x2, 4, 2), Ad(pred.y2, 4, 3)};
  Box<Ad> t{Ad(target.x1), Ad(target.y1), Ad(target.x2), Ad(target.y2)};
  for (Ad* v : {&t.x1, &t.y1, &t.x2, &t.y2}) v->derivatives() = Eigen::Matrix<Scalar, 4, 1>::Zero();
  const Ad r = box_ciou(p, t);
  grad = r.derivatives();
  return r.value();
}

/// Box of an OOSInstance in pixel units of a W x H image.
inline Box<double> to_pixels(const OOSInstance& inst, double width, double height) {
  const auto c = inst.corners();
  return {c.x1 * width, c.y1 * height, c.x2 * width, c.y2 * height};
}

inline double instance_iou(const OOSInstance& a, const OOSInstance& b) {
  return box_iou(a.corners(), b.corners(), 0.0);
}

} // namespace oosdsd
