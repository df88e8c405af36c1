#include "oosdsd/metrics.hpp"

#include "oosdsd/boxes.hpp"
#include "oosdsd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oosdsd {

double interpolated_area(const std::vector<double>& recall, const std::vector<double>& precision) {
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double area = 0;
  for (std::size_t i = 1; i < mrec.size(); ++i)
    if (mrec[i] != mrec[i - 1]) area += (mrec[i] - mrec[i - 1]) * mpre[i];
  return area;
}

ClassAP average_precision(const InstancesPerImage& preds, const InstancesPerImage& gts, double iou_thresh) {
  if (preds.size() != gts.size()) throw ShapeError("prediction and ground-truth image counts differ");
  ClassAP r;
  struct Ref {
    std::size_t image, index;
    double conf;
  };
  std::vector<Ref> order;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.num_gt += gts[i].size();
    for (std::size_t k = 0; k < preds[i].size(); ++k) order.push_back({i, k, preds[i][k].c});
  }
  r.num_pred = order.size();
  std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) { return a.conf > b.conf; });

  std::vector<std::vector<char>> used(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), 0);
  double tp = 0, fp = 0;
  for (const auto& ref : order) {
    const auto& p = preds[ref.image][ref.index];
    const auto& g = gts[ref.image];
    double best = -1;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (used[ref.image][k] || g[k].cls != p.cls) continue;
      const double iou = instance_iou(p, g[k]);
      if (iou > best) {
        best = iou;
        best_k = k;
      }
    }
    if (best >= iou_thresh) {
      used[ref.image][best_k] = 1;
      tp += 1;
    } else {
      fp += 1;
    }
    r.precision.push_back(tp / (tp + fp));
    r.recall.push_back(r.num_gt ? tp / double(r.num_gt) : 0.0);
  }
  r.ap = r.num_gt ? interpolated_area(r.recall, r.precision) : 0.0;
  return r;
}

double average_precision(const std::vector<OOSInstance>& preds, const std::vector<OOSInstance>& gts,
                         double iou_thresh) {
  return average_precision(InstancesPerImage{preds}, InstancesPerImage{gts}, iou_thresh).ap;
}

namespace {
InstancesPerImage only_class(const InstancesPerImage& in, OOSClass cls) {
  InstancesPerImage out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i)
    for (const auto& b : in[i])
      if (b.cls == cls) out[i].push_back(b);
  return out;
}
} // namespace

DetectionMatchResult evaluate_detections(const InstancesPerImage& preds, const InstancesPerImage& gts,
                                         double iou_thresh) {
  DetectionMatchResult r;
  double sum = 0;
  int present = 0;
  for (int c = 0; c < kNumOOSClasses; ++c) {
    const auto cls = static_cast<OOSClass>(c);
    r.per_class[c] = average_precision(only_class(preds, cls), only_class(gts, cls), iou_thresh);
    r.present[c] = r.per_class[c].num_gt > 0;
    if (r.present[c]) {
      sum += r.per_class[c].ap;
      ++present;
    }
  }
  r.map = present ? sum / present : 0.0;
  return r;
}

double map_50_95(const InstancesPerImage& preds, const InstancesPerImage& gts) {
  double s = 0;
  for (int i = 0; i < 10; ++i) s += evaluate_detections(preds, gts, 0.5 + 0.05 * i).map;
  return s / 10;
}

double segmentation_iou(const SegmentationMap& pred, const SegmentationMap& gt, const MaskGrid* valid) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw ShapeError("segmentation maps differ in size");
  if (valid && (valid->rows() != gt.rows() || valid->cols() != gt.cols()))
    throw ShapeError("validity mask differs in size");
  std::size_t inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < gt.pixels.size(); ++i) {
    if (valid && !valid->data()[i]) continue;
    const bool p = pred.pixels.data()[i] != 0, g = gt.pixels.data()[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double depth_mae(const DepthGrid& pred, const DepthMap& gt, const MaskGrid& valid) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || valid.rows() != gt.rows() ||
      valid.cols() != gt.cols())
    throw ShapeError("depth maps or validity mask differ in size");
  double sum = 0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    if (!valid.data()[i]) continue;
    sum += std::abs(pred.data()[i] - gt.pixels.data()[i]);
    ++n;
  }
  if (n == 0) throw EmptyMaskError("depth MAE needs at least one valid pixel");
  return sum / double(n);
}

void AspectFilterConfig::validate() const {
  for (const auto& iv : intervals)
    if (iv && !(iv->first > 0 && iv->first <= iv->second))
      throw ConfigError("aspect interval must satisfy 0 < min <= max");
}

std::vector<OOSInstance> aspect_filter(const std::vector<OOSInstance>& preds, const AspectFilterConfig& cfg,
                                       double image_aspect) {
  if (!cfg.enabled) return preds;
  std::vector<OOSInstance> out;
  for (const auto& p : preds) {
    const auto& iv = cfg.intervals[static_cast<int>(p.cls)];
    const double ratio = p.w / p.h * image_aspect;
    if (!iv || (ratio >= iv->first && ratio <= iv->second)) out.push_back(p);
  }
  return out;
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) throw ValidationError("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

AspectFilterConfig calibrate_aspect_filter(const InstancesPerImage& train_gts, double image_aspect, double lo_pct,
                                           double hi_pct) {
  AspectFilterConfig cfg;
  cfg.enabled = true;
  std::array<std::vector<double>, kNumOOSClasses> ratios;
  for (const auto& img : train_gts)
    for (const auto& b : img) ratios[static_cast<int>(b.cls)].push_back(b.w / b.h * image_aspect);
  for (int c = 0; c < kNumOOSClasses; ++c)
    if (!ratios[c].empty()) cfg.intervals[c] = std::make_pair(percentile(ratios[c], lo_pct), percentile(ratios[c], hi_pct));
  return cfg;
}

} // namespace oosdsd
