#include "oosdsd/detect.hpp"

#include "oosdsd/boxes.hpp"
#include "oosdsd/errors.hpp"
#include "oosdsd/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oosdsd {

namespace {
constexpr int kStrides[3] = {8, 16, 32};
}

template <typename Scalar>
AnchorGrid make_anchors(const std::vector<Tensor<Scalar>>& det_raw) {
  if (det_raw.size() != 3) throw ShapeError("detection output must have three scales");
  AnchorGrid g;
  for (int s = 0; s < 3; ++s) {
    const auto& t = det_raw[s];
    for (Eigen::Index y = 0; y < t.h(); ++y)
      for (Eigen::Index x = 0; x < t.w(); ++x) {
        g.gx.push_back(x + 0.5);
        g.gy.push_back(y + 0.5);
        g.stride.push_back(kStrides[s]);
        g.scale.push_back(s);
        g.cell.push_back(y * t.w() + x);
      }
  }
  return g;
}

template <typename Scalar>
DecodedImage decode_image(const std::vector<Tensor<Scalar>>& det_raw, const AnchorGrid& anchors, Eigen::Index n,
                          int reg_max, int num_classes) {
  const Eigen::Index A = anchors.size();
  DecodedImage d;
  d.dist_prob.resize(A, 4 * reg_max);
  d.ltrb.resize(A, 4);
  d.logits.resize(A, num_classes);
  for (const auto& t : det_raw)
    if (t.c() != 4 * reg_max + num_classes)
      throw ShapeError("detection output has " + std::to_string(t.c()) + " channels, expected " +
                       std::to_string(4 * reg_max + num_classes));
  for (Eigen::Index a = 0; a < A; ++a) {
    const auto& t = det_raw[anchors.scale[a]];
    const auto sample = t.sample(n);
    const Eigen::Index cell = anchors.cell[a];
    for (int k = 0; k < 4; ++k) {
      double mx = -INFINITY;
      for (int b = 0; b < reg_max; ++b) mx = std::max(mx, double(sample(k * reg_max + b, cell)));
      double z = 0;
      for (int b = 0; b < reg_max; ++b) {
        const double e = std::exp(double(sample(k * reg_max + b, cell)) - mx);
        d.dist_prob(a, k * reg_max + b) = e;
        z += e;
      }
      double mean = 0;
      for (int b = 0; b < reg_max; ++b) {
        d.dist_prob(a, k * reg_max + b) /= z;
        mean += b * d.dist_prob(a, k * reg_max + b);
      }
      d.ltrb(a, k) = mean;
    }
    for (int c = 0; c < num_classes; ++c) d.logits(a, c) = double(sample(4 * reg_max + c, cell));
  }
  return d;
}

std::vector<std::size_t> nms(const std::vector<ScoredBox>& boxes, double iou_threshold, bool agnostic) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  std::vector<std::size_t> keep;
  std::vector<char> removed(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto ai = order[i];
    if (removed[ai]) continue;
    keep.push_back(ai);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const auto bj = order[j];
      if (removed[bj] || (!agnostic && boxes[bj].cls != boxes[ai].cls)) continue;
      if (box_iou(boxes[ai].box, boxes[bj].box) > iou_threshold) removed[bj] = 1;
    }
  }
  return keep;
}

template <typename Scalar>
std::vector<std::vector<OOSInstance>> decode_detections(const std::vector<Tensor<Scalar>>& det_raw, int reg_max,
                                                        int num_classes, const DecodeConfig& cfg) {
  const auto anchors = make_anchors(det_raw);
  const double W = double(det_raw[0].w() * kStrides[0]), H = double(det_raw[0].h() * kStrides[0]);
  std::vector<std::vector<OOSInstance>> out(static_cast<std::size_t>(det_raw[0].n()));
  for (Eigen::Index n = 0; n < det_raw[0].n(); ++n) {
    const auto d = decode_image(det_raw, anchors, n, reg_max, num_classes);
    std::vector<ScoredBox> cand;
    for (Eigen::Index a = 0; a < anchors.size(); ++a) {
      Eigen::Index best = 0;
      const double logit = d.logits.row(a).maxCoeff(&best);
      const double score = nn::sigmoid(logit);
      if (score < cfg.conf_threshold) continue;
      auto b = d.pixel_box(anchors, a);
      b.x1 = std::clamp(b.x1, 0.0, W);
      b.x2 = std::clamp(b.x2, 0.0, W);
      b.y1 = std::clamp(b.y1, 0.0, H);
      b.y2 = std::clamp(b.y2, 0.0, H);
      if (b.width() <= 0 || b.height() <= 0) continue;
      cand.push_back({b, score, static_cast<int>(best)});
    }
    auto keep = nms(cand, cfg.iou_threshold, cfg.agnostic);
    if (keep.size() > static_cast<std::size_t>(cfg.max_det)) keep.resize(static_cast<std::size_t>(cfg.max_det));
    for (auto i : keep) {
      const auto& c = cand[i];
      const int cls = std::min(c.cls, kNumOOSClasses - 1);
      out[n].push_back(OOSInstance::from_corners({c.box.x1 / W, c.box.y1 / H, c.box.x2 / W, c.box.y2 / H},
                                                 static_cast<OOSClass>(cls), c.score));
    }
  }
  return out;
}

#define OOSDSD_INSTANTIATE(S)                                                                                     \
  template AnchorGrid make_anchors<S>(const std::vector<Tensor<S>>&);                                           \
  template DecodedImage decode_image<S>(const std::vector<Tensor<S>>&, const AnchorGrid&, Eigen::Index, int,    \
                                        int);                                                                    \
  template std::vector<std::vector<OOSInstance>> decode_detections<S>(const std::vector<Tensor<S>>&, int, int,  \
                                                                      const DecodeConfig&);
OOSDSD_INSTANTIATE(float)
OOSDSD_INSTANTIATE(double)
#undef OOSDSD_INSTANTIATE

} // namespace oosdsd
