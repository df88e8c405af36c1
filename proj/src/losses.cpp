#include "oosdsd/losses.hpp"

#include "oosdsd/boxes.hpp"
#include "oosdsd/errors.hpp"
#include "oosdsd/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oosdsd {

std::string_view to_string(SegLossKind k) {
  switch (k) {
  case SegLossKind::dice: return "dice";
  case SegLossKind::bce: return "bce";
  case SegLossKind::mse: return "mse";
  case SegLossKind::l1: return "l1";
  }
  return "?";
}

std::string_view to_string(DepthLossKind k) { return k == DepthLossKind::l1 ? "l1" : "mse"; }

SegLossKind seg_loss_kind_from_string(std::string_view s) {
  for (auto k : {SegLossKind::dice, SegLossKind::bce, SegLossKind::mse, SegLossKind::l1})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown segmentation loss '" + std::string(s) + "' (dice, bce, mse, l1)");
}

DepthLossKind depth_loss_kind_from_string(std::string_view s) {
  if (s == "l1") return DepthLossKind::l1;
  if (s == "mse") return DepthLossKind::mse;
  throw ConfigError("unknown depth loss '" + std::string(s) + "' (l1, mse)");
}

void LossConfig::validate() const {
  for (double w : task_weights)
    if (!(w > 0)) throw ConfigError("task weights must be positive");
  if (!(dice_eps > 0)) throw ConfigError("dice epsilon must be positive");
  if (det.topk < 1) throw ConfigError("assigner topk must be at least 1");
  if (det.box_gain < 0 || det.cls_gain < 0 || det.dfl_gain < 0) throw ConfigError("loss gains must be non-negative");
}

LossBreakdown total_loss(LossBreakdown p, const LossConfig& cfg, EnabledHeads heads) {
  if (!heads.detect) p.det_ciou = p.det_dfl = p.det_vfl = 0.0;
  if (!heads.segment) p.seg = 0.0;
  if (!heads.depth) p.depth = 0.0;
  p.total = cfg.task_weights[0] * p.detection() + cfg.task_weights[1] * p.seg + cfg.task_weights[2] * p.depth;
  return p;
}

Eigen::Index Assignment::foreground() const {
  return std::count_if(target_gt.begin(), target_gt.end(), [](int g) { return g >= 0; });
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Binary entropy with 0 log 0 = 0.
double entropy(double q) {
  double h = 0;
  if (q > 0) h -= q * std::log(q);
  if (q < 1) h -= (1 - q) * std::log1p(-q);
  return h;
}

Box<double> gt_pixels(const OOSInstance& g, double W, double H) { return to_pixels(g, W, H); }

template <typename Scalar>
std::pair<double, double> input_size(const std::vector<Tensor<Scalar>>& det_raw) {
  if (det_raw.size() != 3) throw ShapeError("detection output must have three scales");
  return {double(det_raw[0].w() * kDetectStrides[0]), double(det_raw[0].h() * kDetectStrides[0])};
}

} // namespace

template <typename Scalar>
std::vector<Assignment> assign(const std::vector<Tensor<Scalar>>& det_raw,
                               const std::vector<std::vector<OOSInstance>>& gts, int reg_max, int num_classes,
                               const DetectionLossConfig& cfg) {
  const auto [W, H] = input_size(det_raw);
  const auto anchors = make_anchors(det_raw);
  const Eigen::Index A = anchors.size();
  const Eigen::Index N = det_raw[0].n();
  if (static_cast<Eigen::Index>(gts.size()) != N) throw ShapeError("ground-truth list does not match batch size");
  constexpr double eps = 1e-9;

  std::vector<Assignment> out(static_cast<std::size_t>(N));
  for (Eigen::Index n = 0; n < N; ++n) {
    auto& as = out[n];
    as.target_gt.assign(static_cast<std::size_t>(A), -1);
    as.target_score.assign(static_cast<std::size_t>(A), 0.0);
    const auto& g = gts[n];
    const std::size_t M = g.size();
    if (M == 0) continue;
    const auto dec = decode_image(det_raw, anchors, n, reg_max, num_classes);

    Eigen::MatrixXd overlaps = Eigen::MatrixXd::Zero(M, A), align = Eigen::MatrixXd::Zero(M, A);
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> pos(M, A);
    pos.setConstant(false);
    std::vector<Box<double>> gb(M);
    for (std::size_t m = 0; m < M; ++m) {
      gb[m] = gt_pixels(g[m], W, H);
      const int cls = static_cast<int>(g[m].cls);
      if (cls >= num_classes) throw ValidationError("ground-truth class exceeds the head's class count");
      std::vector<Eigen::Index> inside;
      for (Eigen::Index a = 0; a < A; ++a) {
        const double ax = anchors.px(a), ay = anchors.py(a);
        const double dmin = std::min({ax - gb[m].x1, ay - gb[m].y1, gb[m].x2 - ax, gb[m].y2 - ay});
        if (dmin <= eps) continue;
        inside.push_back(a);
        const double ov = std::max(0.0, box_ciou(gb[m], dec.pixel_box(anchors, a)));
        overlaps(m, a) = ov;
        const double score = nn::sigmoid(dec.logits(a, cls));
        align(m, a) = std::pow(score, cfg.tal_alpha) * std::pow(ov, cfg.tal_beta);
      }
      std::stable_sort(inside.begin(), inside.end(),
                       [&](Eigen::Index a, Eigen::Index b) { return align(m, a) > align(m, b); });
      const std::size_t k = std::min<std::size_t>(inside.size(), static_cast<std::size_t>(cfg.topk));
      for (std::size_t i = 0; i < k; ++i) pos(m, inside[i]) = true;
    }
    // An anchor claimed by several boxes goes to the box it overlaps most.
    for (Eigen::Index a = 0; a < A; ++a) {
      int claims = 0;
      for (std::size_t m = 0; m < M; ++m) claims += pos(m, a);
      if (claims == 0) continue;
      Eigen::Index best = 0;
      if (claims > 1) {
        overlaps.col(a).maxCoeff(&best);
        for (std::size_t m = 0; m < M; ++m) pos(m, a) = (static_cast<Eigen::Index>(m) == best);
      } else {
        for (std::size_t m = 0; m < M; ++m)
          if (pos(m, a)) best = static_cast<Eigen::Index>(m);
      }
      as.target_gt[a] = static_cast<int>(best);
    }
    for (std::size_t m = 0; m < M; ++m) {
      double max_align = 0, max_overlap = 0;
      for (Eigen::Index a = 0; a < A; ++a)
        if (pos(m, a)) {
          max_align = std::max(max_align, align(m, a));
          max_overlap = std::max(max_overlap, overlaps(m, a));
        }
      for (Eigen::Index a = 0; a < A; ++a)
        if (pos(m, a)) as.target_score[a] = align(m, a) * max_overlap / (max_align + eps);
    }
  }
  return out;
}

template <typename Scalar>
DetectionLoss<Scalar> detection_loss_with_assignment(const std::vector<Tensor<Scalar>>& det_raw,
                                                     const std::vector<std::vector<OOSInstance>>& gts,
                                                     const std::vector<Assignment>& assignment, int reg_max,
                                                     int num_classes, const DetectionLossConfig& cfg,
                                                     bool want_grad) {
  const auto [W, H] = input_size(det_raw);
  const auto anchors = make_anchors(det_raw);
  const Eigen::Index A = anchors.size(), N = det_raw[0].n();
  if (static_cast<Eigen::Index>(assignment.size()) != N || static_cast<Eigen::Index>(gts.size()) != N)
    throw ShapeError("assignment does not match batch size");

  double score_sum = 0;
  for (const auto& as : assignment) score_sum += std::accumulate(as.target_score.begin(), as.target_score.end(), 0.0);
  const double norm = std::max(score_sum, 1.0);

  DetectionLoss<Scalar> res;
  if (want_grad)
    for (const auto& t : det_raw) res.grad.push_back(Tensor<Scalar>::zeros_like(t));

  const double R = reg_max;
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto& as = assignment[n];
    if (static_cast<Eigen::Index>(as.target_gt.size()) != A) throw ShapeError("assignment anchor count mismatch");
    const auto dec = decode_image(det_raw, anchors, n, reg_max, num_classes);
    auto grad_at = [&](Eigen::Index a, Eigen::Index ch) -> Scalar& {
      return res.grad[anchors.scale[a]].sample(n)(ch, anchors.cell[a]);
    };

    for (Eigen::Index a = 0; a < A; ++a) {
      const int gi = as.target_gt[a];
      const int label = gi >= 0 ? static_cast<int>(gts[n][gi].cls) : -1;

      // Varifocal classification term with the target entropy removed, so it vanishes at p == q.
      for (int c = 0; c < num_classes; ++c) {
        const double x = dec.logits(a, c), p = nn::sigmoid(x);
        double l, g;
        if (c == label) {
          const double q = as.target_score[a];
          l = q * (softplus(x) - q * x - entropy(q));
          g = q * (p - q);
        } else {
          const double pg = std::pow(p, cfg.vfl_gamma);
          const double sp = softplus(x);
          l = cfg.vfl_alpha * pg * sp;
          g = cfg.vfl_alpha * (cfg.vfl_gamma * pg * (1 - p) * sp + pg * p);
        }
        res.vfl += l;
        if (want_grad) grad_at(a, 4 * reg_max + c) += Scalar(cfg.cls_gain * g / norm);
      }
      if (gi < 0) continue;

      const double w = as.target_score[a];
      const double s = anchors.stride[a];
      const auto tp = to_pixels(gts[n][gi], W, H);
      const Box<double> tb{tp.x1 / s, tp.y1 / s, tp.x2 / s, tp.y2 / s};
      const auto pb = dec.grid_box(anchors, a);

      Eigen::Vector4d gc;
      const double ciou = box_ciou_with_grad(pb, tb, gc);
      res.ciou += (1 - ciou) * w;

      const double tgt[4] = {anchors.gx[a] - tb.x1, anchors.gy[a] - tb.y1, tb.x2 - anchors.gx[a],
                             tb.y2 - anchors.gy[a]};
      // d(loss)/d(distance) for l, t, r, b from the corner gradient of (1 - ciou).
      const double dd[4] = {gc[0], gc[1], -gc[2], -gc[3]};
      for (int k = 0; k < 4; ++k) {
        const double t = std::clamp(tgt[k], 0.0, R - 1 - 0.01);
        const int tl = static_cast<int>(std::floor(t));
        const double wl = tl + 1 - t, wr = 1 - wl;
        const double pl = dec.dist_prob(a, k * reg_max + tl), pr = dec.dist_prob(a, k * reg_max + tl + 1);
        res.dfl += w * (-wl * std::log(std::max(pl, 1e-300)) - wr * std::log(std::max(pr, 1e-300))) / 4;
        if (!want_grad) continue;
        const double mean = dec.ltrb(a, k);
        for (int b = 0; b < reg_max; ++b) {
          const double p = dec.dist_prob(a, k * reg_max + b);
          const double target_b = b == tl ? wl : (b == tl + 1 ? wr : 0.0);
          const double g_dfl = cfg.dfl_gain * w * (p - target_b) / 4;
          const double g_box = cfg.box_gain * w * dd[k] * p * (b - mean);
          grad_at(a, k * reg_max + b) += Scalar((g_dfl + g_box) / norm);
        }
      }
    }
  }
  res.ciou *= cfg.box_gain / norm;
  res.dfl *= cfg.dfl_gain / norm;
  res.vfl *= cfg.cls_gain / norm;
  return res;
}

template <typename Scalar>
DetectionLoss<Scalar> detection_loss(const std::vector<Tensor<Scalar>>& det_raw,
                                     const std::vector<std::vector<OOSInstance>>& gts, int reg_max, int num_classes,
                                     const DetectionLossConfig& cfg, bool want_grad) {
  const auto as = assign(det_raw, gts, reg_max, num_classes, cfg);
  return detection_loss_with_assignment(det_raw, gts, as, reg_max, num_classes, cfg, want_grad);
}

namespace {

template <typename Scalar>
void check_dense(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const Tensor<Scalar>* valid, const char* what) {
  require_same_shape(a, b, what);
  if (a.c() != 1) throw ShapeError(std::string(what) + ": expected one channel");
  if (valid && !valid->empty()) require_same_shape(a, *valid, what);
}

template <typename Scalar>
double valid_at(const Tensor<Scalar>* valid, Eigen::Index i) {
  return (valid && !valid->empty()) ? double(valid->data()[i]) : 1.0;
}

} // namespace

template <typename Scalar>
DenseLoss<Scalar> seg_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target, SegLossKind kind,
                           const Tensor<Scalar>* valid, double dice_eps, bool want_grad) {
  check_dense(logits, target, valid, "segmentation loss");
  DenseLoss<Scalar> res;
  if (want_grad) res.grad = Tensor<Scalar>::zeros_like(logits);
  const Eigen::Index N = logits.n(), P = logits.sample_size();

  if (kind == SegLossKind::dice) {
    for (Eigen::Index n = 0; n < N; ++n) {
      double inter = 0, psum = 0, gsum = 0;
      for (Eigen::Index i = n * P; i < (n + 1) * P; ++i) {
        const double v = valid_at(valid, i), p = nn::sigmoid(double(logits.data()[i])) * v;
        const double g = double(target.data()[i]) * v;
        inter += p * g;
        psum += p;
        gsum += g;
      }
      const double num = 2 * inter + dice_eps, den = psum + gsum + dice_eps;
      res.value += (1 - num / den) / double(N);
      if (!want_grad) continue;
      for (Eigen::Index i = n * P; i < (n + 1) * P; ++i) {
        const double v = valid_at(valid, i);
        if (v == 0) continue;
        const double p = nn::sigmoid(double(logits.data()[i]));
        const double g = double(target.data()[i]) * v;
        // d/dp of -(num/den), then through the logistic.
        const double dldp = -(2 * g * den - num) / (den * den) * v;
        res.grad.data()[i] = Scalar(dldp * p * (1 - p) / double(N));
      }
    }
    return res;
  }

  double count = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) count += valid_at(valid, i);
  if (count == 0) return res;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double v = valid_at(valid, i);
    if (v == 0) continue;
    const double x = double(logits.data()[i]), g = double(target.data()[i]), p = nn::sigmoid(x);
    double l = 0, d = 0;
    switch (kind) {
    case SegLossKind::bce:
      l = softplus(x) - g * x;
      d = p - g;
      break;
    case SegLossKind::mse:
      l = (p - g) * (p - g);
      d = 2 * (p - g) * p * (1 - p);
      break;
    case SegLossKind::l1:
      l = std::abs(p - g);
      d = (p > g ? 1.0 : (p < g ? -1.0 : 0.0)) * p * (1 - p);
      break;
    case SegLossKind::dice: break;
    }
    res.value += v * l / count;
    if (want_grad) res.grad.data()[i] = Scalar(v * d / count);
  }
  return res;
}

template <typename Scalar>
DenseLoss<Scalar> depth_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, DepthLossKind kind,
                             const Tensor<Scalar>* valid, bool want_grad) {
  check_dense(pred, target, valid, "depth loss");
  DenseLoss<Scalar> res;
  if (want_grad) res.grad = Tensor<Scalar>::zeros_like(pred);
  double count = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) count += valid_at(valid, i);
  if (count == 0) return res;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double v = valid_at(valid, i);
    if (v == 0) continue;
    const double e = double(pred.data()[i]) - double(target.data()[i]);
    const double l = kind == DepthLossKind::l1 ? std::abs(e) : e * e;
    const double d = kind == DepthLossKind::l1 ? (e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0)) : 2 * e;
    res.value += v * l / count;
    if (want_grad) res.grad.data()[i] = Scalar(v * d / count);
  }
  return res;
}

template <typename Scalar>
CompositeLoss<Scalar> compute_loss(const NetworkOutput<Scalar>& out, const Targets<Scalar>& t,
                                   const NetworkConfig& net, const LossConfig& cfg, bool want_grad,
                                   const std::vector<Assignment>* assignment) {
  CompositeLoss<Scalar> res;
  LossBreakdown parts;
  const Tensor<Scalar>* valid = t.valid.empty() ? nullptr : &t.valid;
  auto scale = [](Tensor<Scalar>& g, double w) {
    if (w != 1.0) g.data() *= Scalar(w);
  };
  if (net.detect) {
    res.assignment = assignment ? *assignment : assign(out.det_raw, t.boxes, net.reg_max, net.num_classes, cfg.det);
    auto d = detection_loss_with_assignment(out.det_raw, t.boxes, res.assignment, net.reg_max, net.num_classes,
                                            cfg.det, want_grad);
    parts.det_ciou = d.ciou;
    parts.det_dfl = d.dfl;
    parts.det_vfl = d.vfl;
    if (want_grad) {
      for (auto& g : d.grad) scale(g, cfg.task_weights[0]);
      res.grads.det_raw = std::move(d.grad);
    }
  }
  if (net.segment) {
    auto s = seg_loss(out.seg_logits, t.seg, cfg.seg, valid, cfg.dice_eps, want_grad);
    parts.seg = s.value;
    if (want_grad) {
      scale(s.grad, cfg.task_weights[1]);
      res.grads.seg_logits = std::move(s.grad);
    }
  }
  if (net.depth) {
    if (cfg.require_normalized_depth && !t.depth_normalized)
      throw NotNormalizedError("depth targets are not normalized");
    auto d = depth_loss(out.depth_pred, t.depth, cfg.depth, valid, want_grad);
    parts.depth = d.value;
    if (want_grad) {
      scale(d.grad, cfg.task_weights[2]);
      res.grads.depth_pred = std::move(d.grad);
    }
  }
  res.breakdown = total_loss(parts, cfg, EnabledHeads::from(net));
  return res;
}

namespace {
Tensor<double> as_tensor(const DepthGrid& g) {
  Tensor<double> t(1, 1, g.rows(), g.cols());
  t.plane(0, 0) = g;
  return t;
}
} // namespace

double seg_loss(const DepthGrid& logits, const SegmentationMap& gt, SegLossKind kind, double dice_eps) {
  return seg_loss<double>(as_tensor(logits), as_tensor(gt.pixels.cast<double>()), kind, nullptr, dice_eps, false).value;
}

double depth_loss(const DepthGrid& pred, const DepthMap& gt, DepthLossKind kind, bool require_normalized) {
  if (require_normalized && !gt.normalized) throw NotNormalizedError("depth target is not normalized");
  return depth_loss<double>(as_tensor(pred), as_tensor(gt.pixels), kind, nullptr, false).value;
}

#define OOSDSD_INSTANTIATE(S)                                                                                    \
  template std::vector<Assignment> assign<S>(const std::vector<Tensor<S>>&,                                    \
                                             const std::vector<std::vector<OOSInstance>>&, int, int,           \
                                             const DetectionLossConfig&);                                       \
  template DetectionLoss<S> detection_loss_with_assignment<S>(                                                  \
      const std::vector<Tensor<S>>&, const std::vector<std::vector<OOSInstance>>&,                              \
      const std::vector<Assignment>&, int, int, const DetectionLossConfig&, bool);                              \
  template DetectionLoss<S> detection_loss<S>(const std::vector<Tensor<S>>&,                                    \
                                              const std::vector<std::vector<OOSInstance>>&, int, int,          \
                                              const DetectionLossConfig&, bool);                               \
  template DenseLoss<S> seg_loss<S>(const Tensor<S>&, const Tensor<S>&, SegLossKind, const Tensor<S>*, double, \
                                    bool);                                                                       \
  template DenseLoss<S> depth_loss<S>(const Tensor<S>&, const Tensor<S>&, DepthLossKind, const Tensor<S>*,     \
                                      bool);                                                                     \
  template CompositeLoss<S> compute_loss<S>(const NetworkOutput<S>&, const Targets<S>&, const NetworkConfig&,  \
                                            const LossConfig&, bool, const std::vector<Assignment>*);
OOSDSD_INSTANTIATE(float)
OOSDSD_INSTANTIATE(double)
#undef OOSDSD_INSTANTIATE

} // namespace oosdsd
