#include <doctest.h>

#include "oosdsd/boxes.hpp"
#include "oosdsd/errors.hpp"
#include "oosdsd/losses.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

using namespace oosdsd;
using T = Tensor<double>;

namespace {

// Textbook CIoU written independently of the library (plain doubles, atan of ratios).
double ciou_oracle(double px1, double py1, double px2, double py2, double tx1, double ty1, double tx2, double ty2) {
  const double eps = 1e-7;
  const double w1 = px2 - px1, h1 = py2 - py1 + eps, w2 = tx2 - tx1, h2 = ty2 - ty1 + eps;
  const double iw = std::max(0.0, std::min(px2, tx2) - std::max(px1, tx1));
  const double ih = std::max(0.0, std::min(py2, ty2) - std::max(py1, ty1));
  const double inter = iw * ih;
  const double uni = w1 * h1 + w2 * h2 - inter + eps;
  const double iou = inter / uni;
  const double cw = std::max(px2, tx2) - std::min(px1, tx1), ch = std::max(py2, ty2) - std::min(py1, ty1);
  const double c2 = cw * cw + ch * ch + eps;
  const double rho2 = (std::pow(tx1 + tx2 - px1 - px2, 2) + std::pow(ty1 + ty2 - py1 - py2, 2)) / 4;
  const double v = 4 / (std::numbers::pi * std::numbers::pi) * std::pow(std::atan(w2 / h2) - std::atan(w1 / h1), 2);
  const double alpha = v / (v - iou + (1 + eps));
  return iou - (rho2 / c2 + v * alpha);
}

bool close_rel(double a, double f, double rel = 1e-4, double floor = 1e-8) {
  return std::abs(a - f) <= rel * std::max(std::abs(a), std::abs(f)) + floor;
}

std::vector<T> random_det(std::mt19937_64& gen, int n, int size, int reg_max, int nc, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<T> out;
  for (int s : {8, 16, 32}) {
    T t(n, 4 * reg_max + nc, size / s, size / s);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = nd(gen);
    out.push_back(std::move(t));
  }
  return out;
}

// Sets one anchor's box logits so the decoded distances equal ltrb exactly (two-bin split) and
// its class logits to the given values.
void encode_anchor(std::vector<T>& det, int scale, int n, int y, int x, const std::array<double, 4>& ltrb,
                   int reg_max, const std::vector<double>& cls_logits) {
  auto& t = det[scale];
  for (int k = 0; k < 4; ++k) {
    const int lo = static_cast<int>(std::floor(ltrb[k]));
    const double wr = ltrb[k] - lo, wl = 1 - wr;
    for (int b = 0; b < reg_max; ++b) t(n, k * reg_max + b, y, x) = -1e4;
    t(n, k * reg_max + lo, y, x) = std::log(std::max(wl, 1e-300));
    if (lo + 1 < reg_max) t(n, k * reg_max + lo + 1, y, x) = std::log(std::max(wr, 1e-300));
  }
  for (std::size_t c = 0; c < cls_logits.size(); ++c) t(n, 4 * reg_max + int(c), y, x) = cls_logits[c];
}

} // namespace

TEST_CASE("CIoU matches the independent oracle") {
  // Box shifted by half its width.
  const Box<double> t{10, 10, 30, 20}, p{20, 10, 40, 20};
  CHECK(box_ciou(p, t) == doctest::Approx(ciou_oracle(20, 10, 40, 20, 10, 10, 30, 20)).epsilon(1e-12));
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0, 50), s(1, 30);
  for (int i = 0; i < 500; ++i) {
    const double a = u(gen), b = u(gen), c = u(gen), d = u(gen);
    const Box<double> P{a, b, a + s(gen), b + s(gen)}, Q{c, d, c + s(gen), d + s(gen)};
    CHECK(std::abs(box_ciou(P, Q) - ciou_oracle(P.x1, P.y1, P.x2, P.y2, Q.x1, Q.y1, Q.x2, Q.y2)) < 1e-12);
  }
  CHECK(box_ciou(t, t) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("CIoU corner gradient matches finite differences") {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(0, 10), s(2, 8);
  for (int i = 0; i < 200; ++i) {
    Box<double> p{u(gen), u(gen), 0, 0}, t{u(gen), u(gen), 0, 0};
    p.x2 = p.x1 + s(gen);
    p.y2 = p.y1 + s(gen);
    t.x2 = t.x1 + s(gen);
    t.y2 = t.y1 + s(gen);
    Eigen::Vector4d g;
    const double v = box_ciou_with_grad(p, t, g);
    CHECK(v == doctest::Approx(box_ciou(p, t)).epsilon(1e-14));
    double* c[4] = {&p.x1, &p.y1, &p.x2, &p.y2};
    for (int k = 0; k < 4; ++k) {
      const double h = 1e-6, keep = *c[k];
      *c[k] = keep + h;
      const double fp = box_ciou(p, t);
      *c[k] = keep - h;
      const double fm = box_ciou(p, t);
      *c[k] = keep;
      const double fd = (fp - fm) / (2 * h);
      CHECK(close_rel(g[k], fd, 1e-6, 1e-9));
    }
  }
}

TEST_CASE("dice examples") {
  const int n = 8;
  DepthGrid logits(n, n);
  SegmentationMap gt{MaskGrid::Zero(n, n)};
  gt.pixels.topRows(4).setOnes();
  logits = DepthGrid::Constant(n, n, -40.0);
  logits.topRows(4) = 40.0;
  CHECK(seg_loss(logits, gt, SegLossKind::dice) == doctest::Approx(0.0).epsilon(1e-12));

  // Disjoint: 1 - eps / (|P| + |G| + eps).
  DepthGrid disjoint = DepthGrid::Constant(n, n, 40.0);
  disjoint.topRows(4) = -40.0;
  CHECK(seg_loss(disjoint, gt, SegLossKind::dice) == doctest::Approx(1.0 - 1.0 / 65.0).epsilon(1e-12));

  // Half coverage, no false positives: |P| = |G| / 2.
  DepthGrid half = DepthGrid::Constant(n, n, -40.0);
  half.topRows(2) = 40.0;
  const double G = 32, P = 16, oracle = 1 - (2 * P + 1) / (P + G + 1);
  CHECK(seg_loss(half, gt, SegLossKind::dice) == doctest::Approx(oracle).epsilon(1e-12));
  // Large map: the smoothing term vanishes and the value tends to 1/3.
  const int big = 256;
  SegmentationMap gt_big{MaskGrid::Zero(big, big)};
  gt_big.pixels.topRows(128).setOnes();
  DepthGrid half_big = DepthGrid::Constant(big, big, -40.0);
  half_big.topRows(64) = 40.0;
  CHECK(std::abs(seg_loss(half_big, gt_big, SegLossKind::dice) - 1.0 / 3.0) < 1e-4);
}

TEST_CASE("dice is invariant to pixel order") {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  DepthGrid lg(6, 6);
  SegmentationMap gt{MaskGrid(6, 6)};
  for (Eigen::Index i = 0; i < 36; ++i) {
    lg.data()[i] = nd(gen);
    gt.pixels.data()[i] = gen() % 2;
  }
  std::vector<int> perm(36);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  DepthGrid lg2(6, 6);
  SegmentationMap gt2{MaskGrid(6, 6)};
  for (int i = 0; i < 36; ++i) {
    lg2.data()[i] = lg.data()[perm[i]];
    gt2.pixels.data()[i] = gt.pixels.data()[perm[i]];
  }
  CHECK(seg_loss(lg, gt, SegLossKind::dice) == doctest::Approx(seg_loss(lg2, gt2, SegLossKind::dice)).epsilon(1e-13));
}

TEST_CASE("depth loss examples") {
  DepthMap gt{DepthGrid::Constant(4, 4, 0.5), true};
  CHECK(depth_loss(gt.pixels, gt, DepthLossKind::l1) == 0.0);
  CHECK(depth_loss(DepthGrid(gt.pixels + 0.1), gt, DepthLossKind::l1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(depth_loss(DepthGrid(gt.pixels + 0.1), gt, DepthLossKind::mse) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK_THROWS_AS(depth_loss(gt.pixels, DepthMap{gt.pixels, false}, DepthLossKind::l1), NotNormalizedError);
  CHECK_NOTHROW(depth_loss(gt.pixels, DepthMap{gt.pixels, false}, DepthLossKind::l1, false));
  CHECK_THROWS_AS(depth_loss(DepthGrid::Zero(3, 4), gt, DepthLossKind::l1), ShapeError);

  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0, 1);
  DepthGrid a(4, 4), b(4, 4);
  for (Eigen::Index i = 0; i < 16; ++i) {
    a.data()[i] = u(gen);
    b.data()[i] = u(gen);
  }
  double l1 = 0, l2 = 0;
  for (Eigen::Index i = 0; i < 16; ++i) {
    l1 += std::abs(a.data()[i] - b.data()[i]) / 16;
    l2 += std::pow(a.data()[i] - b.data()[i], 2) / 16;
  }
  CHECK(depth_loss(a, {b, true}, DepthLossKind::l1) == doctest::Approx(l1).epsilon(1e-13));
  CHECK(depth_loss(a, {b, true}, DepthLossKind::mse) == doctest::Approx(l2).epsilon(1e-13));
  // Symmetry in (pred, gt).
  CHECK(depth_loss(b, {a, true}, DepthLossKind::l1) == doctest::Approx(l1).epsilon(1e-13));
  CHECK(depth_loss(b, {a, true}, DepthLossKind::mse) == doctest::Approx(l2).epsilon(1e-13));
}

TEST_CASE("dense loss gradients match finite differences on 4x4 inputs") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0, 1);
  T logits(2, 1, 4, 4), seg(2, 1, 4, 4), pred(2, 1, 4, 4), depth(2, 1, 4, 4), valid(2, 1, 4, 4);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    logits.data()[i] = nd(gen);
    seg.data()[i] = gen() % 2;
    pred.data()[i] = u(gen);
    depth.data()[i] = u(gen);
    valid.data()[i] = (i % 7 == 3) ? 0.0 : 1.0;
  }
  for (const T* vm : {static_cast<const T*>(nullptr), static_cast<const T*>(&valid)}) {
    for (auto kind : {SegLossKind::dice, SegLossKind::bce, SegLossKind::mse, SegLossKind::l1}) {
      const auto r = seg_loss(logits, seg, kind, vm, 1.0, true);
      for (Eigen::Index i = 0; i < logits.size(); ++i) {
        T lp = logits, lm = logits;
        const double h = 1e-6;
        lp.data()[i] += h;
        lm.data()[i] -= h;
        const double fd = (seg_loss(lp, seg, kind, vm).value - seg_loss(lm, seg, kind, vm).value) / (2 * h);
        CHECK_MESSAGE(close_rel(r.grad.data()[i], fd), to_string(kind), " i=", i);
      }
    }
    for (auto kind : {DepthLossKind::l1, DepthLossKind::mse}) {
      const auto r = depth_loss(pred, depth, kind, vm, true);
      for (Eigen::Index i = 0; i < pred.size(); ++i) {
        T pp = pred, pm = pred;
        const double h = 1e-6;
        pp.data()[i] += h;
        pm.data()[i] -= h;
        const double fd = (depth_loss(pp, depth, kind, vm).value - depth_loss(pm, depth, kind, vm).value) / (2 * h);
        CHECK_MESSAGE(close_rel(r.grad.data()[i], fd), to_string(kind), " i=", i);
      }
    }
  }
}

TEST_CASE("detection loss gradient matches finite differences for a frozen assignment") {
  std::mt19937_64 gen(11);
  const int R = 8, nc = 2;
  auto det = random_det(gen, 2, 64, R, nc, 0.5);
  std::vector<std::vector<OOSInstance>> gts{
      {{0.4, 0.45, 0.5, 0.4, OOSClass::normal}, {0.75, 0.7, 0.3, 0.35, OOSClass::front}},
      {{0.5, 0.5, 0.6, 0.7, OOSClass::front}}};
  DetectionLossConfig cfg;
  const auto as = assign(det, gts, R, nc, cfg);
  for (const auto& a : as) CHECK(a.foreground() > 0);
  auto f = [&](const std::vector<T>& d) {
    const auto r = detection_loss_with_assignment(d, gts, as, R, nc, cfg, false);
    return r.ciou + r.dfl + r.vfl;
  };
  const auto r = detection_loss_with_assignment(det, gts, as, R, nc, cfg, true);
  int checked = 0;
  for (int s = 0; s < 3; ++s)
    for (Eigen::Index i = 0; i < det[s].size(); ++i) {
      // Every entry of the two coarse scales, every third of the fine one.
      if (s == 0 && i % 3 != 0) continue;
      auto dp = det, dm = det;
      const double h = 1e-5;
      dp[s].data()[i] += h;
      dm[s].data()[i] -= h;
      const double fd = (f(dp) - f(dm)) / (2 * h);
      CHECK_MESSAGE(close_rel(r.grad[s].data()[i], fd, 1e-4, 1e-9), "scale ", s, " index ", i, " analytic ",
                    r.grad[s].data()[i], " fd ", fd);
      ++checked;
    }
  CHECK(checked > 500);
}

TEST_CASE("perfect predictions give zero CIoU and VFL") {
  const int R = 16, nc = 2, S = 64;
  std::vector<T> det;
  for (int s : {8, 16, 32}) {
    T t = T::zeros(1, 4 * R + nc, S / s, S / s);
    for (Eigen::Index c = 4 * R; c < t.c(); ++c) t.plane(0, c).setConstant(-60.0);
    det.push_back(std::move(t));
  }
  // One ground-truth box; every anchor inside it predicts that box exactly.
  const OOSInstance g{0.5, 0.5, 0.5, 0.5, OOSClass::front};
  const auto gp = to_pixels(g, S, S);
  const auto anchors = make_anchors(det);
  for (Eigen::Index a = 0; a < anchors.size(); ++a) {
    const double s = anchors.stride[a];
    const double ax = anchors.gx[a], ay = anchors.gy[a];
    std::array<double, 4> ltrb{ax - gp.x1 / s, ay - gp.y1 / s, gp.x2 / s - ax, gp.y2 / s - ay};
    if (*std::min_element(ltrb.begin(), ltrb.end()) <= 0) continue;
    const auto cell = anchors.cell[a];
    const int w = int(det[anchors.scale[a]].w());
    encode_anchor(det, anchors.scale[a], 0, int(cell / w), int(cell % w), ltrb, R, {-60.0, 0.0});
  }
  DetectionLossConfig cfg;
  std::vector<std::vector<OOSInstance>> gts{{g}};
  auto as = assign(det, gts, R, nc, cfg);
  REQUIRE(as[0].foreground() > 0);
  // Class certainty equal to the quality target for every positive anchor.
  // Background anchors get certainty 0.
  for (Eigen::Index a = 0; a < anchors.size(); ++a) {
    const auto cell = anchors.cell[a];
    const int w = int(det[anchors.scale[a]].w());
    const double q = as[0].target_score[a];
    det[anchors.scale[a]](0, 4 * R + 1, cell / w, cell % w) =
        as[0].target_gt[a] < 0 ? -60.0 : std::log(q) - std::log1p(-q);
  }
  const auto r = detection_loss_with_assignment(det, gts, as, R, nc, cfg, false);
  CHECK(r.ciou < 1e-6);
  CHECK(r.vfl < 1e-12);
}

TEST_CASE("no ground truth and vanishing scores give zero detection loss") {
  std::mt19937_64 gen(4);
  auto det = random_det(gen, 1, 64, 16, 2);
  for (auto& t : det)
    for (Eigen::Index c = 64; c < 66; ++c) t.plane(0, c).setConstant(-40.0);
  const auto r = detection_loss(det, {{}}, 16, 2, {}, false);
  CHECK(r.ciou == 0.0);
  CHECK(r.dfl == 0.0);
  CHECK(r.vfl < 1e-30);
}

TEST_CASE("assigner respects containment, top-k and one box per anchor") {
  std::mt19937_64 gen(8);
  auto det = random_det(gen, 1, 128, 16, 2);
  std::vector<std::vector<OOSInstance>> gts{
      {{0.3, 0.3, 0.4, 0.4, OOSClass::normal}, {0.45, 0.45, 0.4, 0.4, OOSClass::front}}};
  DetectionLossConfig cfg;
  cfg.topk = 5;
  const auto as = assign(det, gts, 16, 2, cfg);
  const auto anchors = make_anchors(det);
  std::vector<int> per_gt(2, 0);
  for (Eigen::Index a = 0; a < anchors.size(); ++a) {
    const int g = as[0].target_gt[a];
    if (g < 0) {
      CHECK(as[0].target_score[a] == 0.0);
      continue;
    }
    ++per_gt[g];
    const auto b = to_pixels(gts[0][g], 128, 128);
    CHECK(anchors.px(a) > b.x1);
    CHECK(anchors.px(a) < b.x2);
    CHECK(anchors.py(a) > b.y1);
    CHECK(anchors.py(a) < b.y2);
    CHECK(as[0].target_score[a] >= 0.0);
    CHECK(as[0].target_score[a] <= 1.0);
  }
  CHECK(per_gt[0] <= 5);
  CHECK(per_gt[1] <= 5);
  CHECK(per_gt[0] + per_gt[1] > 0);
}

TEST_CASE("total_loss examples") {
  LossConfig cfg;
  LossBreakdown p{0.3, 0.2, 0.1, 0.7, 0.4, 0};
  auto d = total_loss(p, cfg, {true, false, false});
  CHECK(d.total == doctest::Approx(0.6));
  CHECK(d.seg == 0.0);
  CHECK(d.depth == 0.0);
  CHECK(total_loss({}, cfg, {}).total == 0.0);
  cfg.task_weights = {1, 2, 3};
  CHECK(total_loss({1, 0, 0, 1, 1, 0}, cfg, {}).total == doctest::Approx(6.0));
  cfg.task_weights = {1, 0, 1};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("loss kind names") {
  for (auto k : {SegLossKind::dice, SegLossKind::bce, SegLossKind::mse, SegLossKind::l1})
    CHECK(seg_loss_kind_from_string(to_string(k)) == k);
  CHECK(depth_loss_kind_from_string("mse") == DepthLossKind::mse);
  CHECK_THROWS_AS(seg_loss_kind_from_string("focal"), ConfigError);
}
