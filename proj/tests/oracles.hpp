#pragma once

// Brute-force reference implementations used by unit and acceptance tests. They are written
// without the library's helpers so they can catch its mistakes.

#include "oosdsd/types.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using oosdsd::OOSInstance;

inline double box_iou(const OOSInstance& a, const OOSInstance& b) {
  const double ax1 = a.x - a.w / 2, ax2 = a.x + a.w / 2, ay1 = a.y - a.h / 2, ay2 = a.y + a.h / 2;
  const double bx1 = b.x - b.w / 2, bx2 = b.x + b.w / 2, by1 = b.y - b.h / 2, by2 = b.y + b.h / 2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// AP of one class over images: greedy matching by confidence, then
/// sum_k (r_k - r_{k-1}) * max_{j >= k} p_j.
inline double average_precision(const std::vector<std::vector<OOSInstance>>& preds,
                                const std::vector<std::vector<OOSInstance>>& gts, double thr) {
  struct P {
    double c;
    std::size_t img, k;
  };
  std::vector<P> all;
  std::size_t ngt = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ngt += gts[i].size();
    for (std::size_t k = 0; k < preds[i].size(); ++k) all.push_back({preds[i][k].c, i, k});
  }
  if (ngt == 0) return 0.0;
  // Insertion sort keeps equal confidences in input order.
  for (std::size_t i = 1; i < all.size(); ++i)
    for (std::size_t j = i; j > 0 && all[j].c > all[j - 1].c; --j) std::swap(all[j], all[j - 1]);
  std::vector<std::vector<bool>> taken;
  for (const auto& g : gts) taken.emplace_back(g.size(), false);
  std::vector<double> prec, rec;
  int tp = 0, n = 0;
  for (const auto& p : all) {
    ++n;
    const auto& pi = preds[p.img][p.k];
    int best = -1;
    double bi = -1;
    for (std::size_t k = 0; k < gts[p.img].size(); ++k) {
      if (taken[p.img][k] || gts[p.img][k].cls != pi.cls) continue;
      const double v = box_iou(pi, gts[p.img][k]);
      if (v > bi) {
        bi = v;
        best = int(k);
      }
    }
    if (best >= 0 && bi >= thr) {
      taken[p.img][best] = true;
      ++tp;
    }
    prec.push_back(double(tp) / n);
    rec.push_back(double(tp) / double(ngt));
  }
  double ap = 0, prev_r = 0;
  for (std::size_t k = 0; k < prec.size(); ++k) {
    double pmax = 0;
    for (std::size_t j = k; j < prec.size(); ++j) pmax = std::max(pmax, prec[j]);
    ap += (rec[k] - prev_r) * pmax;
    prev_r = rec[k];
  }
  return ap;
}

inline double seg_iou(const oosdsd::MaskGrid& p, const oosdsd::MaskGrid& g) {
  long inter = 0, uni = 0;
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      inter += (p(r, c) && g(r, c));
      uni += (p(r, c) || g(r, c));
    }
  return uni ? double(inter) / double(uni) : 1.0;
}

inline double mae(const oosdsd::DepthGrid& a, const oosdsd::DepthGrid& b, const oosdsd::MaskGrid& v) {
  double s = 0;
  long n = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (v.data()[i]) {
      s += std::abs(a.data()[i] - b.data()[i]);
      ++n;
    }
  return s / double(n);
}

/// Random small detection problem: up to max_boxes ground truths of one class per image and
/// predictions that are jittered copies plus spurious boxes.
inline void random_detection_case(std::mt19937_64& gen, int images, int max_boxes, oosdsd::OOSClass cls,
                                  std::vector<std::vector<OOSInstance>>& preds,
                                  std::vector<std::vector<OOSInstance>>& gts) {
  std::uniform_real_distribution<double> u(0, 1);
  preds.assign(images, {});
  gts.assign(images, {});
  for (int i = 0; i < images; ++i) {
    const int ng = int(gen() % (max_boxes + 1));
    for (int k = 0; k < ng; ++k) {
      const double w = 0.05 + 0.3 * u(gen), h = 0.05 + 0.3 * u(gen);
      OOSInstance g{w / 2 + (1 - w) * u(gen), h / 2 + (1 - h) * u(gen), h, w, cls, 1.0};
      gts[i].push_back(g);
      if (u(gen) < 0.8) {
        OOSInstance p = g;
        p.x += 0.05 * (u(gen) - 0.5);
        p.y += 0.05 * (u(gen) - 0.5);
        p.w *= 0.8 + 0.4 * u(gen);
        p.h *= 0.8 + 0.4 * u(gen);
        // Quantized confidences make ties likely, which exercises the ordering rule.
        p.c = std::round(u(gen) * 20) / 20;
        preds[i].push_back(p);
      }
    }
    const int nf = int(gen() % 3);
    for (int k = 0; k < nf; ++k) {
      const double w = 0.05 + 0.3 * u(gen), h = 0.05 + 0.3 * u(gen);
      preds[i].push_back({w / 2 + (1 - w) * u(gen), h / 2 + (1 - h) * u(gen), h, w, cls, std::round(u(gen) * 20) / 20});
    }
  }
}

} // namespace oracle
