#include "oosdsd/augment.hpp"

#include "oosdsd/errors.hpp"
#include "oosdsd/rng.hpp"

#include <algorithm>
#include <cmath>

namespace oosdsd {

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment.") + name + " must lie in [0, 1]");
  };
  prob(flip_prob, "flip_prob");
  prob(mosaic_prob, "mosaic_prob");
  prob(close_mosaic_frac, "close_mosaic_frac");
  if (!(translate_frac >= 0.0 && translate_frac <= 0.5)) throw ConfigError("augment.translate_frac must lie in [0, 0.5]");
  for (double g : hsv_gains)
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("augment.hsv gains must lie in [0, 1]");
  if (target_size <= 0 || target_size % 32 != 0) throw ConfigError("augment.target_size must be a positive multiple of 32");
}

Placement LetterboxTransform::placement() const {
  return {double(new_cols) / double(src_cols), double(new_rows) / double(src_rows), double(pad_left),
          double(pad_top)};
}

OOSInstance LetterboxTransform::to_source(const OOSInstance& b) const {
  const auto pl = placement();
  const auto c = b.corners();
  const double T = double(target);
  const Box<double> s{(c.x1 * T - pl.ox) / pl.sx / double(src_cols), (c.y1 * T - pl.oy) / pl.sy / double(src_rows),
                      (c.x2 * T - pl.ox) / pl.sx / double(src_cols), (c.y2 * T - pl.oy) / pl.sy / double(src_rows)};
  return OOSInstance::from_corners({std::clamp(s.x1, 0.0, 1.0), std::clamp(s.y1, 0.0, 1.0), std::clamp(s.x2, 0.0, 1.0),
                                    std::clamp(s.y2, 0.0, 1.0)},
                                   b.cls, b.c);
}

DatasetRecord blank_canvas(Eigen::Index rows, Eigen::Index cols, const DatasetRecord& like) {
  DatasetRecord out;
  out.image_id = like.image_id;
  out.image = Image(rows, cols, kImagePad);
  out.seg.pixels = MaskGrid::Zero(rows, cols);
  out.depth.pixels = DepthGrid::Constant(rows, cols, kDepthPad);
  out.depth.normalized = like.depth.normalized;
  out.depth_is_pseudo = like.depth_is_pseudo;
  out.valid = MaskGrid::Zero(rows, cols);
  return out;
}

namespace {

/// Source sampling for one destination index along an axis.
struct Tap {
  bool inside = false;
  Eigen::Index i0 = 0, i1 = 0, nearest = 0;
  double frac = 0.0;
};

std::vector<Tap> axis_taps(Eigen::Index d0, Eigen::Index d1, double scale, double offset, Eigen::Index src_len) {
  std::vector<Tap> taps(static_cast<std::size_t>(std::max<Eigen::Index>(d1 - d0, 0)));
  for (Eigen::Index u = d0; u < d1; ++u) {
    auto& t = taps[static_cast<std::size_t>(u - d0)];
    const double s = (double(u) + 0.5 - offset) / scale;
    t.inside = s >= 0.0 && s < double(src_len);
    if (!t.inside) continue;
    const double p = std::clamp(s - 0.5, 0.0, double(src_len - 1));
    t.i0 = static_cast<Eigen::Index>(std::floor(p));
    t.i1 = std::min(t.i0 + 1, src_len - 1);
    t.frac = p - double(t.i0);
    t.nearest = std::min(static_cast<Eigen::Index>(std::floor(s)), src_len - 1);
  }
  return taps;
}

template <typename G>
double bilinear(const G& g, const Tap& ty, const Tap& tx) {
  const double a = double(g(ty.i0, tx.i0)), b = double(g(ty.i0, tx.i1));
  const double c = double(g(ty.i1, tx.i0)), d = double(g(ty.i1, tx.i1));
  const double top = a + tx.frac * (b - a), bot = c + tx.frac * (d - c);
  return top + ty.frac * (bot - top);
}

} // namespace

void paste(const DatasetRecord& src, const Placement& pl, const PixelRect& clip, DatasetRecord& dst,
           double min_area_frac) {
  const Eigen::Index H = src.rows(), W = src.cols();
  const PixelRect r{std::max<Eigen::Index>(clip.x0, 0), std::max<Eigen::Index>(clip.y0, 0),
                    std::min(clip.x1, dst.cols()), std::min(clip.y1, dst.rows())};
  const auto tx = axis_taps(r.x0, r.x1, pl.sx, pl.ox, W);
  const auto ty = axis_taps(r.y0, r.y1, pl.sy, pl.oy, H);
  const MaskGrid valid = src.valid_mask();
  for (Eigen::Index v = r.y0; v < r.y1; ++v) {
    const Tap& y = ty[static_cast<std::size_t>(v - r.y0)];
    if (!y.inside) continue;
    for (Eigen::Index u = r.x0; u < r.x1; ++u) {
      const Tap& x = tx[static_cast<std::size_t>(u - r.x0)];
      if (!x.inside) continue;
      for (int ch = 0; ch < 3; ++ch) dst.image.channels[ch](v, u) = float(bilinear(src.image.channels[ch], y, x));
      dst.depth.pixels(v, u) = bilinear(src.depth.pixels, y, x);
      dst.seg.pixels(v, u) = src.seg.pixels(y.nearest, x.nearest);
      dst.valid(v, u) = valid(y.nearest, x.nearest);
    }
  }

  const double DW = double(dst.cols()), DH = double(dst.rows());
  for (const auto& b : src.boxes) {
    const auto c = b.corners();
    const Box<double> m{c.x1 * W * pl.sx + pl.ox, c.y1 * H * pl.sy + pl.oy, c.x2 * W * pl.sx + pl.ox,
                        c.y2 * H * pl.sy + pl.oy};
    const Box<double> k{std::max(m.x1, double(r.x0)), std::max(m.y1, double(r.y0)), std::min(m.x2, double(r.x1)),
                        std::min(m.y2, double(r.y1))};
    if (k.width() <= 0 || k.height() <= 0 || k.area() < min_area_frac * m.area()) continue;
    dst.boxes.push_back(OOSInstance::from_corners({k.x1 / DW, k.y1 / DH, k.x2 / DW, k.y2 / DH}, b.cls, b.c));
  }
}

LetterboxResult letterbox(const DatasetRecord& rec, int target) {
  if (target <= 0) throw ConfigError("letterbox target must be positive");
  LetterboxTransform t;
  t.target = target;
  t.src_rows = rec.rows();
  t.src_cols = rec.cols();
  t.scale = std::min(double(target) / double(rec.rows()), double(target) / double(rec.cols()));
  t.new_rows = std::min<Eigen::Index>(target, std::lround(double(rec.rows()) * t.scale));
  t.new_cols = std::min<Eigen::Index>(target, std::lround(double(rec.cols()) * t.scale));
  t.pad_top = (target - t.new_rows) / 2;
  t.pad_left = (target - t.new_cols) / 2;
  LetterboxResult out{blank_canvas(target, target, rec), t};
  paste(rec, t.placement(), {0, 0, target, target}, out.record, 0.0);
  return out;
}

DatasetRecord hflip(const DatasetRecord& rec) {
  DatasetRecord out = rec;
  for (auto& ch : out.image.channels) ch = ch.rowwise().reverse().eval();
  out.seg.pixels = rec.seg.pixels.rowwise().reverse().eval();
  out.depth.pixels = rec.depth.pixels.rowwise().reverse().eval();
  if (rec.valid.size()) out.valid = rec.valid.rowwise().reverse().eval();
  for (auto& b : out.boxes) b.x = 1.0 - b.x;
  return out;
}

DatasetRecord translate(const DatasetRecord& rec, Eigen::Index dx, Eigen::Index dy) {
  DatasetRecord out = blank_canvas(rec.rows(), rec.cols(), rec);
  paste(rec, {1.0, 1.0, double(dx), double(dy)}, {0, 0, rec.cols(), rec.rows()}, out);
  return out;
}

DatasetRecord mosaic_at(const std::array<const DatasetRecord*, 4>& recs, Eigen::Index cx, Eigen::Index cy) {
  const Eigen::Index H = recs[0]->rows(), W = recs[0]->cols();
  for (const auto* r : recs)
    if (r->rows() != H || r->cols() != W) throw ShapeError("mosaic inputs must share one size");
  if (cx <= 0 || cx >= W || cy <= 0 || cy >= H) throw ConfigError("mosaic split point must lie inside the frame");
  DatasetRecord out = blank_canvas(H, W, *recs[0]);
  out.image_id = recs[0]->image_id + "+mosaic";
  const PixelRect quads[4] = {{0, 0, cx, cy}, {cx, 0, W, cy}, {0, cy, cx, H}, {cx, cy, W, H}};
  for (int q = 0; q < 4; ++q) {
    const auto& r = quads[q];
    const double qw = double(r.x1 - r.x0), qh = double(r.y1 - r.y0);
    const double s = std::max(qw / double(W), qh / double(H));
    const double pw = double(W) * s, ph = double(H) * s;
    // Anchor the scaled frame at the split point so the crop removes the far edges.
    const double ox = (q % 2 == 0) ? double(cx) - pw : double(cx);
    const double oy = (q < 2) ? double(cy) - ph : double(cy);
    paste(*recs[q], {s, s, ox, oy}, r, out);
  }
  return out;
}

DatasetRecord mosaic(const std::array<const DatasetRecord*, 4>& recs, std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::Index H = recs[0]->rows(), W = recs[0]->cols();
  const auto cx = static_cast<Eigen::Index>(std::lround(rng.uniform(0.25, 0.75) * double(W)));
  const auto cy = static_cast<Eigen::Index>(std::lround(rng.uniform(0.25, 0.75) * double(H)));
  return mosaic_at(recs, std::clamp<Eigen::Index>(cx, 1, W - 1), std::clamp<Eigen::Index>(cy, 1, H - 1));
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r) h = (g - b) / d;
  else if (mx == g) h = 2.0 + (b - r) / d;
  else h = 4.0 + (r - g) / d;
  h /= 6.0;
  if (h < 0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = h * 6.0;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

} // namespace

DatasetRecord hsv_jitter(const DatasetRecord& rec, const std::array<double, 3>& gains, std::uint64_t seed) {
  Rng rng(seed);
  std::array<double, 3> k{};
  for (int i = 0; i < 3; ++i) k[i] = 1.0 + rng.uniform(-1.0, 1.0) * gains[i];
  DatasetRecord out = rec;
  if (k == std::array<double, 3>{1.0, 1.0, 1.0}) return out;
  auto& [R, G, B] = out.image.channels;
  for (Eigen::Index i = 0; i < R.size(); ++i) {
    double h, s, v, r, g, b;
    rgb_to_hsv(R.data()[i], G.data()[i], B.data()[i], h, s, v);
    h = std::fmod(h * k[0], 1.0);
    s = std::clamp(s * k[1], 0.0, 1.0);
    v = std::clamp(v * k[2], 0.0, 1.0);
    hsv_to_rgb(h, s, v, r, g, b);
    R.data()[i] = float(r);
    G.data()[i] = float(g);
    B.data()[i] = float(b);
  }
  return out;
}

DatasetRecord augment_sample(const std::vector<const DatasetRecord*>& pool, std::size_t index,
                             const AugmentConfig& cfg, bool allow_mosaic, std::uint64_t seed) {
  if (index >= pool.size()) throw ConfigError("augment_sample index out of range");
  const auto* base = pool[index];
  if (base->rows() != cfg.target_size || base->cols() != cfg.target_size)
    throw ShapeError("augment_sample expects records letterboxed to the target size");
  Rng rng(seed);
  DatasetRecord out;
  if (allow_mosaic && rng.chance(cfg.mosaic_prob)) {
    std::array<const DatasetRecord*, 4> four{base, nullptr, nullptr, nullptr};
    for (int i = 1; i < 4; ++i) four[i] = pool[rng.below(pool.size())];
    out = mosaic(four, rng.next());
  } else {
    out = *base;
  }
  const double T = double(cfg.target_size);
  const auto dx = static_cast<Eigen::Index>(std::lround(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * T));
  const auto dy = static_cast<Eigen::Index>(std::lround(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * T));
  if (dx != 0 || dy != 0) out = translate(out, dx, dy);
  if (rng.chance(cfg.flip_prob)) out = hflip(out);
  return hsv_jitter(out, cfg.hsv_gains, rng.next());
}

} // namespace oosdsd
