#include "oosdsd/render.hpp"

#include "oosdsd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace oosdsd {

namespace {

void put(Image& img, Eigen::Index r, Eigen::Index c, const Color& color) {
  if (r < 0 || c < 0 || r >= img.rows() || c >= img.cols()) return;
  for (int k = 0; k < 3; ++k) img.channels[k](r, c) = color[k];
}

void fill_rect(Image& img, long r0, long c0, long r1, long c1, const Color& color) {
  r0 = std::max<long>(r0, 0);
  c0 = std::max<long>(c0, 0);
  r1 = std::min<long>(r1, long(img.rows()));
  c1 = std::min<long>(c1, long(img.cols()));
  if (r0 >= r1 || c0 >= c1) return;
  for (int k = 0; k < 3; ++k) img.channels[k].block(r0, c0, r1 - r0, c1 - c0).setConstant(color[k]);
}

// Rows top to bottom, bit 4 is the leftmost column.
const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> f{
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'@', {0x0E, 0x11, 0x17, 0x15, 0x17, 0x10, 0x0F}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
  };
  return f;
}

Color viridis(double t) {
  static const std::array<Color, 5> stops{{{0.267f, 0.005f, 0.329f},
                                           {0.230f, 0.322f, 0.546f},
                                           {0.128f, 0.567f, 0.551f},
                                           {0.369f, 0.789f, 0.383f},
                                           {0.993f, 0.906f, 0.144f}}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(int(t), 3);
  const float f = float(t - i);
  Color c;
  for (int k = 0; k < 3; ++k) c[k] = stops[i][k] * (1 - f) + stops[i + 1][k] * f;
  return c;
}

Image captioned(const Image& img, const std::string& caption) {
  const int pad = 14;
  Image out(img.rows() + pad, img.cols(), 1.0f);
  for (int k = 0; k < 3; ++k) out.channels[k].bottomRows(img.rows()) = img.channels[k];
  draw_text(out, 2, 3, caption, {0, 0, 0});
  return out;
}

std::string tick_label(double v) {
  char buf[32];
  if (v != 0 && (std::abs(v) >= 1e4 || std::abs(v) < 1e-2)) std::snprintf(buf, sizeof buf, "%.1e", v);
  else std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Roughly five round tick values spanning [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) t.push_back(std::abs(v) < 1e-12 * span ? 0 : v);
  return t;
}

} // namespace

void draw_rect(Image& img, const Box<double>& px, const Color& color, int thickness) {
  const long x1 = std::lround(px.x1), y1 = std::lround(px.y1), x2 = std::lround(px.x2) - 1, y2 = std::lround(px.y2) - 1;
  for (int t = 0; t < thickness; ++t) {
    fill_rect(img, y1 + t, x1, y1 + t + 1, x2 + 1, color);
    fill_rect(img, y2 - t, x1, y2 - t + 1, x2 + 1, color);
    fill_rect(img, y1, x1 + t, y2 + 1, x1 + t + 1, color);
    fill_rect(img, y1, x2 - t, y2 + 1, x2 - t + 1, color);
  }
}

void draw_boxes(Image& img, const std::vector<OOSInstance>& boxes, bool ground_truth, int thickness) {
  const double W = double(img.cols()), H = double(img.rows());
  for (const auto& b : boxes) {
    const auto c = b.corners();
    const Color color = ground_truth ? kGroundTruthColor : (b.cls == OOSClass::front ? kFrontColor : kNormalColor);
    draw_rect(img, {c.x1 * W, c.y1 * H, c.x2 * W, c.y2 * H}, color, thickness);
  }
}

int text_width(const std::string& text, int scale) { return int(text.size()) * 6 * scale; }

void draw_text(Image& img, int x, int y, const std::string& text, const Color& color, int scale) {
  const auto& f = font();
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = char(std::toupper(static_cast<unsigned char>(text[i])));
    auto it = f.find(ch);
    if (it == f.end()) continue;
    const int ox = x + int(i) * 6 * scale;
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 5; ++c)
        if (it->second[r] & (0x10 >> c)) fill_rect(img, y + r * scale, ox + c * scale, y + (r + 1) * scale, ox + (c + 1) * scale, color);
  }
}

Image grayscale(const DepthGrid& values, double lo, double hi) {
  if (!(hi > lo)) throw ValidationError("grayscale range must satisfy lo < hi");
  Image out(values.rows(), values.cols());
  const Plane g = ((values - lo) / (hi - lo)).cwiseMax(0.0).cwiseMin(1.0).cast<float>();
  for (auto& ch : out.channels) ch = g;
  return out;
}

Image colorize(const DepthGrid& values, double lo, double hi, const MaskGrid* valid) {
  if (!(hi > lo)) throw ValidationError("color map range must satisfy lo < hi");
  Image out(values.rows(), values.cols());
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const bool ok = !valid || (*valid)(r, c) != 0;
      put(out, r, c, ok ? viridis((values(r, c) - lo) / (hi - lo)) : Color{0, 0, 0});
    }
  return out;
}

Image resize(const Image& img, Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1) throw ValidationError("resize target must be positive");
  Image out(rows, cols);
  const double sy = double(img.rows()) / double(rows), sx = double(img.cols()) / double(cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, double(img.rows() - 1));
    const Eigen::Index y0 = Eigen::Index(fy), y1 = std::min(y0 + 1, img.rows() - 1);
    const float wy = float(fy - double(y0));
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, double(img.cols() - 1));
      const Eigen::Index x0 = Eigen::Index(fx), x1 = std::min(x0 + 1, img.cols() - 1);
      const float wx = float(fx - double(x0));
      for (int k = 0; k < 3; ++k) {
        const auto& ch = img.channels[k];
        out.channels[k](r, c) = (1 - wy) * ((1 - wx) * ch(y0, x0) + wx * ch(y0, x1)) +
                                wy * ((1 - wx) * ch(y1, x0) + wx * ch(y1, x1));
      }
    }
  }
  return out;
}

Image hconcat(const std::vector<Image>& images, int gap, float background) {
  Eigen::Index rows = 0, cols = 0;
  for (const auto& im : images) {
    rows = std::max(rows, im.rows());
    cols += im.cols();
  }
  if (images.empty()) return Image();
  cols += Eigen::Index(gap) * Eigen::Index(images.size() - 1);
  Image out(rows, cols, background);
  Eigen::Index x = 0;
  for (const auto& im : images) {
    for (int k = 0; k < 3; ++k) out.channels[k].block(0, x, im.rows(), im.cols()) = im.channels[k];
    x += im.cols() + gap;
  }
  return out;
}

Image vconcat(const std::vector<Image>& images, int gap, float background) {
  Eigen::Index rows = 0, cols = 0;
  for (const auto& im : images) {
    cols = std::max(cols, im.cols());
    rows += im.rows();
  }
  if (images.empty()) return Image();
  rows += Eigen::Index(gap) * Eigen::Index(images.size() - 1);
  Image out(rows, cols, background);
  Eigen::Index y = 0;
  for (const auto& im : images) {
    for (int k = 0; k < 3; ++k) out.channels[k].block(y, 0, im.rows(), im.cols()) = im.channels[k];
    y += im.rows() + gap;
  }
  return out;
}

Image qualitative_panel(const Image& image, const std::vector<OOSInstance>& predictions,
                        const std::vector<OOSInstance>* ground_truth, const DepthGrid& seg_prob,
                        const DepthGrid& depth, double depth_lo, double depth_hi) {
  Image boxed = image;
  if (ground_truth) draw_boxes(boxed, *ground_truth, true, 1);
  draw_boxes(boxed, predictions, false, 2);
  std::vector<Image> parts{captioned(boxed, ground_truth ? "boxes (gt green)" : "boxes")};
  if (seg_prob.size()) parts.push_back(captioned(grayscale(seg_prob, 0.0, 1.0), "segmentation"));
  if (depth.size()) parts.push_back(captioned(colorize(depth, depth_lo, depth_hi), "depth"));
  return hconcat(parts);
}

Image plot_lines(const std::vector<PlotSeries>& series, const std::string& title, int width, int height) {
  if (width < 200 || height < 150) throw ValidationError("plot must be at least 200x150 pixels");
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ValidationError("plot series '" + s.label + "' has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 >= x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double ypad = 0.05 * (y1 - y0);
  y0 -= ypad;
  y1 += ypad;

  Image img(height, width, 1.0f);
  const int left = 64, right = 16, top = 28, bottom = 36;
  const int pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1 - (y - y0) / (y1 - y0)) * ph; };
  const Color grid{0.88f, 0.88f, 0.88f}, ink{0.1f, 0.1f, 0.1f};

  for (double t : ticks(y0, y1)) {
    const long r = std::lround(py(t));
    fill_rect(img, r, left, r + 1, left + pw, grid);
    const auto s = tick_label(t);
    draw_text(img, left - 4 - text_width(s), int(r) - 3, s, ink);
  }
  for (double t : ticks(x0, x1)) {
    const long c = std::lround(px(t));
    fill_rect(img, top, c, top + ph, c + 1, grid);
    const auto s = tick_label(t);
    draw_text(img, int(c) - text_width(s) / 2, top + ph + 6, s, ink);
  }
  fill_rect(img, top, left, top + ph, left + 1, ink);
  fill_rect(img, top + ph, left, top + ph + 1, left + pw, ink);
  draw_text(img, left, 8, title, ink, 1);
  draw_text(img, left + pw / 2 - text_width("epoch") / 2, height - 12, "epoch", ink);

  for (const auto& s : series) {
    bool have = false;
    double pxp = 0, pyp = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) {
        have = false;
        continue;
      }
      const double cx = px(s.x[i]), cy = py(s.y[i]);
      if (have) {
        const int steps = int(std::ceil(std::max(std::abs(cx - pxp), std::abs(cy - pyp)))) + 1;
        for (int k = 0; k <= steps; ++k) {
          const double t = double(k) / steps;
          const long r = std::lround(pyp + t * (cy - pyp)), c = std::lround(pxp + t * (cx - pxp));
          fill_rect(img, r, c, r + 2, c + 2, s.color);
        }
      } else {
        fill_rect(img, std::lround(cy), std::lround(cx), std::lround(cy) + 2, std::lround(cx) + 2, s.color);
      }
      have = true;
      pxp = cx;
      pyp = cy;
    }
  }
  int ly = top + 6;
  for (const auto& s : series) {
    const int lx = left + pw - text_width(s.label) - 24;
    fill_rect(img, ly + 2, lx, ly + 5, lx + 14, s.color);
    draw_text(img, lx + 18, ly, s.label, ink);
    ly += 12;
  }
  return img;
}

} // namespace oosdsd
