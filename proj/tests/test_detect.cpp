#include <doctest.h>

#include "oosdsd/boxes.hpp"
#include "oosdsd/detect.hpp"

#include <cmath>
#include <random>

using namespace oosdsd;

namespace {

constexpr int kR = 16, kNc = 2;

/// Raw outputs for a size x size input: every class logit at -20, distributions uniform.
std::vector<Tensor<double>> blank(Eigen::Index size, Eigen::Index n = 1) {
  std::vector<Tensor<double>> out;
  for (int s : {8, 16, 32}) {
    auto t = Tensor<double>::zeros(n, 4 * kR + kNc, size / s, size / s);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < kNc; ++c) t.plane(i, 4 * kR + c).setConstant(-20);
    out.push_back(std::move(t));
  }
  return out;
}

/// Writes distances (grid units, in [0, R-1]) as a two-bin distribution with the exact mean.
void encode(Tensor<double>& t, Eigen::Index n, Eigen::Index y, Eigen::Index x, const std::array<double, 4>& ltrb,
            int cls, double logit) {
  for (int k = 0; k < 4; ++k) {
    const int lo = std::min(int(std::floor(ltrb[k])), kR - 2);
    const double frac = ltrb[k] - lo;
    for (int b = 0; b < kR; ++b) t(n, k * kR + b, y, x) = -60;
    t(n, k * kR + lo, y, x) = std::log(std::max(1 - frac, 1e-300));
    t(n, k * kR + lo + 1, y, x) = std::log(std::max(frac, 1e-300));
  }
  t(n, 4 * kR + cls, y, x) = logit;
}

} // namespace

TEST_CASE("anchors are cell centers of every scale") {
  const auto raw = blank(64);
  const auto g = make_anchors(raw);
  CHECK(g.size() == 64 + 16 + 4);
  CHECK(g.px(0) == 4.0);
  CHECK(g.py(0) == 4.0);
  CHECK(g.px(64) == 8.0);
  CHECK(g.stride[64 + 16] == 32);
}

TEST_CASE("a single confident anchor decodes to its box") {
  auto raw = blank(64);
  encode(raw[0], 0, 3, 3, {2, 2, 2, 2}, 1, 5.0);
  const auto dets = decode_detections(raw, kR, kNc);
  REQUIRE(dets.size() == 1);
  REQUIRE(dets[0].size() == 1);
  const auto& d = dets[0][0];
  CHECK(d.cls == OOSClass::front);
  CHECK(d.c == doctest::Approx(1 / (1 + std::exp(-5.0))));
  CHECK(d.x == doctest::Approx(28.0 / 64).epsilon(1e-9));
  CHECK(d.y == doctest::Approx(28.0 / 64).epsilon(1e-9));
  CHECK(d.w == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(d.h == doctest::Approx(0.5).epsilon(1e-9));

  DecodeConfig high;
  high.conf_threshold = 0.999;
  CHECK(decode_detections(raw, kR, kNc, high)[0].empty());
}

TEST_CASE("encoded boxes decode within one pixel") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0, 1);
  const Eigen::Index size = 128;
  for (int t = 0; t < 100; ++t) {
    auto raw = blank(size);
    const int s = int(gen() % 3), stride = 8 << s;
    const Eigen::Index cells = size / stride;
    const Eigen::Index cy = Eigen::Index(gen() % cells), cx = Eigen::Index(gen() % cells);
    const double ax = (cx + 0.5) * stride, ay = (cy + 0.5) * stride;
    // Distances limited so the box stays inside the frame and within the distribution range.
    std::array<double, 4> ltrb{};
    const double lim[4] = {ax, ay, size - ax, size - ay};
    for (int k = 0; k < 4; ++k) ltrb[k] = u(gen) * std::min(lim[k] / stride, kR - 1.0);
    encode(raw[s], 0, cy, cx, ltrb, int(gen() % 2), 3.0);
    const auto dets = decode_detections(raw, kR, kNc);
    REQUIRE(dets[0].size() == 1);
    const auto b = to_pixels(dets[0][0], size, size);
    CHECK(std::abs(b.x1 - (ax - ltrb[0] * stride)) < 1.0);
    CHECK(std::abs(b.y1 - (ay - ltrb[1] * stride)) < 1.0);
    CHECK(std::abs(b.x2 - (ax + ltrb[2] * stride)) < 1.0);
    CHECK(std::abs(b.y2 - (ay + ltrb[3] * stride)) < 1.0);
  }
}

TEST_CASE("nms") {
  const Box<double> a{0, 0, 100, 100};
  const Box<double> b{0, 0, 100, 90};  // IoU 0.9 with a
  const Box<double> c{50, 0, 150, 100};  // IoU 1/3 with a
  CHECK(box_iou(a, b) == doctest::Approx(0.9));
  CHECK(nms({{a, 0.9, 0}, {b, 0.8, 0}}, 0.7) == std::vector<std::size_t>{0});
  CHECK(nms({{b, 0.8, 0}, {a, 0.9, 0}}, 0.7) == std::vector<std::size_t>{1});
  CHECK(nms({{a, 0.9, 0}, {b, 0.8, 1}}, 0.7) == std::vector<std::size_t>{0, 1});
  CHECK(nms({{a, 0.9, 0}, {b, 0.8, 1}}, 0.7, true) == std::vector<std::size_t>{0});
  CHECK(nms({{a, 0.9, 0}, {c, 0.8, 0}}, 0.7) == std::vector<std::size_t>{0, 1});
  // Ties keep input order.
  CHECK(nms({{c, 0.5, 0}, {a, 0.5, 0}}, 0.7) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("duplicate predictions across neighbouring anchors are merged") {
  auto raw = blank(64);
  encode(raw[0], 0, 3, 3, {2, 2, 2, 2}, 0, 4.0);
  encode(raw[0], 0, 3, 4, {3, 2, 1, 2}, 0, 3.0);  // same box seen from the next cell
  const auto dets = decode_detections(raw, kR, kNc);
  REQUIRE(dets[0].size() == 1);
  CHECK(dets[0][0].c == doctest::Approx(1 / (1 + std::exp(-4.0))));
}

TEST_CASE("max_det caps the output") {
  auto raw = blank(64);
  for (Eigen::Index y = 0; y < 8; y += 2)
    for (Eigen::Index x = 0; x < 8; x += 2) encode(raw[0], 0, y, x, {0.4, 0.4, 0.4, 0.4}, 0, 2.0 + 0.01 * x);
  DecodeConfig cfg;
  CHECK(decode_detections(raw, kR, kNc, cfg)[0].size() == 16);
  cfg.max_det = 5;
  CHECK(decode_detections(raw, kR, kNc, cfg)[0].size() == 5);
}
