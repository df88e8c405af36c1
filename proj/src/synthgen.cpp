#include "oosdsd/synthgen.hpp"

#include "oosdsd/dataset.hpp"
#include "oosdsd/errors.hpp"
#include "oosdsd/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>

namespace oosdsd {

namespace {

int iround(double v) { return static_cast<int>(std::lround(v)); }

double max_depth_factor(const SceneSpec& s) {
  return s.depth_scale * (s.depth_profile == DepthProfile::tilted ? 1.0 + std::abs(s.tilt) / 2 : 1.0);
}

// Deterministic per-pixel noise in [-1, 1).
double pixel_noise(std::uint64_t seed, int r, int c) {
  const std::uint64_t h = derive_seed(seed, (static_cast<std::uint64_t>(r) << 32) | static_cast<std::uint32_t>(c));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

struct ProductLook {
  std::array<double, 3> base{};
  std::array<double, 3> label{};
  bool vertical = true;
  int period = 6;
  double amplitude = 0.1;
};

ProductLook random_look(Rng& rng) {
  ProductLook l;
  for (auto& v : l.base) v = rng.uniform(0.1, 0.9);
  for (int k = 0; k < 3; ++k) l.label[k] = std::min(1.0, 0.5 * l.base[k] + 0.5);
  l.vertical = rng.chance(0.5);
  l.period = 3 + static_cast<int>(rng.below(7));
  l.amplitude = rng.uniform(0.05, 0.15);
  return l;
}

float quantize8(double v) {
  const double s = std::clamp(v, 0.0, 1.0) * 255.0 + 0.5;
  return static_cast<float>(std::floor(s)) / 255.0f;
}

} // namespace

void validate(const SceneSpec& s) {
  if (s.shelf_rows < 1 || s.products_per_row < 1) throw ValidationError("scene needs at least one row and slot");
  if (s.image_size < 32) throw ValidationError("scene image_size must be at least 32");
  if (s.image_size / s.shelf_rows < 16 || s.image_size / s.products_per_row < 8)
    throw ValidationError("scene grid too dense for the image size");
  const auto& d = s.depths;
  if (!(0 < d.board && d.board < d.product && d.product < d.back_product && d.back_product < d.panel))
    throw ValidationError("scene depths must satisfy 0 < board < product < back_product < panel");
  if (!(s.depth_scale > 0)) throw ValidationError("depth_scale must be positive");
  if (std::abs(s.tilt) >= 2) throw ValidationError("tilt must be in (-2, 2)");
  if (d.panel * max_depth_factor(s) > 1.0) throw ValidationError("scene depth exceeds 1 after scaling");
  std::set<std::pair<int, int>> seen;
  for (const auto& o : s.oos_slots) {
    if (o.row < 0 || o.row >= s.shelf_rows || o.slot < 0 || o.slot >= s.products_per_row)
      throw ValidationError("OOS slot (" + std::to_string(o.row) + "," + std::to_string(o.slot) +
                            ") outside the shelf grid");
    if (!seen.insert({o.row, o.slot}).second) throw ValidationError("duplicate OOS slot");
  }
}

SlotGeometry slot_geometry(const SceneSpec& s, int row, int slot) {
  const int S = s.image_size;
  const int mx = iround(0.03 * S), my = iround(0.03 * S);
  const int bh = (S - 2 * my) / s.shelf_rows;
  const int sw = (S - 2 * mx) / s.products_per_row;
  const int y0 = my + row * bh;
  const int board_h = std::max(2, iround(0.08 * bh));
  const int top_gap = std::max(1, iround(0.12 * bh));
  const int side_gap = std::max(1, iround(0.08 * sw));
  const int x0 = mx + slot * sw;
  SlotGeometry g;
  g.slot = {x0 + side_gap, y0 + top_gap, x0 + sw - side_gap, y0 + bh - board_h};
  const int w = g.slot.width(), h = g.slot.height();
  const int bw = std::max(2, iround(0.7 * w)), bhh = std::max(2, iround(0.7 * h));
  const int lift = iround(0.06 * h);
  const int cx = (g.slot.x1 + g.slot.x2) / 2;
  g.back = {cx - bw / 2, g.slot.y2 - lift - bhh, cx - bw / 2 + bw, g.slot.y2 - lift};
  return g;
}

DatasetRecord generate_scene(const SceneSpec& s, const std::string& image_id) {
  validate(s);
  const int S = s.image_size;
  Rng rng(s.seed);
  const std::uint64_t noise_seed = rng.next();

  // Region labels: 0 panel, 1 board, 2 product, 3 back product.
  Grid<std::uint8_t> region = Grid<std::uint8_t>::Zero(S, S);
  Grid<std::int16_t> owner = Grid<std::int16_t>::Constant(S, S, -1);
  std::vector<ProductLook> looks;
  std::vector<Box<int>> rects;

  const int mx = iround(0.03 * S), my = iround(0.03 * S);
  const int bh = (S - 2 * my) / s.shelf_rows;
  const int board_h = std::max(2, iround(0.08 * bh));

  std::vector<OOSInstance> boxes;
  for (int r = 0; r < s.shelf_rows; ++r) {
    const int yb = my + (r + 1) * bh;
    region.block(yb - board_h, mx, board_h, S - 2 * mx) = 1;
    for (int k = 0; k < s.products_per_row; ++k) {
      const auto g = slot_geometry(s, r, k);
      looks.push_back(random_look(rng));
      rects.push_back(g.slot);
      const auto id = static_cast<std::int16_t>(looks.size() - 1);
      const auto oos = std::find_if(s.oos_slots.begin(), s.oos_slots.end(),
                                    [&](const OOSSlot& o) { return o.row == r && o.slot == k; });
      const Box<int>* rect = &g.slot;
      std::uint8_t label = 2;
      if (oos != s.oos_slots.end()) {
        boxes.push_back(OOSInstance::from_corners(
            {double(g.slot.x1) / S, double(g.slot.y1) / S, double(g.slot.x2) / S, double(g.slot.y2) / S}, oos->cls));
        if (oos->cls == OOSClass::normal) continue;
        rect = &g.back;
        label = 3;
      }
      rects.back() = *rect;
      region.block(rect->y1, rect->x1, rect->height(), rect->width()) = label;
      owner.block(rect->y1, rect->x1, rect->height(), rect->width()) = id;
    }
  }

  DatasetRecord rec;
  rec.image_id = image_id;
  rec.image = Image(S, S);
  rec.seg.pixels = (region == 2).cast<std::uint8_t>();
  rec.depth.pixels.resize(S, S);
  rec.depth.normalized = false;
  rec.depth_is_pseudo = false;
  rec.boxes = std::move(boxes);

  const std::array<double, 3> panel{0.78, 0.74, 0.68};
  const std::array<double, 3> board{0.45, 0.33, 0.22};
  const auto& D = s.depths;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double n = pixel_noise(noise_seed, y, x);
      std::array<double, 3> rgb{};
      double depth = D.panel;
      switch (region(y, x)) {
      case 0:
        for (int k = 0; k < 3; ++k) rgb[k] = panel[k] + 0.02 * n;
        break;
      case 1:
        for (int k = 0; k < 3; ++k) rgb[k] = board[k] + 0.03 * n;
        depth = D.board;
        break;
      default: {
        const auto& l = looks[owner(y, x)];
        const int t = l.vertical ? x : y;
        const double stripe = ((t / l.period) % 2 == 0) ? l.amplitude : -l.amplitude;
        const auto& rect = rects[owner(y, x)];
        const double v = double(y - rect.y1) / std::max(1, rect.height() - 1);
        const bool on_label = v > 0.35 && v < 0.65;
        for (int k = 0; k < 3; ++k) rgb[k] = (on_label ? l.label[k] : l.base[k] + stripe) + 0.03 * n;
        if (region(y, x) == 3) {
          for (auto& c : rgb) c *= 0.5;
          depth = D.back_product;
        } else {
          depth = D.product;
        }
      }
      }
      for (int k = 0; k < 3; ++k) rec.image.channels[k](y, x) = quantize8(rgb[k]);
      double f = s.depth_scale;
      if (s.depth_profile == DepthProfile::tilted) f *= 1.0 + s.tilt * ((x + 0.5) / S - 0.5);
      rec.depth.pixels(y, x) = std::floor(std::clamp(depth * f, 0.0, 1.0) * 65535.0 + 0.5) / 65535.0;
    }
  }
  return rec;
}

SceneSpec random_scene_spec(std::uint64_t seed, int index, const SynthOptions& o) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
  SceneSpec s;
  s.image_size = o.image_size;
  s.shelf_rows = pick(o.min_rows, o.max_rows);
  s.products_per_row = pick(o.min_products, o.max_products);
  s.seed = rng.next();
  s.depth_profile = rng.chance(o.tilted_fraction) ? DepthProfile::tilted : DepthProfile::planar_shelf;
  s.tilt = rng.uniform(-0.4, 0.4);
  s.depths.product = rng.uniform(0.35, 0.45);
  s.depths.board = s.depths.product - 0.08;
  s.depths.panel = s.depths.product + rng.uniform(0.25, 0.35);
  s.depths.back_product = (s.depths.product + s.depths.panel) / 2;

  const int slots = s.shelf_rows * s.products_per_row;
  const int n_oos = std::min(slots, pick(o.min_oos, o.max_oos));
  std::vector<int> order(slots);
  for (int i = 0; i < slots; ++i) order[i] = i;
  shuffle(order, rng);
  for (int i = 0; i < n_oos; ++i) {
    OOSClass cls = rng.chance(0.5) ? OOSClass::normal : OOSClass::front;
    if (i == 0 && index < 2) cls = index == 0 ? OOSClass::normal : OOSClass::front;
    s.oos_slots.push_back({order[i] / s.products_per_row, order[i] % s.products_per_row, cls});
  }

  if (o.random_depth_scale) {
    s.depth_scale = 1.0;
    const double cap = 1.0 / (s.depths.panel * max_depth_factor(s));
    s.depth_scale = std::min(rng.uniform(o.scale_min, o.scale_max), cap);
  } else {
    rng.next();  // keep the stream aligned with the scaled variant
  }
  return s;
}

std::vector<DatasetRecord> generate_dataset(int n, std::uint64_t seed, const SynthOptions& opts) {
  if (n < 0) throw ValidationError("scene count must be non-negative");
  std::vector<DatasetRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  char id[32];
  for (int i = 0; i < n; ++i) {
    std::snprintf(id, sizeof id, "synth_%04d", i);
    out.push_back(generate_scene(random_scene_spec(seed, i, opts), id));
  }
  return out;
}

std::vector<DatasetRecord> generate_dataset(int n, std::uint64_t seed, const std::filesystem::path& root,
                                            const SynthOptions& opts) {
  auto recs = generate_dataset(n, seed, opts);
  save_dataset(root, recs);
  return recs;
}

} // namespace oosdsd
