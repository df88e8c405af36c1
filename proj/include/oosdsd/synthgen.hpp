#pragma once

#include "oosdsd/types.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace oosdsd {

enum class DepthProfile { planar_shelf, tilted };

struct OOSSlot {
  int row = 0;
  int slot = 0;
  OOSClass cls = OOSClass::normal;
};

/// Analytic depth levels (larger = farther). Order: board < product < back product < panel.
struct SceneDepths {
  double board = 0.30;
  double product = 0.40;
  double back_product = 0.55;
  double panel = 0.70;
};

struct SceneSpec {
  int shelf_rows = 3;
  int products_per_row = 5;
  std::vector<OOSSlot> oos_slots;
  int image_size = 640;
  DepthProfile depth_profile = DepthProfile::planar_shelf;
  std::uint64_t seed = 0;
  SceneDepths depths;
  /// Global multiplier on the whole depth map (per-image relative-depth scale).
  double depth_scale = 1.0;
  /// Tilted profile: depth is multiplied by 1 + tilt * (u - 0.5), u the column fraction.
  double tilt = 0.4;
};

/// Throws ValidationError for an invalid spec.
void validate(const SceneSpec& spec);

/// Geometry of one slot in pixels, shared by the renderer and tests.
struct SlotGeometry {
  Box<int> slot;     ///< region a front product occupies; half-open [x1,x2) x [y1,y2)
  Box<int> back;     ///< smaller back-row product inside the slot
};
SlotGeometry slot_geometry(const SceneSpec& spec, int row, int slot);

/// Renders one scene. Image, depth and seg are quantized exactly as the on-disk formats store
/// them, so a save/load round trip returns the same record.
DatasetRecord generate_scene(const SceneSpec& spec, const std::string& image_id = "scene");

struct SynthOptions {
  int image_size = 640;
  int min_rows = 2, max_rows = 3;
  int min_products = 4, max_products = 6;
  int min_oos = 1, max_oos = 3;
  double tilted_fraction = 0.3;
  /// When true, each scene gets a random global depth scale in [scale_min, scale_max].
  bool random_depth_scale = false;
  double scale_min = 0.3, scale_max = 1.4;
};

/// Random scene spec for dataset index i.
SceneSpec random_scene_spec(std::uint64_t seed, int index, const SynthOptions& opts);

/// n records with ids "synth_0000"... . Scenes 0 and 1 always include a normal and a front
/// slot respectively, so both classes are present whenever n >= 2.
std::vector<DatasetRecord> generate_dataset(int n, std::uint64_t seed, const SynthOptions& opts = {});

/// generate_dataset followed by save_dataset.
std::vector<DatasetRecord> generate_dataset(int n, std::uint64_t seed, const std::filesystem::path& root,
                                            const SynthOptions& opts = {});

} // namespace oosdsd
