#include "oosdsd/dataset.hpp"

#include "oosdsd/errors.hpp"
#include "oosdsd/image_io.hpp"
#include "oosdsd/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace oosdsd {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "dataset.json";

bool is_image_ext(const fs::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return e == ".png" || e == ".jpg" || e == ".jpeg";
}

fs::path find_image(const fs::path& root, const std::string& id) {
  for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"}) {
    auto p = root / "images" / (id + ext);
    if (fs::exists(p)) return p;
  }
  throw MissingAnnotationError("image file for '" + id + "' not found");
}

fs::path require(const fs::path& p, const std::string& id, const char* what) {
  if (!fs::exists(p)) throw MissingAnnotationError("record '" + id + "' has no " + what + " (" + p.string() + ")");
  return p;
}

struct ManifestEntry {
  bool depth_is_pseudo = true;
  std::map<std::string, std::uint32_t> checksums;
};

std::map<std::string, ManifestEntry> read_manifest(const fs::path& root) {
  std::map<std::string, ManifestEntry> out;
  const auto path = root / kManifest;
  if (!fs::exists(path)) return out;
  std::ifstream in(path);
  json j;
  try {
    in >> j;
    for (const auto& r : j.at("records")) {
      ManifestEntry e;
      e.depth_is_pseudo = r.value("depth_is_pseudo", true);
      if (r.contains("checksums"))
        for (const auto& [k, v] : r["checksums"].items()) e.checksums[k] = v.get<std::uint32_t>();
      out[r.at("id").get<std::string>()] = std::move(e);
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed " + path.string() + ": " + e.what());
  }
  return out;
}

void check_crc(const ManifestEntry& entry, const std::string& key, const fs::path& file, const std::string& id) {
  auto it = entry.checksums.find(key);
  if (it == entry.checksums.end()) return;
  if (io::file_crc32(file) != it->second)
    throw ValidationError("record '" + id + "': checksum mismatch for " + file.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
}

} // namespace

std::vector<OOSInstance> parse_labels(std::istream& in, const std::string& source) {
  std::vector<OOSInstance> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    int cls = -1;
    OOSInstance b;
    std::string extra;
    if (!(ls >> cls >> b.x >> b.y >> b.w >> b.h) || (ls >> extra))
      throw ValidationError(source + ":" + std::to_string(lineno) + ": expected 'cls x y w h'");
    b.cls = oos_class_from_index(cls);
    b.c = 1.0;
    boxes.push_back(b);
  }
  return boxes;
}

std::string format_labels(const std::vector<OOSInstance>& boxes) {
  std::string out;
  char buf[128];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", static_cast<int>(b.cls), b.x, b.y, b.w, b.h);
    out += buf;
  }
  return out;
}

std::vector<std::string> list_image_ids(const fs::path& root) {
  const auto dir = root / "images";
  if (!fs::is_directory(dir)) throw MissingAnnotationError("no images/ directory under " + root.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_ext(e.path())) ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ValidationError("duplicate image ids under " + dir.string());
  return ids;
}

std::vector<DatasetRecord> load_dataset(const fs::path& root, const LoadOptions& opts) {
  const auto manifest = read_manifest(root);
  std::vector<DatasetRecord> records;
  for (const auto& id : list_image_ids(root)) {
    DatasetRecord rec;
    rec.image_id = id;
    const auto img_path = find_image(root, id);
    const auto label_path = require(root / "labels" / (id + ".txt"), id, "label file");
    const auto seg_path = require(root / "seg" / (id + ".png"), id, "segmentation mask");
    const auto depth_path = root / "depth" / (id + ".png");
    const auto cache_path = root / "depth_norm" / (id + ".bin");

    rec.image = io::read_image(img_path);
    {
      std::ifstream in(label_path);
      rec.boxes = parse_labels(in, label_path.string());
    }
    rec.seg = io::read_mask(seg_path);

    const bool use_cache = opts.depth == DepthSource::normalized_cache ||
                           (opts.depth == DepthSource::prefer_cache && fs::exists(cache_path));
    if (use_cache) {
      rec.depth = io::read_depth_bin(require(cache_path, id, "normalized depth cache"));
      if (!rec.depth.normalized) throw ValidationError("depth cache for '" + id + "' is not marked normalized");
    } else {
      rec.depth = io::read_depth_png(require(depth_path, id, "depth map"));
    }

    if (auto it = manifest.find(id); it != manifest.end()) {
      rec.depth_is_pseudo = it->second.depth_is_pseudo;
      if (opts.verify_checksums) {
        check_crc(it->second, "image", img_path, id);
        check_crc(it->second, "labels", label_path, id);
        check_crc(it->second, "seg", seg_path, id);
        if (!use_cache) check_crc(it->second, "depth", depth_path, id);
      }
    }
    validate(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

void save_dataset(const fs::path& root, const std::vector<DatasetRecord>& records) {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.image_id).second) throw ValidationError("duplicate image id '" + r.image_id + "'");
    if (r.depth.normalized)
      throw ValidationError("record '" + r.image_id + "': save_dataset stores raw depth only");
    validate(r);
  }
  for (const char* d : {"images", "labels", "seg", "depth"}) fs::create_directories(root / d);

  json recs = json::array();
  for (const auto& r : records) {
    const auto img = root / "images" / (r.image_id + ".png");
    const auto lab = root / "labels" / (r.image_id + ".txt");
    const auto seg = root / "seg" / (r.image_id + ".png");
    const auto dep = root / "depth" / (r.image_id + ".png");
    io::write_png(img, r.image);
    write_text(lab, format_labels(r.boxes));
    io::write_mask(seg, r.seg);
    io::write_depth_png(dep, r.depth);
    recs.push_back({{"id", r.image_id},
                    {"width", r.cols()},
                    {"height", r.rows()},
                    {"depth_is_pseudo", r.depth_is_pseudo},
                    {"checksums",
                     {{"image", io::file_crc32(img)},
                      {"labels", io::file_crc32(lab)},
                      {"seg", io::file_crc32(seg)},
                      {"depth", io::file_crc32(dep)}}}});
  }
  write_text(root / kManifest, json{{"version", 1}, {"records", recs}}.dump(2) + "\n");
}

void write_depth_cache(const fs::path& root, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) {
    if (!r.depth.normalized) throw NotNormalizedError("record '" + r.image_id + "': depth is not normalized");
    io::write_depth_bin(root / "depth_norm" / (r.image_id + ".bin"), r.depth);
  }
}

std::vector<FoldSplit> make_folds(std::vector<std::string> ids, int k, double val_fraction, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be at least 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in [0,1)");
  if (ids.size() < static_cast<std::size_t>(k))
    throw TooFewRecordsError("need at least " + std::to_string(k) + " records for " + std::to_string(k) +
                             " folds, got " + std::to_string(ids.size()));
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ValidationError("duplicate ids in fold input");
  Rng rng(seed);
  shuffle(ids, rng);

  const std::size_t n = ids.size(), base = n / k, extra = n % k;
  std::vector<FoldSplit> folds;
  std::size_t start = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t len = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    FoldSplit split;
    split.fold_index = f;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= start && i < start + len) split.test_ids.push_back(ids[i]);
      else rest.push_back(ids[i]);
    }
    // Rotate so each fold draws its validation ids from a different part of the permutation.
    std::rotate(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(start % std::max<std::size_t>(rest.size(), 1)),
                rest.end());
    const auto nval = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(rest.size())));
    split.val_ids.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(nval));
    split.train_ids.assign(rest.begin() + static_cast<std::ptrdiff_t>(nval), rest.end());
    for (auto* v : {&split.train_ids, &split.val_ids, &split.test_ids}) std::sort(v->begin(), v->end());
    folds.push_back(std::move(split));
    start += len;
  }
  return folds;
}

std::vector<DatasetRecord> select_records(const std::vector<DatasetRecord>& records,
                                          const std::vector<std::string>& ids) {
  std::map<std::string, const DatasetRecord*> index;
  for (const auto& r : records) index[r.image_id] = &r;
  std::vector<DatasetRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError("unknown image id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

} // namespace oosdsd
