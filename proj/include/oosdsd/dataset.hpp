#pragma once

#include "oosdsd/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace oosdsd {

/// Where load_dataset takes depth from.
enum class DepthSource {
  raw,               ///< depth/<id>.png, unnormalized
  normalized_cache,  ///< depth_norm/<id>.bin, error when missing
  prefer_cache,      ///< cache when present, raw otherwise
};

struct LoadOptions {
  DepthSource depth = DepthSource::raw;
  /// Compare files against the checksums in dataset.json when it exists.
  bool verify_checksums = true;
};

/// Loads every record under root, sorted by image_id. Each record is validated.
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& root, const LoadOptions& opts = {});

/// Writes records in the on-disk layout plus dataset.json. Depth must be raw.
void save_dataset(const std::filesystem::path& root, const std::vector<DatasetRecord>& records);

/// Writes depth_norm/<id>.bin for each record; depth must be normalized.
void write_depth_cache(const std::filesystem::path& root, const std::vector<DatasetRecord>& records);

/// Image ids listed under images/, sorted.
std::vector<std::string> list_image_ids(const std::filesystem::path& root);

/// "cls x y w h" per line; blank lines and '#' comments are skipped.
std::vector<OOSInstance> parse_labels(std::istream& in, const std::string& source = "<labels>");
std::string format_labels(const std::vector<OOSInstance>& boxes);

struct FoldSplit {
  int fold_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
};

/// k contiguous test chunks of a seeded permutation (sizes differ by at most one); the
/// validation set takes round(val_fraction * rest) ids of the remainder. Lists are sorted.
std::vector<FoldSplit> make_folds(std::vector<std::string> ids, int k = 5, double val_fraction = 0.15,
                                  std::uint64_t seed = 0);

/// Records whose id is in ids, in ids order. Throws ValidationError for unknown ids.
std::vector<DatasetRecord> select_records(const std::vector<DatasetRecord>& records,
                                          const std::vector<std::string>& ids);

} // namespace oosdsd
