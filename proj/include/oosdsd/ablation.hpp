#pragma once

#include "oosdsd/trainer.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace oosdsd {

/// One configuration of an ablation grid, expressed as config overrides on a base run.
struct AblationVariant {
  std::string name;
  std::vector<std::string> overrides;
};

/// Known grids: "branches" (4 head subsets), "losses" (4 seg x 2 depth losses) and
/// "depthnorm" (with/without the seg head x raw/normalized depth). Rows follow the table order
/// used in reports. Throws ConfigError for an unknown grid.
std::vector<AblationVariant> ablation_grid(std::string_view grid);
const std::vector<std::string>& ablation_grid_names();

struct AblationEntry {
  AblationVariant variant;
  RunConfig config;
  CVReport report;
  double seconds = 0.0;
  /// Non-empty when the run failed; the remaining variants still run.
  std::string error;
};

struct AblationResult {
  std::string grid;
  std::vector<AblationEntry> entries;

  std::size_t failures() const;
};

/// Runs every variant of the grid through cross-validation on the listed folds. Each variant
/// writes its artifacts to out_dir/<variant name> and the grid summary goes to
/// out_dir/ablation.json (both skipped when out_dir is empty). on_variant is called before
/// each run with its index.
AblationResult run_ablation(const std::vector<DatasetRecord>& raw_records, const RunConfig& base,
                            std::string_view grid, const std::vector<int>& folds = {},
                            const std::filesystem::path& out_dir = {}, const TrainHooks& hooks = {},
                            const std::function<void(std::size_t, const AblationVariant&)>& on_variant = {});

nlohmann::json to_json(const AblationResult& r);
AblationResult ablation_result_from_json(const nlohmann::json& j);

} // namespace oosdsd
