#include "oosdsd/ablation.hpp"

#include "oosdsd/errors.hpp"
#include "oosdsd/json_io.hpp"

#include <chrono>

namespace oosdsd {

const std::vector<std::string>& ablation_grid_names() {
  static const std::vector<std::string> names{"branches", "losses", "depthnorm"};
  return names;
}

std::vector<AblationVariant> ablation_grid(std::string_view grid) {
  if (grid == "branches")
    return {
        {"det", {"net.segment=false", "net.depth=false"}},
        {"det+seg", {"net.segment=true", "net.depth=false"}},
        {"det+dep", {"net.segment=false", "net.depth=true"}},
        {"det+seg+dep", {"net.segment=true", "net.depth=true"}},
    };
  if (grid == "losses") {
    std::vector<AblationVariant> v;
    for (const char* dep : {"mse", "l1"})
      for (const char* seg : {"bce", "mse", "l1", "dice"})
        v.push_back({std::string("seg_") + seg + "+dep_" + dep,
                     {"net.segment=true", "net.depth=true", std::string("loss.seg=") + seg,
                      std::string("loss.depth=") + dep}});
    return v;
  }
  if (grid == "depthnorm") {
    const std::vector<std::string> raw{"data.normalize_depth=false", "loss.require_normalized_depth=false"};
    const std::vector<std::string> norm{"data.normalize_depth=true", "loss.require_normalized_depth=true"};
    auto with = [](std::vector<std::string> a, const std::vector<std::string>& b) {
      a.insert(a.end(), b.begin(), b.end());
      return a;
    };
    const std::vector<std::string> no_seg{"net.segment=false", "net.depth=true"};
    const std::vector<std::string> full{"net.segment=true", "net.depth=true"};
    return {
        {"noseg+raw", with(no_seg, raw)},
        {"full+raw", with(full, raw)},
        {"noseg+norm", with(no_seg, norm)},
        {"full+norm", with(full, norm)},
    };
  }
  throw ConfigError("unknown ablation grid '" + std::string(grid) + "' (expected branches, losses or depthnorm)");
}

std::size_t AblationResult::failures() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += !e.error.empty();
  return n;
}

AblationResult run_ablation(const std::vector<DatasetRecord>& raw_records, const RunConfig& base,
                            std::string_view grid, const std::vector<int>& folds,
                            const std::filesystem::path& out_dir, const TrainHooks& hooks,
                            const std::function<void(std::size_t, const AblationVariant&)>& on_variant) {
  for (const auto& r : raw_records)
    if (r.depth.normalized) throw ValidationError("ablation needs raw depth; record " + r.image_id + " is normalized");
  AblationResult res;
  res.grid = std::string(grid);
  const auto variants = ablation_grid(grid);
  // Resolve every config first so a bad override fails before any training.
  std::vector<RunConfig> configs;
  for (const auto& v : variants) {
    RunConfig c = base;
    apply_overrides(c, v.overrides);
    c.validate();
    configs.push_back(c);
  }
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (on_variant) on_variant(i, variants[i]);
    AblationEntry e;
    e.variant = variants[i];
    e.config = configs[i];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      e.report = run_cross_validation(raw_records, e.config, folds,
                                      out_dir.empty() ? out_dir : out_dir / e.variant.name, hooks);
    } catch (const Error& err) {
      e.error = err.what();
    }
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.entries.push_back(std::move(e));
    if (!out_dir.empty()) write_json_file(out_dir / "ablation.json", to_json(res));
  }
  return res;
}

nlohmann::json to_json(const AblationResult& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    nlohmann::json j{{"name", e.variant.name},
                     {"overrides", e.variant.overrides},
                     {"config", to_json(e.config)},
                     {"seconds", e.seconds}};
    if (e.error.empty()) j["report"] = to_json(e.report);
    else j["error"] = e.error;
    entries.push_back(std::move(j));
  }
  return {{"grid", r.grid}, {"entries", entries}};
}

AblationResult ablation_result_from_json(const nlohmann::json& j) {
  AblationResult r;
  try {
    r.grid = j.at("grid").get<std::string>();
    for (const auto& x : j.at("entries")) {
      AblationEntry e;
      e.variant.name = x.at("name").get<std::string>();
      e.variant.overrides = x.at("overrides").get<std::vector<std::string>>();
      e.config = config_from_json(x.at("config"));
      e.seconds = x.value("seconds", 0.0);
      if (x.contains("error")) e.error = x.at("error").get<std::string>();
      else e.report = cv_report_from_json(x.at("report"));
      r.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed ablation summary: ") + e.what());
  }
  return r;
}

} // namespace oosdsd
