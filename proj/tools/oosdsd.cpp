// oosdsd command-line entry point: dataset generation, normalization, training, evaluation,
// prediction, ablation grids and report rendering.

#include "oosdsd/ablation.hpp"
#include "oosdsd/checkpoint.hpp"
#include "oosdsd/config.hpp"
#include "oosdsd/dataset.hpp"
#include "oosdsd/depthnorm.hpp"
#include "oosdsd/errors.hpp"
#include "oosdsd/image_io.hpp"
#include "oosdsd/json_io.hpp"
#include "oosdsd/render.hpp"
#include "oosdsd/report.hpp"
#include "oosdsd/synthgen.hpp"
#include "oosdsd/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oosdsd;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum ExitCode { kOk = 0, kRuntime = 1, kUsage = 2, kValidation = 3 };

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t default_seed() {
  const char* env = std::getenv("OOSDSD_SEED");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const auto v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("OOSDSD_SEED is not an unsigned integer: ") + env);
  return v;
}

/// Records one invocation; written once, next to the primary output.
struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string started = utc_now();
  json config = nullptr;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> artifacts;
  json extra = json::object();
  /// Set once the output location is known, so failed runs still leave a manifest.
  fs::path path;

  void add(const fs::path& p) { artifacts.push_back(p.string()); }

  void write(const std::string& status = "ok", const std::string& error = "") const {
    if (path.empty()) return;
    json j{{"command", command},
           {"status", status},
           {"argv", argv},
           {"tool_version", kToolVersion},
           {"started", started},
           {"finished", utc_now()},
           {"config", config},
           {"seed", seed ? json(*seed) : json(nullptr)},
           {"artifacts", artifacts}};
    if (!error.empty()) j["error"] = error;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    write_json_file(path, j);
  }
};

/// Refuses to reuse a non-empty output directory unless overwrite is set, in which case it is cleared.
void prepare_out_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ValidationError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!overwrite) throw ValidationError(dir.string() + " is not empty (pass --overwrite to replace it)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

void prepare_out_file(const fs::path& file, bool overwrite) {
  if (fs::exists(file) && !overwrite)
    throw ValidationError(file.string() + " already exists (pass --overwrite to replace it)");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

fs::path with_suffix(fs::path p, const std::string& ext) { return p.replace_extension(ext); }

/// Profile, then config file, then key=value overrides, then explicit flags.
struct ConfigOptions {
  std::string profile;
  std::string config_file;
  std::vector<std::string> overrides;
  bool no_augment = false;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* app, const std::string& default_profile) {
    profile = default_profile;
    app->add_option("--profile", profile, "Base settings: paper or desk")->capture_default_str();
    app->add_option("--config", config_file, "Config file of 'key = value' lines")->check(CLI::ExistingFile);
    app->add_option("--set", overrides, "Override a config key, e.g. --set loss.seg=bce (repeatable)");
    app->add_flag("--no-augment", no_augment, "Disable training augmentation");
    app->add_option("--seed", seed, "Seed (default: OOSDSD_SEED or 0)");
  }

  RunConfig resolve() const {
    RunConfig cfg = profile_config(profile);
    cfg.train.seed = default_seed();
    if (!config_file.empty()) cfg = load_config_file(config_file, cfg);
    apply_overrides(cfg, overrides);
    if (no_augment) cfg.augment_enabled = false;
    if (seed) cfg.train.seed = *seed;
    cfg.validate();
    return cfg;
  }
};

std::vector<DatasetRecord> load_for_config(const fs::path& root, const RunConfig& cfg) {
  LoadOptions o;
  o.depth = cfg.data.normalize_depth ? DepthSource::prefer_cache : DepthSource::raw;
  return depth_for_training(load_dataset(root, o), cfg);
}

std::vector<int> parse_folds(const std::string& text, int k) {
  if (text == "all") return {};
  try {
    std::size_t used = 0;
    const int f = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    if (f < 0 || f >= k) throw ConfigError("--fold must be in 0-" + std::to_string(k - 1) + " or 'all'");
    return {f};
  } catch (const std::logic_error&) {
    throw ConfigError("--fold must be an integer or 'all', got '" + text + "'");
  }
}

TrainHooks progress_hooks(bool quiet, const std::string& prefix = "") {
  TrainHooks h;
  if (quiet) return h;
  h.on_epoch = [prefix](const EpochRecord& e) {
    std::fprintf(stderr, "%sepoch %d lr %.5f loss %.4f", prefix.c_str(), e.epoch, e.lr, e.train.total);
    if (e.val) std::fprintf(stderr, " | val mAP %.3f loss %.4f", e.val->map, e.val->loss.total);
    if (e.fitness) std::fprintf(stderr, " fitness %.4f", *e.fitness);
    std::fprintf(stderr, " (%.1fs)\n", e.seconds);
    return true;
  };
  return h;
}

/// Training curves for one history.json: losses and validation detection metrics.
std::vector<fs::path> render_history(const fs::path& history, const fs::path& out_dir, const std::string& stem) {
  const auto j = read_json_file(history);
  PlotSeries train_loss{"train loss", {0.12f, 0.35f, 0.75f}, {}, {}};
  PlotSeries val_loss{"val loss", {0.90f, 0.45f, 0.10f}, {}, {}};
  PlotSeries val_map{"val map", {0.15f, 0.60f, 0.25f}, {}, {}};
  PlotSeries val_iou{"val seg iou", {0.55f, 0.25f, 0.70f}, {}, {}};
  for (const auto& e : j.at("epochs")) {
    const double x = e.at("epoch").get<double>();
    train_loss.x.push_back(x);
    train_loss.y.push_back(e.at("train").at("total").get<double>());
    if (!e.at("val").is_null()) {
      const auto& v = e.at("val");
      val_loss.x.push_back(x);
      val_loss.y.push_back(v.at("loss").at("total").get<double>());
      val_map.x.push_back(x);
      val_map.y.push_back(v.at("map").get<double>());
      if (!v.at("seg_iou").is_null()) {
        val_iou.x.push_back(x);
        val_iou.y.push_back(v.at("seg_iou").get<double>());
      }
    }
  }
  std::vector<fs::path> out;
  const auto loss_png = out_dir / (stem + "_loss.png");
  io::write_png(loss_png, plot_lines({train_loss, val_loss}, "loss"));
  out.push_back(loss_png);
  if (!val_map.x.empty()) {
    std::vector<PlotSeries> s{val_map};
    if (!val_iou.x.empty()) s.push_back(val_iou);
    const auto m_png = out_dir / (stem + "_metrics.png");
    io::write_png(m_png, plot_lines(s, "validation"));
    out.push_back(m_png);
  }
  return out;
}

json instances_json(const std::vector<OOSInstance>& v) {
  json a = json::array();
  for (const auto& b : v)
    a.push_back({{"cls", std::string(to_string(b.cls))}, {"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"c", b.c}});
  return a;
}

std::vector<OOSInstance> instances_from_json(const json& a) {
  std::vector<OOSInstance> v;
  for (const auto& b : a) {
    OOSInstance i;
    const auto cls = b.at("cls").get<std::string>();
    i.cls = cls == "front" ? OOSClass::front : OOSClass::normal;
    i.x = b.at("x").get<double>();
    i.y = b.at("y").get<double>();
    i.w = b.at("w").get<double>();
    i.h = b.at("h").get<double>();
    i.c = b.at("c").get<double>();
    v.push_back(i);
  }
  return v;
}

/// Network, run config and (optional) calibrated filter restored from a checkpoint.
struct LoadedModel {
  Checkpoint ckpt;
  RunConfig cfg;
  std::optional<AspectFilterConfig> filter;
  std::unique_ptr<Network<float>> net;
};

// Explicit --fold wins; otherwise the fold the checkpoint was trained on, if recorded.
std::optional<int> resolve_fold(std::optional<int> requested, const json& meta) {
  if (requested) return requested;
  if (meta.contains("fold")) return meta.at("fold").get<int>();
  return std::nullopt;
}

LoadedModel load_model(const fs::path& path, const std::vector<std::string>& overrides) {
  LoadedModel m;
  m.ckpt = load_checkpoint(path);
  if (!m.ckpt.meta.contains("config")) throw ValidationError(path.string() + " carries no run config");
  m.cfg = config_from_json(m.ckpt.meta.at("config"));
  apply_overrides(m.cfg, overrides);
  m.cfg.net = m.ckpt.net;
  m.cfg.validate();
  if (m.cfg.eval.aspect_filter && m.ckpt.meta.contains("aspect_filter"))
    m.filter = aspect_filter_from_json(m.ckpt.meta.at("aspect_filter"));
  m.net = std::make_unique<Network<float>>(m.ckpt.net, 0);
  restore(*m.net, m.ckpt);
  return m;
}

/// Ids of the requested split, using the checkpoint's fold when not given explicitly.
std::vector<std::string> split_ids(const std::vector<DatasetRecord>& records, const RunConfig& cfg,
                                   const std::string& split, std::optional<int> fold) {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.image_id);
  if (split == "all") return ids;
  if (!fold) throw ValidationError("checkpoint records no fold; pass --fold or use --split all");
  const auto folds = make_folds(ids, cfg.data.folds, cfg.data.val_fraction, cfg.data.fold_seed);
  if (*fold < 0 || *fold >= int(folds.size())) throw ConfigError("fold index out of range");
  const auto& f = folds[std::size_t(*fold)];
  if (split == "train") return f.train_ids;
  if (split == "val") return f.val_ids;
  return f.test_ids;
}

// ---- subcommands -------------------------------------------------------------------------------

struct GenSynthArgs {
  int n = 8;
  fs::path out;
  std::optional<std::uint64_t> seed;
  int size = 640;
  bool random_depth_scale = false;
  bool overwrite = false;
};

int cmd_gen_synth(const GenSynthArgs& a, Manifest& man) {
  if (a.n < 1) throw ConfigError("--n must be at least 1");
  const auto seed = a.seed ? *a.seed : default_seed();
  prepare_out_dir(a.out, a.overwrite);
  man.path = a.out / "run_manifest.json";
  SynthOptions o;
  o.image_size = a.size;
  o.random_depth_scale = a.random_depth_scale;
  man.seed = seed;
  man.extra["options"] = {{"n", a.n}, {"size", a.size}, {"random_depth_scale", a.random_depth_scale}};
  const auto recs = generate_dataset(a.n, seed, a.out, o);
  man.add(a.out / "dataset.json");
  std::printf("wrote %zu scenes to %s\n", recs.size(), a.out.string().c_str());
  man.write();
  return kOk;
}

struct NormalizeArgs {
  fs::path root;
  fs::path report;
  bool overwrite = false;
};

int cmd_normalize(const NormalizeArgs& a, Manifest& man) {
  const auto cache = a.root / "depth_norm";
  if (fs::exists(cache) && !fs::is_empty(cache)) {
    if (!a.overwrite) throw ValidationError(cache.string() + " already exists (pass --overwrite to rebuild it)");
    fs::remove_all(cache);
  }
  const fs::path report = a.report.empty() ? cache / "report.json" : a.report;
  if (!a.report.empty()) prepare_out_file(report, a.overwrite);
  fs::create_directories(cache);
  man.path = cache / "run_manifest.json";
  LoadOptions o;
  o.depth = DepthSource::raw;
  const auto records = load_dataset(a.root, o);
  const auto result = normalize_dataset(records);
  write_depth_cache(a.root, result.records);
  auto j = to_json(result.report);
  j["kind"] = "normalization";
  j["root"] = a.root.string();
  write_json_file(report, j);
  write_text_file(with_suffix(report, ".md"), normalization_markdown(result.report));
  man.add(cache);
  man.add(report);
  std::printf("normalized %zu of %zu records; report %s\n", result.records.size(), records.size(),
              report.string().c_str());
  man.write();
  return kOk;
}

struct TrainArgs {
  fs::path root, out;
  std::string fold = "all";
  std::string pretrained;
  bool overwrite = false, quiet = false;
  ConfigOptions config;
};

int cmd_train(const TrainArgs& a, Manifest& man) {
  RunConfig cfg = a.config.resolve();
  if (!a.pretrained.empty()) cfg.train.pretrained = a.pretrained;
  const auto folds = parse_folds(a.fold, cfg.data.folds);
  prepare_out_dir(a.out, a.overwrite);
  man.path = a.out / "run_manifest.json";
  man.config = to_json(cfg);
  man.seed = cfg.train.seed;
  write_config_file(a.out / "config.cfg", cfg);
  man.add(a.out / "config.cfg");

  const auto records = load_for_config(a.root, cfg);
  const auto report = run_cross_validation(records, cfg, folds, a.out, progress_hooks(a.quiet));
  write_text_file(a.out / "cv_report.md", cv_report_markdown(report, cfg.eval.iou_threshold));
  man.add(a.out / "cv_report.json");
  man.add(a.out / "cv_report.md");
  for (const auto& f : report.folds) {
    const auto dir = a.out / ("fold_" + std::to_string(f.fold));
    man.add(dir / "best.ckpt");
    man.add(dir / "history.json");
    man.add(dir / "test_metrics.json");
    for (const auto& p : render_history(dir / "history.json", dir, "curves")) man.add(p);
  }
  std::printf("%s", cv_report_markdown(report, cfg.eval.iou_threshold).c_str());
  man.write();
  return kOk;
}

struct EvalArgs {
  fs::path checkpoint, root, report;
  std::string split = "test";
  std::optional<int> fold;
  std::vector<std::string> overrides;
  bool overwrite = false;
};

int cmd_eval(const EvalArgs& a, Manifest& man) {
  prepare_out_file(a.report, a.overwrite);
  man.path = a.report.string() + ".manifest.json";
  auto model = load_model(a.checkpoint, a.overrides);
  const auto& cfg = model.cfg;
  const std::optional<int> fold = resolve_fold(a.fold, model.ckpt.meta);
  const auto records = load_for_config(a.root, cfg);
  const auto ids = split_ids(records, cfg, a.split, fold);
  const auto prepared = prepare_records(select_records(records, ids), cfg.input_size());
  std::vector<const DatasetRecord*> ptr;
  for (const auto& r : prepared) ptr.push_back(&r);
  const auto m = evaluate_model(*model.net, ptr, cfg, model.filter ? &*model.filter : nullptr);

  json j{{"kind", "eval"},
         {"checkpoint", a.checkpoint.string()},
         {"root", a.root.string()},
         {"split", a.split},
         {"fold", fold ? json(*fold) : json(nullptr)},
         {"iou_threshold", cfg.eval.iou_threshold},
         {"metrics", to_json(m)},
         {"config", to_json(cfg)}};
  write_json_file(a.report, j);
  const auto table = metrics_table({{a.checkpoint.parent_path().filename().string(), m}}, cfg.eval.iou_threshold);
  write_text_file(with_suffix(a.report, ".md"), table);
  man.config = to_json(cfg);
  man.seed = cfg.train.seed;
  man.add(a.report);
  man.add(with_suffix(a.report, ".md"));
  std::printf("%s", table.c_str());
  man.write();
  return kOk;
}

struct PredictArgs {
  fs::path checkpoint, root, out;
  std::string split = "all";
  std::optional<int> fold;
  std::vector<std::string> ids;
  std::vector<std::string> overrides;
  bool overwrite = false;
};

// Image file of a record; datasets may hold png or jpg.
fs::path image_file(const fs::path& root, const std::string& id) {
  for (const char* ext : {".png", ".jpg", ".jpeg"})
    if (auto p = root / "images" / (id + ext); fs::exists(p)) return fs::absolute(p);
  return fs::absolute(root / "images" / (id + ".png"));
}

int cmd_predict(const PredictArgs& a, Manifest& man) {
  prepare_out_dir(a.out, a.overwrite);
  man.path = a.out / "run_manifest.json";
  auto model = load_model(a.checkpoint, a.overrides);
  const auto& cfg = model.cfg;
  const auto records = load_for_config(a.root, cfg);
  std::vector<std::string> ids = a.ids;
  if (ids.empty()) {
    const std::optional<int> fold = resolve_fold(a.fold, model.ckpt.meta);
    ids = split_ids(records, cfg, a.split, fold);
  }
  man.config = to_json(cfg);
  for (const auto& rec : select_records(records, ids)) {
    const auto p = predict_record(*model.net, rec, cfg, model.filter ? &*model.filter : nullptr);
    json j{{"kind", "prediction"},
           {"image_id", rec.image_id},
           {"image", image_file(a.root, rec.image_id).string()},
           {"rows", rec.rows()},
           {"cols", rec.cols()},
           {"boxes", instances_json(p.boxes)},
           {"gt_boxes", instances_json(rec.boxes)}};
    if (p.seg_prob.size()) {
      Grid<std::uint8_t> g = (p.seg_prob * 255.0).round().cwiseMax(0.0).cwiseMin(255.0).cast<std::uint8_t>();
      const auto f = a.out / (rec.image_id + "_seg.png");
      io::write_png_gray8(f, g);
      j["seg"] = f.filename().string();
      man.add(f);
    }
    if (p.depth.size()) {
      DepthMap d;
      d.pixels = p.depth;
      d.normalized = cfg.data.normalize_depth;
      const auto f = a.out / (rec.image_id + "_depth.bin");
      io::write_depth_bin(f, d);
      j["depth"] = f.filename().string();
      man.add(f);
    }
    const auto jf = a.out / (rec.image_id + ".json");
    write_json_file(jf, j);
    man.add(jf);
    std::printf("%s: %zu boxes\n", rec.image_id.c_str(), p.boxes.size());
  }
  man.write();
  return kOk;
}

struct AblateArgs {
  std::vector<std::string> grids;
  fs::path root, out;
  std::string fold = "0";
  bool overwrite = false, quiet = false;
  ConfigOptions config;
};

int cmd_ablate(const AblateArgs& a, Manifest& man) {
  RunConfig base = a.config.resolve();
  const auto folds = parse_folds(a.fold, base.data.folds);
  std::vector<std::string> grids;
  for (const auto& g : a.grids) {
    if (g == "all") grids.insert(grids.end(), ablation_grid_names().begin(), ablation_grid_names().end());
    else grids.push_back(g);
  }
  for (const auto& g : grids) ablation_grid(g);
  prepare_out_dir(a.out, a.overwrite);
  man.path = a.out / "run_manifest.json";
  man.config = to_json(base);
  man.seed = base.train.seed;
  man.extra["grids"] = grids;

  LoadOptions o;
  o.depth = DepthSource::raw;
  const auto records = load_dataset(a.root, o);
  std::size_t failures = 0;
  for (const auto& g : grids) {
    const auto dir = a.out / g;
    const auto res = run_ablation(records, base, g, folds, dir, progress_hooks(a.quiet, "  "),
                                  [&](std::size_t i, const AblationVariant& v) {
                                    if (!a.quiet) std::fprintf(stderr, "[%s %zu] %s\n", g.c_str(), i + 1, v.name.c_str());
                                  });
    failures += res.failures();
    const auto md = ablation_markdown(res);
    write_text_file(dir / "ablation.md", md);
    man.add(dir / "ablation.json");
    man.add(dir / "ablation.md");
    std::printf("%s\n", md.c_str());
  }
  man.extra["failed_runs"] = failures;
  if (failures) {
    man.write("failed", std::to_string(failures) + " ablation run(s) failed");
    return kRuntime;
  }
  man.write();
  return kOk;
}

struct ReportArgs {
  std::vector<fs::path> runs;
  fs::path out;
  int max_panels = 8;
  bool overwrite = false;
};

int cmd_report(const ReportArgs& a, Manifest& man) {
  for (const auto& r : a.runs)
    if (!fs::exists(r)) throw ValidationError("run artifact " + r.string() + " does not exist");
  prepare_out_dir(a.out, a.overwrite);
  man.path = a.out / "run_manifest.json";
  const auto fig = a.out / "figures";
  fs::create_directories(fig);
  std::string md = "# Run report\n\n";
  int n_fig = 0, n_panels = 0;

  auto rel = [&](const fs::path& p) { return fs::relative(p, a.out).generic_string(); };
  std::vector<fs::path> files;
  for (const auto& r : a.runs) {
    if (fs::is_regular_file(r)) {
      files.push_back(r);
      continue;
    }
    for (const auto& e : fs::recursive_directory_iterator(r))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<std::pair<std::string, EvalMetrics>> evals;
  double eval_thr = 0.5;
  for (const auto& f : files) {
    const auto name = f.filename().string();
    if (name == "run_manifest.json" || name.ends_with(".manifest.json") || name == "dataset.json") continue;
    const auto j = read_json_file(f);
    if (name == "ablation.json") {
      const auto res = ablation_result_from_json(j);
      md += "## Ablation: " + res.grid + "\n\nSource: `" + f.string() + "`\n\n" + ablation_markdown(res) + "\n";
    } else if (name == "cv_report.json") {
      const auto cv = cv_report_from_json(j);
      double thr = 0.5;
      const auto cfg_file = f.parent_path() / "config.cfg";
      if (fs::exists(cfg_file)) thr = load_config_file(cfg_file).eval.iou_threshold;
      md += "## Cross-validation\n\nSource: `" + f.string() + "`\n\n" + cv_report_markdown(cv, thr) + "\n";
    } else if (name == "history.json") {
      const std::string stem = "curves_" + std::to_string(n_fig++);
      md += "## Training curves\n\nSource: `" + f.string() + "`\n\n";
      for (const auto& p : render_history(f, fig, stem)) {
        md += "![" + p.stem().string() + "](" + rel(p) + ")\n\n";
        man.add(p);
      }
    } else if (j.is_object() && j.value("kind", "") == "eval") {
      evals.emplace_back(f.parent_path().filename().string() + "/" + f.stem().string(),
                         eval_metrics_from_json(j.at("metrics")));
      eval_thr = j.value("iou_threshold", 0.5);
    } else if (j.is_object() && j.value("kind", "") == "normalization") {
      md += "## Depth normalization\n\nSource: `" + f.string() + "`\n\n" +
            normalization_markdown(normalization_report_from_json(j)) + "\n";
    } else if (j.is_object() && j.value("kind", "") == "prediction") {
      if (n_panels >= a.max_panels) continue;
      const auto image = io::read_image(j.at("image").get<std::string>());
      const auto preds = instances_from_json(j.at("boxes"));
      const auto gts = instances_from_json(j.at("gt_boxes"));
      DepthGrid seg, depth;
      if (j.contains("seg")) seg = io::read_png_gray8(f.parent_path() / j.at("seg").get<std::string>()).cast<double>() / 255.0;
      if (j.contains("depth")) depth = io::read_depth_bin(f.parent_path() / j.at("depth").get<std::string>()).pixels;
      double lo = 0, hi = 1;
      if (depth.size()) {
        lo = depth.minCoeff();
        hi = depth.maxCoeff();
        if (!(hi > lo)) hi = lo + 1;
      }
      const auto panel = qualitative_panel(image, preds, &gts, seg, depth, lo, hi);
      const auto p = fig / ("panel_" + j.at("image_id").get<std::string>() + ".png");
      io::write_png(p, panel);
      man.add(p);
      if (n_panels == 0) md += "## Qualitative results\n\nPredicted normal OOS in red, front OOS in yellow, ground truth in green.\n\n";
      md += "![" + j.at("image_id").get<std::string>() + "](" + rel(p) + ")\n\n";
      ++n_panels;
    }
  }
  if (!evals.empty()) md += "## Evaluation\n\n" + metrics_table(evals, eval_thr) + "\n";
  write_text_file(a.out / "report.md", md);
  man.add(a.out / "report.md");
  std::printf("wrote %s\n", (a.out / "report.md").string().c_str());
  man.write();
  return kOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Out-of-stock detection with auxiliary segmentation and depth"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.fallthrough(false);

  GenSynthArgs gs;
  auto* c_gen = app.add_subcommand("gen-synth", "Generate a synthetic shelf dataset");
  c_gen->add_option("--n", gs.n, "Number of scenes")->required();
  c_gen->add_option("--out", gs.out, "Dataset root to create")->required();
  c_gen->add_option("--seed", gs.seed, "Seed (default: OOSDSD_SEED or 0)");
  c_gen->add_option("--size", gs.size, "Image side in pixels")->capture_default_str();
  c_gen->add_flag("--random-depth-scale", gs.random_depth_scale, "Give each scene a random global depth scale");
  c_gen->add_flag("--overwrite", gs.overwrite, "Replace a non-empty output directory");

  NormalizeArgs na;
  auto* c_norm = app.add_subcommand("normalize", "Normalize depth maps and write the depth_norm cache");
  c_norm->add_option("--root", na.root, "Dataset root")->required()->check(CLI::ExistingDirectory);
  c_norm->add_option("--report", na.report, "Per-record factor report (JSON; a .md copy is written alongside)");
  c_norm->add_flag("--overwrite", na.overwrite, "Rebuild an existing cache/report");

  TrainArgs ta;
  auto* c_train = app.add_subcommand("train", "Cross-validated training");
  c_train->add_option("--root", ta.root, "Dataset root")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--out", ta.out, "Output directory")->required();
  c_train->add_option("--fold", ta.fold, "Fold index 0-4 or 'all'")->capture_default_str();
  c_train->add_option("--pretrained", ta.pretrained, "Checkpoint providing blocks 0-22")->check(CLI::ExistingFile);
  c_train->add_flag("--overwrite", ta.overwrite, "Replace a non-empty output directory");
  c_train->add_flag("--quiet", ta.quiet, "No per-epoch progress");
  ta.config.add_to(c_train, "paper");

  EvalArgs ea;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  c_eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--root", ea.root, "Dataset root")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--split", ea.split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  c_eval->add_option("--fold", ea.fold, "Fold defining the split (default: the checkpoint's)");
  c_eval->add_option("--report", ea.report, "Report path (JSON; a .md table is written alongside)")->required();
  c_eval->add_option("--set", ea.overrides, "Override an eval.* key, e.g. --set eval.iou_threshold=0.75");
  c_eval->add_flag("--overwrite", ea.overwrite, "Replace an existing report");

  PredictArgs pa;
  auto* c_pred = app.add_subcommand("predict", "Write per-image predictions (boxes, seg, depth)");
  c_pred->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c_pred->add_option("--root", pa.root, "Dataset root")->required()->check(CLI::ExistingDirectory);
  c_pred->add_option("--out", pa.out, "Output directory")->required();
  c_pred->add_option("--split", pa.split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  c_pred->add_option("--fold", pa.fold, "Fold defining the split (default: the checkpoint's)");
  c_pred->add_option("--id", pa.ids, "Image id to predict (repeatable; overrides --split)");
  c_pred->add_option("--set", pa.overrides, "Override an eval.* key");
  c_pred->add_flag("--overwrite", pa.overwrite, "Replace a non-empty output directory");

  AblateArgs aa;
  auto* c_abl = app.add_subcommand("ablate", "Run an ablation grid");
  c_abl->add_option("--grid", aa.grids, "branches, losses, depthnorm or all (repeatable)")
      ->required()
      ->check(CLI::IsMember({"branches", "losses", "depthnorm", "all"}));
  c_abl->add_option("--root", aa.root, "Dataset root (raw depth is read)")->required()->check(CLI::ExistingDirectory);
  c_abl->add_option("--out", aa.out, "Output directory")->required();
  c_abl->add_option("--fold", aa.fold, "Fold index 0-4 or 'all'")->capture_default_str();
  c_abl->add_flag("--overwrite", aa.overwrite, "Replace a non-empty output directory");
  c_abl->add_flag("--quiet", aa.quiet, "No per-epoch progress");
  aa.config.add_to(c_abl, "desk");

  ReportArgs ra;
  auto* c_rep = app.add_subcommand("report", "Render tables, curves and panels from run artifacts");
  c_rep->add_option("--run", ra.runs, "Run directory or artifact file (repeatable)")->required();
  c_rep->add_option("--out", ra.out, "Output directory")->required();
  c_rep->add_option("--max-panels", ra.max_panels, "Qualitative panels to render")->capture_default_str();
  c_rep->add_flag("--overwrite", ra.overwrite, "Replace a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() == 0) return kOk;
    std::cerr << "\n" << app.help();
    return kUsage;
  }

  Manifest man;
  for (int i = 0; i < argc; ++i) man.argv.emplace_back(argv[i]);
  const std::vector<std::pair<CLI::App*, std::function<int()>>> commands{
      {c_gen, [&] { return cmd_gen_synth(gs, man); }},  {c_norm, [&] { return cmd_normalize(na, man); }},
      {c_train, [&] { return cmd_train(ta, man); }},    {c_eval, [&] { return cmd_eval(ea, man); }},
      {c_pred, [&] { return cmd_predict(pa, man); }},   {c_abl, [&] { return cmd_ablate(aa, man); }},
      {c_rep, [&] { return cmd_report(ra, man); }},
  };
  for (const auto& [sub, run] : commands) {
    if (!sub->parsed()) continue;
    man.command = sub->get_name();
    auto fail = [&](const std::exception& e, int code) {
      std::cerr << "error: " << e.what() << "\n";
      try {
        man.write("failed", e.what());
      } catch (const std::exception&) {
      }
      return code;
    };
    try {
      return run();
    } catch (const ValidationError& e) {
      return fail(e, kValidation);
    } catch (const std::exception& e) {
      return fail(e, kRuntime);
    }
  }
  std::cerr << app.help();
  return kUsage;
}
