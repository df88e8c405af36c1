#include "oosdsd/config.hpp"

#include "oosdsd/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace oosdsd {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (patience < 1) throw ConfigError("train.patience must be at least 1");
  if (val_interval < 1) throw ConfigError("train.val_interval must be at least 1");
  if (optimizer != "sgd_nesterov") throw ConfigError("train.optimizer must be sgd_nesterov");
  if (!(lr0 > 0) || !(lr_final >= 0)) throw ConfigError("learning rates must be positive");
  if (!(momentum >= 0 && momentum < 1) || !(warmup_momentum >= 0 && warmup_momentum < 1))
    throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(warmup_epochs >= 0)) throw ConfigError("train.warmup_epochs must be non-negative");
  if (!(grad_clip >= 0)) throw ConfigError("train.grad_clip must be non-negative");
}

void EvalConfig::validate() const {
  if (!(iou_threshold > 0 && iou_threshold <= 1)) throw ConfigError("eval.iou_threshold must lie in (0, 1]");
  if (!(conf_threshold >= 0 && conf_threshold < 1)) throw ConfigError("eval.conf_threshold must lie in [0, 1)");
  if (!(nms_iou > 0 && nms_iou <= 1)) throw ConfigError("eval.nms_iou must lie in (0, 1]");
  if (max_det < 1) throw ConfigError("eval.max_det must be at least 1");
}

void RunConfig::validate() const {
  net.validate();
  loss.validate();
  augment.validate();
  train.validate();
  eval.validate();
  if (data.folds < 2) throw ConfigError("data.folds must be at least 2");
  if (!(data.val_fraction >= 0 && data.val_fraction < 1)) throw ConfigError("data.val_fraction must lie in [0, 1)");
  if (net.depth && !data.normalize_depth && loss.require_normalized_depth)
    throw ConfigError("training on raw depth needs loss.require_normalized_depth = false");
  if (net.num_classes != kNumOOSClasses) throw ConfigError("net.num_classes must be 2 for OOS detection");
}

RunConfig profile_config(std::string_view name) {
  RunConfig c;
  if (name == "paper") {
    c.profile = "paper";
    c.augment.target_size = 1280;
    c.train.batch_size = 8;
    c.train.epochs = 1000;
    c.net.width_multiple = 0.5;
  } else if (name == "desk") {
    c.profile = "desk";
    c.augment.target_size = 320;
    c.train.batch_size = 2;
    c.train.epochs = 100;
    c.train.patience = 30;
    c.net.width_multiple = 0.25;
  } else {
    throw ConfigError("unknown profile '" + std::string(name) + "' (expected paper or desk)");
  }
  return c;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

[[noreturn]] void bad(std::string_view key, std::string_view value, const char* what) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + ": expected " + what);
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, "a number");
  return out;
}
int parse_int(std::string_view key, std::string_view v) {
  int out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, "an integer");
  return out;
}
std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}
bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(key, v, "true or false");
}

struct Entry {
  ConfigKey info;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define NUM_KEY(KEY, FIELD, DESC)                                                                                 \
  Entry {                                                                                                         \
    {KEY, DESC}, [](const RunConfig& c) { return fmt(c.FIELD); },                                                 \
        [](RunConfig& c, std::string_view v) { c.FIELD = parse_double(KEY, v); }                                  \
  }
#define INT_KEY(KEY, FIELD, DESC)                                                                                 \
  Entry {                                                                                                         \
    {KEY, DESC}, [](const RunConfig& c) { return fmt(c.FIELD); },                                                 \
        [](RunConfig& c, std::string_view v) { c.FIELD = parse_int(KEY, v); }                                     \
  }
#define U64_KEY(KEY, FIELD, DESC)                                                                                 \
  Entry {                                                                                                         \
    {KEY, DESC}, [](const RunConfig& c) { return fmt(c.FIELD); },                                                 \
        [](RunConfig& c, std::string_view v) { c.FIELD = parse_u64(KEY, v); }                                     \
  }
#define BOOL_KEY(KEY, FIELD, DESC)                                                                                \
  Entry {                                                                                                         \
    {KEY, DESC}, [](const RunConfig& c) { return fmt(c.FIELD); },                                                 \
        [](RunConfig& c, std::string_view v) { c.FIELD = parse_bool(KEY, v); }                                    \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{{"profile", "base profile name (paper or desk); informational once loaded"},
            [](const RunConfig& c) { return c.profile; },
            [](RunConfig& c, std::string_view v) { c.profile = std::string(v); }},
      BOOL_KEY("net.detect", net.detect, "enable the detection head (blocks 16-22)"),
      BOOL_KEY("net.segment", net.segment, "enable the segmentation head (blocks 25-26)"),
      BOOL_KEY("net.depth", net.depth, "enable the depth head (blocks 27-28)"),
      NUM_KEY("net.width_multiple", net.width_multiple, "channel multiplier"),
      NUM_KEY("net.depth_multiple", net.depth_multiple, "bottleneck repeat multiplier"),
      INT_KEY("net.max_channels", net.max_channels, "channel cap before width scaling"),
      INT_KEY("net.reg_max", net.reg_max, "bins of the box distribution per side"),
      INT_KEY("net.num_classes", net.num_classes, "detection classes (2: normal, front)"),
      INT_KEY("net.aux_channels", net.aux_channels, "width of blocks 23-28; 0 = half the stride-8 width"),
      Entry{{"loss.seg", "segmentation loss: dice, bce, mse or l1"},
            [](const RunConfig& c) { return std::string(to_string(c.loss.seg)); },
            [](RunConfig& c, std::string_view v) { c.loss.seg = seg_loss_kind_from_string(v); }},
      Entry{{"loss.depth", "depth loss: l1 or mse"},
            [](const RunConfig& c) { return std::string(to_string(c.loss.depth)); },
            [](RunConfig& c, std::string_view v) { c.loss.depth = depth_loss_kind_from_string(v); }},
      NUM_KEY("loss.w_det", loss.task_weights[0], "detection task weight"),
      NUM_KEY("loss.w_seg", loss.task_weights[1], "segmentation task weight"),
      NUM_KEY("loss.w_depth", loss.task_weights[2], "depth task weight"),
      NUM_KEY("loss.dice_eps", loss.dice_eps, "Dice smoothing constant"),
      BOOL_KEY("loss.require_normalized_depth", loss.require_normalized_depth,
               "reject unnormalized depth targets"),
      NUM_KEY("loss.box_gain", loss.det.box_gain, "CIoU gain"),
      NUM_KEY("loss.cls_gain", loss.det.cls_gain, "VFL gain"),
      NUM_KEY("loss.dfl_gain", loss.det.dfl_gain, "DFL gain"),
      INT_KEY("loss.topk", loss.det.topk, "assigner candidates per box"),
      BOOL_KEY("augment.enabled", augment_enabled, "apply training augmentation"),
      INT_KEY("augment.target_size", augment.target_size, "letterbox size (network input), multiple of 32"),
      NUM_KEY("augment.flip_prob", augment.flip_prob, "horizontal flip probability"),
      NUM_KEY("augment.translate_frac", augment.translate_frac, "maximum shift as a fraction of the size"),
      NUM_KEY("augment.mosaic_prob", augment.mosaic_prob, "mosaic probability"),
      NUM_KEY("augment.close_mosaic_frac", augment.close_mosaic_frac, "trailing fraction of epochs without mosaic"),
      NUM_KEY("augment.hsv_h", augment.hsv_gains[0], "hue gain"),
      NUM_KEY("augment.hsv_s", augment.hsv_gains[1], "saturation gain"),
      NUM_KEY("augment.hsv_v", augment.hsv_gains[2], "value gain"),
      INT_KEY("train.epochs", train.epochs, "maximum epochs"),
      INT_KEY("train.batch_size", train.batch_size, "images per step"),
      Entry{{"train.optimizer", "optimizer (sgd_nesterov)"}, [](const RunConfig& c) { return c.train.optimizer; },
            [](RunConfig& c, std::string_view v) { c.train.optimizer = std::string(v); }},
      NUM_KEY("train.lr0", train.lr0, "initial learning rate"),
      NUM_KEY("train.lr_final", train.lr_final, "learning rate at the last epoch (cosine)"),
      NUM_KEY("train.momentum", train.momentum, "Nesterov momentum"),
      NUM_KEY("train.weight_decay", train.weight_decay, "L2 penalty on convolution kernels"),
      NUM_KEY("train.warmup_epochs", train.warmup_epochs, "linear warmup length in epochs"),
      NUM_KEY("train.warmup_momentum", train.warmup_momentum, "momentum at the start of warmup"),
      NUM_KEY("train.grad_clip", train.grad_clip, "gradient-norm clip (0 = off)"),
      INT_KEY("train.patience", train.patience, "epochs without improvement before stopping"),
      INT_KEY("train.val_interval", train.val_interval, "validate every n epochs"),
      U64_KEY("train.seed", train.seed, "seed for initialization, shuffling and augmentation"),
      Entry{{"train.pretrained", "checkpoint supplying blocks 0-22 (empty = none)"},
            [](const RunConfig& c) { return c.train.pretrained; },
            [](RunConfig& c, std::string_view v) { c.train.pretrained = std::string(v); }},
      NUM_KEY("eval.iou_threshold", eval.iou_threshold, "IoU threshold of the primary mAP"),
      NUM_KEY("eval.conf_threshold", eval.conf_threshold, "minimum detection confidence"),
      NUM_KEY("eval.nms_iou", eval.nms_iou, "NMS IoU threshold"),
      INT_KEY("eval.max_det", eval.max_det, "detections kept per image"),
      BOOL_KEY("eval.aspect_filter", eval.aspect_filter, "filter detections by calibrated aspect ratio"),
      BOOL_KEY("data.normalize_depth", data.normalize_depth, "train on normalized depth"),
      INT_KEY("data.folds", data.folds, "cross-validation folds"),
      NUM_KEY("data.val_fraction", data.val_fraction, "validation share of each training split"),
      U64_KEY("data.fold_seed", data.fold_seed, "seed of the fold permutation"),
  };
  return table;
}

#undef NUM_KEY
#undef INT_KEY
#undef U64_KEY
#undef BOOL_KEY

const Entry& find_entry(std::string_view key) {
  for (const auto& e : entries())
    if (e.info.key == key) return e;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

} // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.info);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  find_entry(key).set(cfg, trim(value));
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    const std::string_view sv(a);
    const auto key = trim(sv.substr(0, eq));
    if (key == "profile") {
      cfg = profile_config(trim(sv.substr(eq + 1)));
      continue;
    }
    set_config_value(cfg, key, sv.substr(eq + 1));
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : entries()) out.emplace_back(e.info.key, e.get(cfg));
  return out;
}

RunConfig parse_config(std::istream& in, RunConfig base, const std::string& source) {
  std::string line;
  int lineno = 0;
  bool any_key = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (const auto h = sv.find('#'); h != std::string_view::npos) sv = sv.substr(0, h);
    sv = trim(sv);
    if (sv.empty()) continue;
    const auto eq = sv.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(sv.substr(0, eq)), value = trim(sv.substr(eq + 1));
    try {
      if (key == "profile") {
        if (any_key) throw ConfigError("profile must be the first key");
        base = profile_config(value);
      } else {
        set_config_value(base, key, value);
      }
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    any_key = true;
  }
  return base;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  return parse_config(in, std::move(base), path.string());
}

void write_config_file(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file " + path.string());
  const auto& keys = config_keys();
  const auto vals = config_entries(cfg);
  for (std::size_t i = 0; i < vals.size(); ++i)
    out << "# " << keys[i].description << "\n" << vals[i].first << " = " << vals[i].second << "\n";
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : config_entries(cfg)) j[k] = v;
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config snapshot must be a JSON object");
  RunConfig cfg = profile_config(j.contains("profile") ? j.at("profile").get<std::string>() : "paper");
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw ConfigError("config snapshot value for " + k + " must be a string");
    set_config_value(cfg, k, v.get<std::string>());
  }
  return cfg;
}

nlohmann::json to_json(const NetworkConfig& c) {
  return {{"detect", c.detect},
          {"segment", c.segment},
          {"depth", c.depth},
          {"depth_multiple", c.depth_multiple},
          {"width_multiple", c.width_multiple},
          {"max_channels", c.max_channels},
          {"reg_max", c.reg_max},
          {"num_classes", c.num_classes},
          {"aux_channels", c.aux_channels}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  try {
    NetworkConfig c;
    c.detect = j.at("detect").get<bool>();
    c.segment = j.at("segment").get<bool>();
    c.depth = j.at("depth").get<bool>();
    c.depth_multiple = j.at("depth_multiple").get<double>();
    c.width_multiple = j.at("width_multiple").get<double>();
    c.max_channels = j.at("max_channels").get<int>();
    c.reg_max = j.at("reg_max").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.aux_channels = j.at("aux_channels").get<int>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network config: ") + e.what());
  }
}

} // namespace oosdsd
