#pragma once

#include "oosdsd/augment.hpp"
#include "oosdsd/losses.hpp"
#include "oosdsd/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace oosdsd {

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 8;
  std::string optimizer = "sgd_nesterov";
  double lr0 = 0.01;
  /// Learning rate reached at the last epoch of the cosine schedule.
  double lr_final = 1e-4;
  double momentum = 0.937;
  /// Applied to convolution kernels only.
  double weight_decay = 5e-4;
  /// Linear warmup of lr from 0 and momentum from warmup_momentum, in epochs (fractional allowed).
  double warmup_epochs = 3.0;
  double warmup_momentum = 0.8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 10.0;
  int patience = 100;
  /// Validate every n epochs (and always after the last one).
  int val_interval = 1;
  std::uint64_t seed = 0;
  /// Optional checkpoint providing blocks 0-22.
  std::string pretrained;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EvalConfig {
  /// IoU threshold of the primary mAP figure.
  double iou_threshold = 0.5;
  double conf_threshold = 0.001;
  double nms_iou = 0.7;
  int max_det = 300;
  /// Calibrate an aspect-ratio filter on the training ground truth and apply it to predictions.
  bool aspect_filter = false;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

struct DataConfig {
  /// Train on normalized depth (computed in memory unless a cache exists).
  bool normalize_depth = true;
  int folds = 5;
  double val_fraction = 0.15;
  std::uint64_t fold_seed = 0;

  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  std::string profile = "paper";
  NetworkConfig net;
  LossConfig loss;
  bool augment_enabled = true;
  AugmentConfig augment;
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;

  int input_size() const { return augment.target_size; }
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// "paper": 1280 inputs, batch 8, 1000 epochs, width 0.5. "desk": 320 inputs, batch 2,
/// 100 epochs, width 0.25. Throws ConfigError for other names.
RunConfig profile_config(std::string_view name);

struct ConfigKey {
  std::string key;
  std::string description;
};

/// Every accepted key with a one-line description, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Sets one dotted key from its text form. Throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
/// Applies "key=value" strings in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments);

/// All keys with their current values in text form, in documentation order.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);

/// Parses "key = value" lines ('#' starts a comment) on top of base. A "profile" key, if
/// present, must come first and resets the base to that profile.
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = profile_config("paper"));
RunConfig parse_config(std::istream& in, RunConfig base, const std::string& source = "<config>");
void write_config_file(const std::filesystem::path& path, const RunConfig& cfg);

nlohmann::json to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);

} // namespace oosdsd
