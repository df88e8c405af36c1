#pragma once

#include "oosdsd/checkpoint.hpp"
#include "oosdsd/config.hpp"
#include "oosdsd/dataset.hpp"
#include "oosdsd/metrics.hpp"

#include <json.hpp>

#include <functional>
#include <optional>

namespace oosdsd {

/// Network input tensor and loss targets for a set of equally sized records.
struct Batch {
  Tensor<float> images;
  Targets<float> targets;
};

Batch make_batch(const std::vector<const DatasetRecord*>& records);

/// SGD with Nesterov momentum (PyTorch formulation). Weight decay is added to the gradient of
/// parameters flagged for decay.
class SGD {
public:
  explicit SGD(nn::ParamRefs<float> params);
  /// Clips the global gradient norm (if clip > 0) and returns the pre-clip norm.
  double clip_gradients(double clip);
  void step(double lr, double momentum, double weight_decay);

private:
  nn::ParamRefs<float> params_;
  std::vector<Eigen::VectorXf> buf_;
};

/// Cosine decay from lr0 at epoch 0 to lr_final at the last epoch.
double cosine_lr(const TrainConfig& cfg, double epoch);

struct EvalMetrics {
  double map = 0.0;  ///< at EvalConfig::iou_threshold
  double map50 = 0.0;
  double map50_95 = 0.0;
  std::array<double, kNumOOSClasses> ap{};
  std::array<bool, kNumOOSClasses> present{};
  std::optional<double> seg_iou;
  std::optional<double> depth_mae;
  LossBreakdown loss;
  std::size_t images = 0;
};

/// Fitness used for model selection: 0.9 mAP50-95 + 0.1 mAP50 with detection, else -loss.
double fitness(const EvalMetrics& m, const NetworkConfig& net);

/// Per-image network output mapped to the record frame it was computed on.
struct Prediction {
  std::string image_id;
  std::vector<OOSInstance> boxes;  ///< normalized to the record frame
  DepthGrid seg_prob;              ///< empty without a segmentation head
  DepthGrid depth;                 ///< empty without a depth head
};

/// Inference on records already letterboxed to the input size. Optionally returns predictions.
EvalMetrics evaluate_model(Network<float>& net, const std::vector<const DatasetRecord*>& records,
                           const RunConfig& cfg, const AspectFilterConfig* filter = nullptr,
                           std::vector<Prediction>* predictions = nullptr);

/// Letterboxes a record of any size, runs the network and maps everything back to the source frame.
Prediction predict_record(Network<float>& net, const DatasetRecord& rec, const RunConfig& cfg,
                          const AspectFilterConfig* filter = nullptr);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown train;
  std::optional<EvalMetrics> val;
  std::optional<double> fitness;
  /// Best validation fitness seen up to and including this epoch.
  std::optional<double> best_fitness;
  double seconds = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_fitness = 0.0;
  bool stopped_early = false;
};

struct TrainHooks {
  /// Called after every epoch; returning false stops training.
  std::function<bool(const EpochRecord&)> on_epoch;
};

/// Letterboxes every record to the configured input size.
std::vector<DatasetRecord> prepare_records(const std::vector<DatasetRecord>& records, int size);

/// Trains from freshly initialized parameters on train_set, selecting the best epoch on val_set
/// (records letterboxed to the input size). Throws DivergenceError on a non-finite loss.
TrainResult train(const std::vector<DatasetRecord>& train_set, const std::vector<DatasetRecord>& val_set,
                  const RunConfig& cfg, const TrainHooks& hooks = {});

/// Normalizes depth when the config asks for it (records already flagged normalized pass through).
std::vector<DatasetRecord> depth_for_training(const std::vector<DatasetRecord>& records, const RunConfig& cfg);

/// Trains one fold of full-resolution records.
TrainResult train_fold(const std::vector<DatasetRecord>& records, const FoldSplit& fold, const RunConfig& cfg,
                       const TrainHooks& hooks = {});

struct FoldReport {
  int fold = 0;
  int best_epoch = -1;
  int epochs_run = 0;
  EvalMetrics test;
  double seconds = 0.0;
};

struct CVReport {
  std::vector<FoldReport> folds;
  EvalMetrics mean;  ///< arithmetic mean of the per-fold test metrics
};

/// Runs the listed folds (all when empty). Per-fold artifacts go under out_dir/fold_<i> when
/// out_dir is non-empty. Fold failures are rethrown with the fold index in the message.
CVReport run_cross_validation(const std::vector<DatasetRecord>& records, const RunConfig& cfg,
                              const std::vector<int>& folds = {}, const std::filesystem::path& out_dir = {},
                              const TrainHooks& hooks = {});

nlohmann::json to_json(const AspectFilterConfig& f);
AspectFilterConfig aspect_filter_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LossBreakdown& l);
nlohmann::json to_json(const EvalMetrics& m);
nlohmann::json to_json(const EpochRecord& e);
nlohmann::json to_json(const CVReport& r);
CVReport cv_report_from_json(const nlohmann::json& j);
EvalMetrics eval_metrics_from_json(const nlohmann::json& j);

} // namespace oosdsd
