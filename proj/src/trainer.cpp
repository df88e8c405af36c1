#include "oosdsd/trainer.hpp"

#include "oosdsd/augment.hpp"
#include "oosdsd/depthnorm.hpp"
#include "oosdsd/detect.hpp"
#include "oosdsd/errors.hpp"
#include "oosdsd/json_io.hpp"
#include "oosdsd/nn/ops.hpp"
#include "oosdsd/rng.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace oosdsd {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

LossBreakdown scaled(const LossBreakdown& l, double s) {
  return {l.det_ciou * s, l.det_dfl * s, l.det_vfl * s, l.seg * s, l.depth * s, l.total * s};
}

void accumulate(LossBreakdown& acc, const LossBreakdown& l) {
  acc.det_ciou += l.det_ciou;
  acc.det_dfl += l.det_dfl;
  acc.det_vfl += l.det_vfl;
  acc.seg += l.seg;
  acc.depth += l.depth;
  acc.total += l.total;
}

std::vector<const DatasetRecord*> pointers(const std::vector<DatasetRecord>& v) {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : v) out.push_back(&r);
  return out;
}

} // namespace

Batch make_batch(const std::vector<const DatasetRecord*>& records) {
  if (records.empty()) throw ValidationError("empty batch");
  const Eigen::Index N = Eigen::Index(records.size()), H = records[0]->rows(), W = records[0]->cols();
  Batch b;
  b.images = Tensor<float>(N, 3, H, W);
  b.targets.seg = Tensor<float>(N, 1, H, W);
  b.targets.depth = Tensor<float>(N, 1, H, W);
  b.targets.valid = Tensor<float>(N, 1, H, W);
  b.targets.depth_normalized = true;
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto& r = *records[std::size_t(n)];
    if (r.rows() != H || r.cols() != W) throw ShapeError("batch records must share one size");
    for (int c = 0; c < 3; ++c) b.images.plane(n, c) = r.image.channels[c];
    b.targets.seg.plane(n, 0) = r.seg.pixels.cast<float>();
    b.targets.depth.plane(n, 0) = r.depth.pixels.cast<float>();
    b.targets.valid.plane(n, 0) = r.valid_mask().cast<float>();
    b.targets.boxes.push_back(r.boxes);
    b.targets.depth_normalized = b.targets.depth_normalized && r.depth.normalized;
  }
  return b;
}

SGD::SGD(nn::ParamRefs<float> params) : params_(std::move(params)) {
  for (auto* p : params_) buf_.push_back(Eigen::VectorXf::Zero(p->numel()));
}

double SGD::clip_gradients(double clip) {
  double sq = 0;
  for (auto* p : params_)
    if (p->trainable) sq += double(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  if (clip > 0 && norm > clip && std::isfinite(norm)) {
    const float s = float(clip / (norm + 1e-6));
    for (auto* p : params_)
      if (p->trainable) p->grad *= s;
  }
  return norm;
}

void SGD::step(double lr, double momentum, double weight_decay) {
  const float m = float(momentum), wd = float(weight_decay), a = float(lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    if (!p->trainable) continue;
    Eigen::VectorXf g = p->grad;
    if (p->decay && wd != 0.0f) g += wd * p->value;
    buf_[i] = m * buf_[i] + g;
    p->value -= a * (g + m * buf_[i]);
  }
}

double cosine_lr(const TrainConfig& cfg, double epoch) {
  const double span = std::max(cfg.epochs - 1, 1);
  const double t = std::clamp(epoch / span, 0.0, 1.0);
  return cfg.lr_final + (cfg.lr0 - cfg.lr_final) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double fitness(const EvalMetrics& m, const NetworkConfig& net) {
  if (net.detect) return 0.9 * m.map50_95 + 0.1 * m.map50;
  return -m.loss.total;
}

namespace {

DecodeConfig decode_config(const RunConfig& cfg) {
  DecodeConfig d;
  d.conf_threshold = cfg.eval.conf_threshold;
  d.iou_threshold = cfg.eval.nms_iou;
  d.max_det = cfg.eval.max_det;
  return d;
}

DepthGrid plane_of(const Tensor<float>& t, Eigen::Index n) { return t.plane(n, 0).cast<double>(); }

} // namespace

EvalMetrics evaluate_model(Network<float>& net, const std::vector<const DatasetRecord*>& records,
                           const RunConfig& cfg, const AspectFilterConfig* filter,
                           std::vector<Prediction>* predictions) {
  EvalMetrics m;
  m.images = records.size();
  if (records.empty()) return m;
  const auto& nc = net.config();
  InstancesPerImage preds, gts;
  double iou_sum = 0, mae_sum = 0;
  std::size_t mae_count = 0;
  const std::size_t bs = std::size_t(cfg.train.batch_size);
  for (std::size_t start = 0; start < records.size(); start += bs) {
    const std::vector<const DatasetRecord*> chunk(records.begin() + long(start),
                                                  records.begin() + long(std::min(records.size(), start + bs)));
    const Batch b = make_batch(chunk);
    const auto out = net.forward(b.images, false);
    LossConfig lc = cfg.loss;
    lc.require_normalized_depth = false;  // reported, not trained on
    accumulate(m.loss, scaled(compute_loss(out, b.targets, nc, lc, false).breakdown, double(chunk.size())));
    std::vector<std::vector<OOSInstance>> dets(chunk.size());
    if (nc.detect) dets = decode_detections(out.det_raw, nc.reg_max, nc.num_classes, decode_config(cfg));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& r = *chunk[i];
      const MaskGrid valid = r.valid_mask();
      Prediction p;
      p.image_id = r.image_id;
      p.boxes = filter ? aspect_filter(dets[i], *filter) : dets[i];
      if (nc.detect) {
        preds.push_back(p.boxes);
        gts.push_back(r.boxes);
      }
      if (nc.segment) {
        const DepthGrid logits = plane_of(out.seg_logits, Eigen::Index(i));
        SegmentationMap pm{(logits > 0.0).cast<std::uint8_t>()};
        iou_sum += segmentation_iou(pm, r.seg, &valid);
        if (predictions) p.seg_prob = logits.unaryExpr([](double v) { return nn::sigmoid(v); });
      }
      if (nc.depth) {
        p.depth = plane_of(out.depth_pred, Eigen::Index(i));
        if ((valid != 0).any()) {
          mae_sum += depth_mae(p.depth, r.depth, valid);
          ++mae_count;
        }
        if (!predictions) p.depth.resize(0, 0);
      }
      if (predictions) predictions->push_back(std::move(p));
    }
  }
  m.loss = scaled(m.loss, 1.0 / double(records.size()));
  if (nc.detect) {
    const auto primary = evaluate_detections(preds, gts, cfg.eval.iou_threshold);
    const auto at50 = evaluate_detections(preds, gts, 0.5);
    m.map = primary.map;
    m.map50 = at50.map;
    m.map50_95 = map_50_95(preds, gts);
    for (int c = 0; c < kNumOOSClasses; ++c) {
      m.ap[c] = primary.per_class[c].ap;
      m.present[c] = primary.present[c];
    }
  }
  if (nc.segment) m.seg_iou = iou_sum / double(records.size());
  if (nc.depth && mae_count) m.depth_mae = mae_sum / double(mae_count);
  return m;
}

Prediction predict_record(Network<float>& net, const DatasetRecord& rec, const RunConfig& cfg,
                          const AspectFilterConfig* filter) {
  auto lb = letterbox(rec, cfg.input_size());
  const auto& t = lb.transform;
  std::vector<Prediction> preds;
  evaluate_model(net, {&lb.record}, cfg, nullptr, &preds);
  Prediction p = std::move(preds.at(0));
  for (auto& b : p.boxes) b = t.to_source(b);
  if (filter) p.boxes = aspect_filter(p.boxes, *filter, double(rec.cols()) / double(rec.rows()));
  auto back = [&](const DepthGrid& g) {
    if (g.size() == 0) return g;
    Tensor<double> crop(1, 1, t.new_rows, t.new_cols);
    crop.plane(0, 0) = g.block(t.pad_top, t.pad_left, t.new_rows, t.new_cols);
    const auto r = nn::resize_bilinear(crop, rec.rows(), rec.cols());
    return DepthGrid(r.plane(0, 0));
  };
  p.seg_prob = back(p.seg_prob);
  p.depth = back(p.depth);
  return p;
}

std::vector<DatasetRecord> prepare_records(const std::vector<DatasetRecord>& records, int size) {
  std::vector<DatasetRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(letterbox(r, size).record);
  return out;
}

TrainResult train(const std::vector<DatasetRecord>& train_set, const std::vector<DatasetRecord>& val_set,
                  const RunConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.empty()) throw TooFewRecordsError("training set is empty");
  const int T = cfg.input_size();
  for (const auto* set : {&train_set, &val_set})
    for (const auto& r : *set)
      if (r.rows() != T || r.cols() != T)
        throw ShapeError("record '" + r.image_id + "' is not letterboxed to " + std::to_string(T));

  Network<float> net(cfg.net, cfg.train.seed);
  if (!cfg.train.pretrained.empty()) {
    const auto ck = load_checkpoint(cfg.train.pretrained);
    init_parameters(net, cfg.train.seed, &ck);
  }
  SGD opt(net.parameters());
  const auto pool = pointers(train_set);
  const auto val = pointers(val_set);
  const std::size_t n = train_set.size(), bs = std::size_t(cfg.train.batch_size);
  const std::size_t per_epoch = (n + bs - 1) / bs;
  const auto warmup_iters = static_cast<std::size_t>(std::lround(cfg.train.warmup_epochs * double(per_epoch)));
  const int mosaic_until = int(std::floor(double(cfg.train.epochs) * (1.0 - cfg.augment.close_mosaic_frac)));

  TrainResult res;
  bool have_best = false;
  auto meta = [&](int epoch, double fit) {
    return nlohmann::json{{"epoch", epoch}, {"fitness", fit}, {"config", to_json(cfg)}};
  };

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    const double lr_epoch = cosine_lr(cfg.train, epoch);
    rec.lr = lr_epoch;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(cfg.train.seed, 0x5EED0000ULL + std::uint64_t(epoch)));
    shuffle(order, order_rng);
    const std::uint64_t aug_seed = derive_seed(cfg.train.seed, 0xA06000ULL + std::uint64_t(epoch));

    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t it = std::size_t(epoch) * per_epoch + b;
      double lr = lr_epoch, mom = cfg.train.momentum;
      if (it < warmup_iters) {
        const double f = double(it + 1) / double(warmup_iters);
        lr *= f;
        mom = cfg.train.warmup_momentum + (cfg.train.momentum - cfg.train.warmup_momentum) * f;
      }
      std::vector<DatasetRecord> augmented;
      std::vector<const DatasetRecord*> items;
      for (std::size_t k = b * bs; k < std::min(n, (b + 1) * bs); ++k) {
        if (cfg.augment_enabled) {
          augmented.push_back(augment_sample(pool, order[k], cfg.augment, epoch < mosaic_until,
                                             derive_seed(aug_seed, order[k])));
        } else {
          items.push_back(pool[order[k]]);
        }
      }
      for (const auto& a : augmented) items.push_back(&a);
      const Batch batch = make_batch(items);
      const auto out = net.forward(batch.images, true);
      auto loss = compute_loss(out, batch.targets, cfg.net, cfg.loss, true);
      if (!std::isfinite(loss.breakdown.total))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(b));
      net.zero_grad();
      net.backward(loss.grads);
      const double gnorm = opt.clip_gradients(cfg.train.grad_clip);
      if (!std::isfinite(gnorm))
        throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch) + ", step " + std::to_string(b));
      opt.step(lr, mom, cfg.train.weight_decay);
      accumulate(rec.train, scaled(loss.breakdown, double(items.size())));
    }
    rec.train = scaled(rec.train, 1.0 / double(n));

    const bool last = epoch + 1 == cfg.train.epochs;
    if ((epoch + 1) % cfg.train.val_interval == 0 || last) {
      double fit;
      if (!val.empty()) {
        rec.val = evaluate_model(net, val, cfg);
        fit = fitness(*rec.val, cfg.net);
      } else {
        fit = -rec.train.total;
      }
      if (!std::isfinite(fit)) throw DivergenceError("non-finite validation fitness at epoch " + std::to_string(epoch));
      rec.fitness = fit;
      if (!have_best || fit > res.best_fitness) {
        have_best = true;
        res.best_fitness = fit;
        res.best_epoch = epoch;
        res.best = capture(net, meta(epoch, fit));
      }
      rec.best_fitness = res.best_fitness;
    }
    rec.seconds = seconds_since(t0);
    res.history.push_back(rec);
    if (hooks.on_epoch && !hooks.on_epoch(rec)) break;
    if (have_best && epoch - res.best_epoch >= cfg.train.patience && !last) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

std::vector<DatasetRecord> depth_for_training(const std::vector<DatasetRecord>& records, const RunConfig& cfg) {
  if (!cfg.net.depth) return records;
  std::vector<DatasetRecord> out = records;
  if (cfg.data.normalize_depth) {
    for (auto& r : out)
      if (!r.depth.normalized) r.depth = normalize_depth(r.depth, r.seg).normalized;
  } else {
    for (const auto& r : out)
      if (r.depth.normalized)
        throw ConfigError("record '" + r.image_id + "' carries normalized depth but data.normalize_depth = false");
  }
  return out;
}

TrainResult train_fold(const std::vector<DatasetRecord>& records, const FoldSplit& fold, const RunConfig& cfg,
                       const TrainHooks& hooks) {
  const auto prepared = depth_for_training(records, cfg);
  const auto tr = prepare_records(select_records(prepared, fold.train_ids), cfg.input_size());
  const auto va = prepare_records(select_records(prepared, fold.val_ids), cfg.input_size());
  return train(tr, va, cfg, hooks);
}

namespace {

EvalMetrics mean_metrics(const std::vector<FoldReport>& folds) {
  EvalMetrics m;
  if (folds.empty()) return m;
  const double k = double(folds.size());
  double iou = 0, mae = 0;
  int n_iou = 0, n_mae = 0;
  std::array<int, kNumOOSClasses> n_ap{};
  for (const auto& f : folds) {
    const auto& t = f.test;
    m.map += t.map / k;
    m.map50 += t.map50 / k;
    m.map50_95 += t.map50_95 / k;
    accumulate(m.loss, scaled(t.loss, 1.0 / k));
    m.images += t.images;
    for (int c = 0; c < kNumOOSClasses; ++c)
      if (t.present[c]) {
        m.ap[c] += t.ap[c];
        ++n_ap[c];
      }
    if (t.seg_iou) {
      iou += *t.seg_iou;
      ++n_iou;
    }
    if (t.depth_mae) {
      mae += *t.depth_mae;
      ++n_mae;
    }
  }
  for (int c = 0; c < kNumOOSClasses; ++c) {
    m.present[c] = n_ap[c] > 0;
    if (n_ap[c]) m.ap[c] /= n_ap[c];
  }
  if (n_iou) m.seg_iou = iou / n_iou;
  if (n_mae) m.depth_mae = mae / n_mae;
  return m;
}

} // namespace

CVReport run_cross_validation(const std::vector<DatasetRecord>& records, const RunConfig& cfg,
                              const std::vector<int>& folds, const std::filesystem::path& out_dir,
                              const TrainHooks& hooks) {
  cfg.validate();
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.image_id);
  const auto splits = make_folds(ids, cfg.data.folds, cfg.data.val_fraction, cfg.data.fold_seed);
  std::vector<int> which = folds;
  if (which.empty())
    for (int i = 0; i < cfg.data.folds; ++i) which.push_back(i);
  const auto prepared = depth_for_training(records, cfg);

  CVReport report;
  for (int f : which) {
    if (f < 0 || f >= int(splits.size())) throw ConfigError("fold index " + std::to_string(f) + " out of range");
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto& split = splits[std::size_t(f)];
      const auto tr = prepare_records(select_records(prepared, split.train_ids), cfg.input_size());
      const auto va = prepare_records(select_records(prepared, split.val_ids), cfg.input_size());
      const auto te = prepare_records(select_records(prepared, split.test_ids), cfg.input_size());
      auto result = train(tr, va, cfg, hooks);

      Network<float> net(cfg.net, cfg.train.seed);
      restore(net, result.best);
      std::optional<AspectFilterConfig> filter;
      if (cfg.eval.aspect_filter) {
        InstancesPerImage g;
        for (const auto& r : tr) g.push_back(r.boxes);
        filter = calibrate_aspect_filter(g);
      }
      FoldReport fr;
      fr.fold = f;
      fr.best_epoch = result.best_epoch;
      fr.epochs_run = int(result.history.size());
      fr.test = evaluate_model(net, pointers(te), cfg, filter ? &*filter : nullptr);
      fr.seconds = seconds_since(t0);
      if (!out_dir.empty()) {
        const auto dir = out_dir / ("fold_" + std::to_string(f));
        std::filesystem::create_directories(dir);
        auto best = result.best;
        best.meta["fold"] = f;
        if (filter) best.meta["aspect_filter"] = to_json(*filter);
        save_checkpoint(dir / "best.ckpt", best);
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& e : result.history) hist.push_back(to_json(e));
        write_json_file(dir / "history.json", {{"fold", f},
                                          {"best_epoch", result.best_epoch},
                                          {"stopped_early", result.stopped_early},
                                          {"epochs", hist}});
        write_json_file(dir / "test_metrics.json", to_json(fr.test));
      }
      report.folds.push_back(fr);
    } catch (const ValidationError& e) {
      throw ValidationError("fold " + std::to_string(f) + ": " + e.what());
    } catch (const DivergenceError& e) {
      throw DivergenceError("fold " + std::to_string(f) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("fold " + std::to_string(f) + ": " + e.what());
    }
  }
  report.mean = mean_metrics(report.folds);
  if (!out_dir.empty()) write_json_file(out_dir / "cv_report.json", to_json(report));
  return report;
}

nlohmann::json to_json(const AspectFilterConfig& f) {
  nlohmann::json iv = nlohmann::json::object();
  for (int c = 0; c < kNumOOSClasses; ++c) {
    const auto& v = f.intervals[std::size_t(c)];
    iv[std::string(to_string(OOSClass(c)))] = v ? nlohmann::json{v->first, v->second} : nlohmann::json(nullptr);
  }
  return {{"enabled", f.enabled}, {"intervals", iv}};
}

AspectFilterConfig aspect_filter_from_json(const nlohmann::json& j) {
  AspectFilterConfig f;
  f.enabled = j.at("enabled").get<bool>();
  for (int c = 0; c < kNumOOSClasses; ++c) {
    const auto& v = j.at("intervals").at(std::string(to_string(OOSClass(c))));
    if (!v.is_null()) f.intervals[std::size_t(c)] = std::pair{v.at(0).get<double>(), v.at(1).get<double>()};
  }
  f.validate();
  return f;
}

nlohmann::json to_json(const LossBreakdown& l) {
  return {{"det_ciou", l.det_ciou}, {"det_dfl", l.det_dfl}, {"det_vfl", l.det_vfl},
          {"seg", l.seg},           {"depth", l.depth},     {"total", l.total}};
}

nlohmann::json to_json(const EvalMetrics& m) {
  nlohmann::json j{{"map", m.map},
                   {"map50", m.map50},
                   {"map50_95", m.map50_95},
                   {"images", m.images},
                   {"loss", to_json(m.loss)}};
  nlohmann::json ap = nlohmann::json::object();
  for (int c = 0; c < kNumOOSClasses; ++c)
    ap[std::string(to_string(OOSClass(c)))] = m.present[c] ? nlohmann::json(m.ap[c]) : nlohmann::json(nullptr);
  j["ap"] = ap;
  j["seg_iou"] = m.seg_iou ? nlohmann::json(*m.seg_iou) : nlohmann::json(nullptr);
  j["depth_mae"] = m.depth_mae ? nlohmann::json(*m.depth_mae) : nlohmann::json(nullptr);
  return j;
}

EvalMetrics eval_metrics_from_json(const nlohmann::json& j) {
  EvalMetrics m;
  m.map = j.at("map").get<double>();
  m.map50 = j.at("map50").get<double>();
  m.map50_95 = j.at("map50_95").get<double>();
  m.images = j.value("images", std::size_t(0));
  for (int c = 0; c < kNumOOSClasses; ++c) {
    const auto& v = j.at("ap").at(std::string(to_string(OOSClass(c))));
    m.present[c] = !v.is_null();
    if (!v.is_null()) m.ap[c] = v.get<double>();
  }
  if (!j.at("seg_iou").is_null()) m.seg_iou = j.at("seg_iou").get<double>();
  if (!j.at("depth_mae").is_null()) m.depth_mae = j.at("depth_mae").get<double>();
  const auto& l = j.at("loss");
  m.loss = {l.at("det_ciou").get<double>(), l.at("det_dfl").get<double>(), l.at("det_vfl").get<double>(),
            l.at("seg").get<double>(),      l.at("depth").get<double>(),   l.at("total").get<double>()};
  return m;
}

nlohmann::json to_json(const EpochRecord& e) {
  nlohmann::json j{{"epoch", e.epoch}, {"lr", e.lr}, {"train", to_json(e.train)}, {"seconds", e.seconds}};
  j["val"] = e.val ? to_json(*e.val) : nlohmann::json(nullptr);
  j["fitness"] = e.fitness ? nlohmann::json(*e.fitness) : nlohmann::json(nullptr);
  j["best_fitness"] = e.best_fitness ? nlohmann::json(*e.best_fitness) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const CVReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"fold", f.fold},
                     {"best_epoch", f.best_epoch},
                     {"epochs_run", f.epochs_run},
                     {"seconds", f.seconds},
                     {"test", to_json(f.test)}});
  return {{"folds", folds}, {"mean", to_json(r.mean)}};
}

CVReport cv_report_from_json(const nlohmann::json& j) {
  CVReport r;
  for (const auto& f : j.at("folds")) {
    FoldReport fr;
    fr.fold = f.at("fold").get<int>();
    fr.best_epoch = f.at("best_epoch").get<int>();
    fr.epochs_run = f.at("epochs_run").get<int>();
    fr.seconds = f.value("seconds", 0.0);
    fr.test = eval_metrics_from_json(f.at("test"));
    r.folds.push_back(fr);
  }
  r.mean = eval_metrics_from_json(j.at("mean"));
  return r;
}

} // namespace oosdsd
