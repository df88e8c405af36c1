// Acceptance runner: one PASS/FAIL line per criterion. Tolerances and budgets are fixed here.
//
//   acceptance [--only 1,2,...] [--cli path/to/oosdsd] [--work dir]

#include "oosdsd/ablation.hpp"
#include "oosdsd/depthnorm.hpp"
#include "oosdsd/errors.hpp"
#include "oosdsd/json_io.hpp"
#include "oosdsd/losses.hpp"
#include "oosdsd/metrics.hpp"
#include "oosdsd/network.hpp"
#include "oosdsd/synthgen.hpp"
#include "oosdsd/trainer.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace oosdsd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;  // 0: no runtime budget
  std::function<Outcome()> run;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1: depth normalization invariants --------------------------------------------------------

Outcome depthnorm_invariants() {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0, 1);
  double worst_mean = 0, worst_idem = 0, worst_scale = 0;
  for (int t = 0; t < 1000; ++t) {
    const int H = 1 + int(gen() % 32), W = 1 + int(gen() % 32);
    DepthMap d{DepthGrid(H, W), false};
    SegmentationMap s{MaskGrid(H, W)};
    const double p = 0.05 + 0.9 * u(gen);
    for (Eigen::Index i = 0; i < d.pixels.size(); ++i) {
      d.pixels.data()[i] = 0.01 + 0.99 * u(gen);
      s.pixels.data()[i] = u(gen) < p;
    }
    s.pixels(gen() % H, gen() % W) = 1;
    const auto n = normalize_depth(d, s).normalized;
    // Product mean of the output, computed directly.
    double sum = 0;
    long cnt = 0;
    for (Eigen::Index i = 0; i < n.pixels.size(); ++i)
      if (s.pixels.data()[i]) sum += n.pixels.data()[i], ++cnt;
    worst_mean = std::max(worst_mean, std::abs(sum / double(cnt) - 0.5));
    const auto nn = normalize_depth(n, s).normalized;
    worst_idem = std::max(worst_idem, (nn.pixels - n.pixels).abs().maxCoeff());
    const double alpha = std::exp(std::log(0.01) + (std::log(100.0) - std::log(0.01)) * u(gen));
    DepthMap scaled{DepthGrid(d.pixels * alpha), false};
    const auto ns = normalize_depth(scaled, s).normalized;
    worst_scale = std::max(worst_scale, (ns.pixels - n.pixels).abs().maxCoeff());
  }
  const bool ok = worst_mean <= 1e-6 && worst_idem <= 1e-9 && worst_scale <= 1e-9;
  return {ok, fmt("1000 cases; max |mean-0.5| %.2e (tol 1e-6), idempotence %.2e (tol 1e-9), "
                  "scale equivariance %.2e (tol 1e-9)",
                  worst_mean, worst_idem, worst_scale)};
}

// ---- 2: worked example ---------------------------------------------------------------------------

Outcome worked_example() {
  DepthMap d{DepthGrid(2, 2), false};
  d.pixels << 0.2, 0.4, 0.6, 0.8;
  SegmentationMap s{MaskGrid::Zero(2, 2)};
  s.pixels.row(0).setOnes();
  const auto r = normalize_depth(d, s);
  const double expect[4] = {1.0 / 3.0, 2.0 / 3.0, 1.0, 4.0 / 3.0};
  double err = std::abs(r.scale_factor - 5.0 / 3.0);
  for (int i = 0; i < 4; ++i) err = std::max(err, std::abs(r.normalized.pixels.data()[i] - expect[i]));
  const bool ok = err <= 1e-12 && std::abs(r.mean_product_depth - 0.3) <= 1e-12;
  return {ok, fmt("factor %.17g (5/3), outputs [1/3, 2/3, 1, 4/3]; max deviation %.1e (tol 1e-12, "
                  "decimal inputs are not exact in binary)",
                  r.scale_factor, err)};
}

// ---- 3: shape suite ------------------------------------------------------------------------------

Outcome shape_suite() {
  const NetworkConfig base = profile_config("paper").net;
  std::vector<std::string> bad;
  auto check = [&](const NetworkConfig& c, int size) {
    Network<float> net(c, 0);
    Tensor<float> x(1, 3, size, size);
    x.data().setConstant(0.5f);
    const auto out = net.forward(x, false);
    const std::string tag = fmt("%d det=%d seg=%d dep=%d", size, c.detect, c.segment, c.depth);
    if (c.detect) {
      if (out.det_raw.size() != 3) bad.push_back(tag + ": detect level count");
      for (std::size_t i = 0; i < out.det_raw.size(); ++i) {
        const auto& t = out.det_raw[i];
        const int s = kDetectStrides[i];
        if (t.c() != 4 * c.reg_max + 2 || t.h() != size / s || t.w() != size / s)
          bad.push_back(tag + fmt(": stride %d grid %ldx%ldx%ld", s, long(t.c()), long(t.h()), long(t.w())));
      }
    } else if (!out.det_raw.empty()) {
      bad.push_back(tag + ": unexpected detect output");
    }
    for (auto [on, t, name] : {std::tuple{c.segment, &out.seg_logits, "seg"}, std::tuple{c.depth, &out.depth_pred, "depth"}}) {
      if (on && (t->c() != 1 || t->h() != size || t->w() != size)) bad.push_back(tag + ": " + name + " map shape");
      if (!on && !t->empty()) bad.push_back(tag + ": unexpected " + name + " output");
    }
  };
  for (int size : {320, 640, 1280}) check(base, size);
  for (auto [seg, dep] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
    NetworkConfig c = base;
    c.segment = seg;
    c.depth = dep;
    check(c, 320);
  }
  std::string d = fmt("width %.2f, reg_max %d; sizes 320/640/1280 and 4 branch configurations", base.width_multiple,
                      base.reg_max);
  for (const auto& b : bad) d += "; " + b;
  return {bad.empty(), d};
}

// ---- 4: gradient suite ---------------------------------------------------------------------------

Outcome gradient_suite() {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0, 1);
  NetworkConfig net = profile_config("desk").net;
  net.detect = false;
  double worst = 0;
  std::vector<std::string> failures;
  for (auto depth_kind : {DepthLossKind::mse, DepthLossKind::l1})
    for (auto seg_kind : {SegLossKind::bce, SegLossKind::mse, SegLossKind::l1, SegLossKind::dice}) {
      LossConfig lc;
      lc.seg = seg_kind;
      lc.depth = depth_kind;
      NetworkOutput<double> out;
      out.seg_logits = Tensor<double>(1, 1, 4, 4);
      out.depth_pred = Tensor<double>(1, 1, 4, 4);
      Targets<double> tg;
      tg.boxes.resize(1);
      tg.seg = Tensor<double>(1, 1, 4, 4);
      tg.depth = Tensor<double>(1, 1, 4, 4);
      for (Eigen::Index i = 0; i < 16; ++i) {
        out.seg_logits.data()[i] = nd(gen);
        out.depth_pred.data()[i] = u(gen);
        tg.seg.data()[i] = double(gen() % 2);
        tg.depth.data()[i] = u(gen);
      }
      const auto res = compute_loss(out, tg, net, lc, true);
      const double h = 1e-6;
      for (auto [field, grad] : {std::pair{&NetworkOutput<double>::seg_logits, &res.grads.seg_logits},
                                 std::pair{&NetworkOutput<double>::depth_pred, &res.grads.depth_pred}})
        for (Eigen::Index i = 0; i < 16; ++i) {
          auto p = out, m = out;
          (p.*field).data()[i] += h;
          (m.*field).data()[i] -= h;
          const double fd = (compute_loss(p, tg, net, lc, false).breakdown.total -
                             compute_loss(m, tg, net, lc, false).breakdown.total) /
                            (2 * h);
          const double a = grad->data()[i];
          const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
          worst = std::max(worst, rel);
          if (rel > 1e-4)
            failures.push_back(fmt("%s/%s i=%ld rel %.2e", std::string(to_string(seg_kind)).c_str(),
                                   std::string(to_string(depth_kind)).c_str(), long(i), rel));
        }
    }

  // One training step for each combination through the trainer.
  RunConfig cfg = profile_config("desk");
  cfg.net.width_multiple = 0.0625;
  cfg.augment.target_size = 64;
  cfg.train.batch_size = 2;
  cfg.train.epochs = 1;
  cfg.train.warmup_epochs = 0;
  SynthOptions so;
  so.image_size = 96;
  const auto recs = prepare_records(depth_for_training(generate_dataset(2, 0, so), cfg), 64);
  int steps_ok = 0;
  for (auto depth_kind : {DepthLossKind::mse, DepthLossKind::l1})
    for (auto seg_kind : {SegLossKind::bce, SegLossKind::mse, SegLossKind::l1, SegLossKind::dice}) {
      auto c = cfg;
      c.loss.seg = seg_kind;
      c.loss.depth = depth_kind;
      try {
        const auto r = train(recs, recs, c);
        if (r.history.size() == 1 && std::isfinite(r.history[0].train.total)) ++steps_ok;
        else failures.push_back(std::string(to_string(seg_kind)) + "/" + std::string(to_string(depth_kind)) + ": step");
      } catch (const std::exception& e) {
        failures.push_back(std::string(to_string(seg_kind)) + "/" + std::string(to_string(depth_kind)) + ": " + e.what());
      }
    }
  std::string d = fmt("8 loss combinations x 32 inputs, worst relative FD error %.2e (tol 1e-4, h 1e-6); "
                      "training steps completed %d/8",
                      worst, steps_ok);
  for (std::size_t i = 0; i < std::min<std::size_t>(failures.size(), 5); ++i) d += "; " + failures[i];
  return {failures.empty() && steps_ok == 8, d};
}

// ---- 5: metric oracles ---------------------------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0, 1);
  double worst_ap = 0;
  int iou_mismatch = 0, mae_mismatch = 0;
  for (int t = 0; t < 200; ++t) {
    InstancesPerImage p, g;
    oracle::random_detection_case(gen, 1 + int(gen() % 3), 10, t % 2 ? OOSClass::front : OOSClass::normal, p, g);
    worst_ap = std::max(worst_ap, std::abs(average_precision(p, g, 0.5).ap - oracle::average_precision(p, g, 0.5)));

    SegmentationMap a{MaskGrid(16, 16)}, b{MaskGrid(16, 16)};
    DepthGrid x(16, 16), y(16, 16);
    MaskGrid v(16, 16);
    for (Eigen::Index i = 0; i < 256; ++i) {
      a.pixels.data()[i] = gen() % 3 == 0;
      b.pixels.data()[i] = gen() % 2 == 0;
      x.data()[i] = u(gen);
      y.data()[i] = u(gen);
      v.data()[i] = gen() % 4 != 0;
    }
    v(0, 0) = 1;
    iou_mismatch += segmentation_iou(a, b) != oracle::seg_iou(a.pixels, b.pixels);
    mae_mismatch += depth_mae(x, {y, true}, v) != oracle::mae(x, y, v);
  }
  // 2 GT; predictions 0.9 TP, 0.8 FP, 0.7 TP.
  auto box = [](double x, double y, double s, double c) { return OOSInstance{x, y, s, s, OOSClass::normal, c}; };
  const std::vector<OOSInstance> gts{box(0.5, 0.5, 0.2, 1), box(0.2, 0.2, 0.1, 1)};
  const std::vector<OOSInstance> preds{box(0.5, 0.5, 0.2, 0.9), box(0.8, 0.8, 0.1, 0.8), box(0.2, 0.2, 0.1, 0.7)};
  const double hand = average_precision(preds, gts, 0.5);
  const double enumerated = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
  const bool hand_ok = std::abs(hand - enumerated) <= 1e-9 &&
                       std::abs(hand - oracle::average_precision({preds}, {gts}, 0.5)) <= 1e-9;
  const bool ok = worst_ap <= 1e-9 && iou_mismatch == 0 && mae_mismatch == 0 && hand_ok;
  return {ok, fmt("200 cases; worst AP deviation %.1e (tol 1e-9); IoU mismatches %d, MAE mismatches %d (exact); "
                  "hand case AP %.10f vs enumerated %.10f",
                  worst_ap, iou_mismatch, mae_mismatch, hand, enumerated)};
}

// ---- 6: overfit ----------------------------------------------------------------------------------

Outcome overfit() {
  RunConfig cfg = profile_config("desk");
  cfg.augment_enabled = false;
  cfg.train.epochs = 200;
  cfg.train.patience = 200;
  const auto recs = prepare_records(depth_for_training(generate_dataset(8, 0), cfg), cfg.input_size());
  int reached = -1;
  EvalMetrics at;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& e) {
    if (!e.val) return true;
    const auto& m = *e.val;
    if (m.map >= 0.9 && m.seg_iou && *m.seg_iou >= 0.8 && m.depth_mae && *m.depth_mae <= 0.05) {
      reached = e.epoch + 1;
      at = m;
      return false;
    }
    at = m;
    return true;
  };
  train(recs, recs, cfg, hooks);
  return {reached > 0, fmt("8 scenes, desk profile without augmentation; %s after %d epochs: mAP@0.5 %.3f (>= 0.90), "
                           "seg IoU %.3f (>= 0.80), depth MAE %.4f (<= 0.05)",
                           reached > 0 ? "targets met" : "targets not met", reached > 0 ? reached : 200, at.map,
                           at.seg_iou.value_or(0), at.depth_mae.value_or(1))};
}

// ---- 7: normalization trend ----------------------------------------------------------------------

Outcome normalization_trend() {
  SynthOptions so;
  so.random_depth_scale = true;
  const auto raw = generate_dataset(40, 7, so);
  struct Run {
    double depth_loss = 0, map = 0;
    int epochs = 0;
  };
  auto run = [&](bool normalized) {
    RunConfig cfg = profile_config("desk");
    cfg.data.normalize_depth = normalized;
    cfg.loss.require_normalized_depth = normalized;
    std::vector<double> losses;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& e) {
      losses.push_back(e.train.depth);
      return true;
    };
    const auto rep = run_cross_validation(raw, cfg, {0}, {}, hooks);
    Run r;
    const std::size_t k = std::min<std::size_t>(10, losses.size());
    for (std::size_t i = losses.size() - k; i < losses.size(); ++i) r.depth_loss += losses[i] / double(k);
    r.map = rep.folds.at(0).test.map;
    r.epochs = int(losses.size());
    return r;
  };
  const Run norm = run(true), unnorm = run(false);
  const bool ok = norm.depth_loss < unnorm.depth_loss && norm.map >= unnorm.map;
  return {ok, fmt("40 scenes with random depth scales, fold 0, desk profile; depth training loss (mean of last 10 "
                  "epochs) normalized %.5f vs raw %.5f (need <); test mAP@0.5 normalized %.3f vs raw %.3f (need >=); "
                  "epochs %d/%d",
                  norm.depth_loss, unnorm.depth_loss, norm.map, unnorm.map, norm.epochs, unnorm.epochs)};
}

// ---- 8: ablation harness -------------------------------------------------------------------------

Outcome ablation_harness(const fs::path& cli, const fs::path& work) {
  const auto data = work / "ablation_data";
  const auto out = work / "ablation_runs";
  auto sh = [](const std::string& cmd) { return std::system(cmd.c_str()); };
  std::string q = "'" + cli.string() + "'";
  if (sh(q + " gen-synth --n 16 --out '" + data.string() + "' --seed 0 --overwrite > /dev/null") != 0)
    return {false, "gen-synth failed"};
  std::vector<std::string> notes;
  bool ok = true;
  const std::map<std::string, std::size_t> expected{{"branches", 4}, {"losses", 8}, {"depthnorm", 4}};
  for (const auto& [grid, n] : expected) {
    const auto dir = out / grid;
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = sh(q + " ablate --grid " + grid + " --root '" + data.string() + "' --out '" + dir.string() +
                      "' --profile desk --fold 0 --overwrite --quiet > '" + (work / (grid + ".log")).string() + "' 2>&1");
    const double sec = seconds_since(t0);
    std::size_t done = 0;
    const auto summary = dir / grid / "ablation.json";
    if (fs::exists(summary)) {
      const auto res = ablation_result_from_json(read_json_file(summary));
      done = res.entries.size() - res.failures();
    }
    const bool report = fs::exists(dir / grid / "ablation.md");
    const bool grid_ok = rc == 0 && done == n && report;
    ok = ok && grid_ok;
    notes.push_back(fmt("%s %zu/%zu runs, report %s, %.0f s", grid.c_str(), done, n, report ? "yes" : "no", sec));
  }
  std::string d = "16 scenes, desk profile, fold 0: ";
  for (std::size_t i = 0; i < notes.size(); ++i) d += (i ? "; " : "") + notes[i];
  return {ok, d};
}

std::vector<int> parse_only(const std::string& s) {
  std::vector<int> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) v.push_back(std::stoi(tok));
  return v;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string only = "1,2,3,4,5,6,7,8";
  fs::path cli = OOSDSD_CLI_PATH;
  fs::path work = fs::temp_directory_path() / "oosdsd_acceptance";
  app.add_option("--only", only, "Comma-separated criterion ids")->capture_default_str();
  app.add_option("--cli", cli, "Path to the oosdsd executable")->capture_default_str();
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "depth normalization invariants", 10, depthnorm_invariants},
      {2, "normalization worked example", 0, worked_example},
      {3, "shape suite", 120, shape_suite},
      {4, "gradient suite", 120, gradient_suite},
      {5, "metric oracles", 0, metric_oracles},
      {6, "overfit 8 scenes", 1800, overfit},
      {7, "depth normalization trend", 0, normalization_trend},
      {8, "ablation harness", 7200, [&] { return ablation_harness(cli, work); }},
  };
  fs::create_directories(work);
  const auto ids = parse_only(only);
  int failed = 0;
  for (const auto& c : all) {
    if (std::find(ids.begin(), ids.end(), c.id) == ids.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = seconds_since(t0);
    const bool in_budget = c.budget_s <= 0 || sec <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::string budget = c.budget_s > 0 ? fmt(" (budget %.0f s)", c.budget_s) : "";
    std::printf("criterion %d %s: %s | %s | %.1f s%s\n", c.id, c.name.c_str(), pass ? "PASS" : "FAIL",
                o.detail.c_str(), sec, budget.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
