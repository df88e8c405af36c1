#include "oosdsd/report.hpp"

#include "oosdsd/errors.hpp"

#include <cstdio>
#include <sstream>

namespace oosdsd {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string map_label(double iou_threshold) { return "mAP@" + fixed(iou_threshold, 2); }

std::optional<double> ap_of(const EvalMetrics& m, OOSClass c) {
  const auto i = std::size_t(c);
  return m.present[i] ? std::optional<double>(m.ap[i]) : std::nullopt;
}

std::string row(const std::vector<std::string>& cells) {
  std::string s = "|";
  for (const auto& c : cells) s += " " + c + " |";
  return s + "\n";
}

std::string rule(std::size_t n) {
  std::string s = "|";
  for (std::size_t i = 0; i < n; ++i) s += " --- |";
  return s + "\n";
}

std::string check(bool on) { return on ? "✓" : ""; }

} // namespace

std::string format_percent(std::optional<double> v) { return v ? fixed(100.0 * *v, 1) : "-"; }
std::string format_mae(std::optional<double> v) { return v ? fixed(*v, 3) : "-"; }

std::string metrics_table(const std::vector<std::pair<std::string, EvalMetrics>>& rows, double iou_threshold) {
  std::ostringstream out;
  out << row({"Model", "AP Normal", "AP Front", map_label(iou_threshold) + " All", "mAP@0.50:0.95", "IoU", "MAE"})
      << rule(7);
  for (const auto& [name, m] : rows)
    out << row({name, format_percent(ap_of(m, OOSClass::normal)), format_percent(ap_of(m, OOSClass::front)),
                format_percent(m.map), format_percent(m.map50_95), format_percent(m.seg_iou),
                format_mae(m.depth_mae)});
  return out.str();
}

std::string cv_report_markdown(const CVReport& report, double iou_threshold) {
  std::vector<std::pair<std::string, EvalMetrics>> rows;
  for (const auto& f : report.folds) rows.emplace_back("fold " + std::to_string(f.fold), f.test);
  if (report.folds.size() > 1) rows.emplace_back("mean", report.mean);
  std::ostringstream out;
  out << metrics_table(rows, iou_threshold) << "\n" << row({"Fold", "Best epoch", "Epochs run", "Seconds"}) << rule(4);
  for (const auto& f : report.folds)
    out << row({std::to_string(f.fold), std::to_string(f.best_epoch), std::to_string(f.epochs_run),
                fixed(f.seconds, 1)});
  return out.str();
}

std::string ablation_markdown(const AblationResult& r) {
  if (r.entries.empty()) return "No ablation runs.\n";
  const double thr = r.entries.front().config.eval.iou_threshold;
  const std::string map = map_label(thr);
  std::ostringstream out;
  std::vector<std::string> failed;
  auto metric_cells = [&](const AblationEntry& e, bool with_mae) {
    std::vector<std::string> c;
    if (!e.error.empty()) {
      c = {"failed", "-"};
      if (with_mae) c.push_back("-");
      failed.push_back(e.variant.name + ": " + e.error);
      return c;
    }
    const auto& m = e.report.mean;
    c = {format_percent(m.map), format_percent(m.seg_iou)};
    if (with_mae) c.push_back(format_mae(m.depth_mae));
    return c;
  };
  auto append = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  if (r.grid == "branches") {
    out << "Branches used (higher mAP and IoU, lower MAE are better)\n\n"
        << row({"Det", "Seg", "Dep", map, "IoU", "MAE", "Seconds"}) << rule(7);
    for (const auto& e : r.entries)
      out << row(append(append({check(e.config.net.detect), check(e.config.net.segment), check(e.config.net.depth)},
                               metric_cells(e, true)),
                        {fixed(e.seconds, 0)}));
  } else if (r.grid == "losses") {
    out << "Branch losses (higher mAP and IoU, lower MAE are better)\n\n"
        << row({"Seg", "Dep", map, "IoU", "MAE", "Seconds"}) << rule(6);
    for (const auto& e : r.entries)
      out << row(append(append({std::string(to_string(e.config.loss.seg)), std::string(to_string(e.config.loss.depth))},
                               metric_cells(e, true)),
                        {fixed(e.seconds, 0)}));
  } else if (r.grid == "depthnorm") {
    out << "Depth normalization (higher is better; MAE omitted because targets differ between rows)\n\n"
        << row({"Model", "Depth normalization", map, "IoU", "Seconds"}) << rule(5);
    for (const auto& e : r.entries)
      out << row(append(append({e.config.net.segment ? "full" : "w/o seg", check(e.config.data.normalize_depth)},
                               metric_cells(e, false)),
                        {fixed(e.seconds, 0)}));
  } else {
    throw ValidationError("unknown ablation grid '" + r.grid + "'");
  }
  if (!failed.empty()) {
    out << "\nFailed runs:\n\n";
    for (const auto& f : failed) out << "- " << f << "\n";
  }
  return out.str();
}

std::string normalization_markdown(const NormalizationReport& report) {
  std::ostringstream out;
  out << row({"Image", "Status", "Mean product depth", "Scale factor"}) << rule(4);
  for (const auto& e : report.entries)
    out << row({e.image_id, e.ok ? "ok" : "failed: " + e.error, e.ok ? fixed(e.mean_product_depth, 6) : "-",
                e.ok ? fixed(e.scale_factor, 6) : "-"});
  out << "\n" << report.entries.size() - report.failures() << " normalized, " << report.failures() << " failed\n";
  return out.str();
}

nlohmann::json to_json(const NormalizationReport& report) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries) {
    nlohmann::json j{{"image_id", e.image_id}, {"ok", e.ok}};
    if (e.ok) {
      j["mean_product_depth"] = e.mean_product_depth;
      j["scale_factor"] = e.scale_factor;
    } else {
      j["error"] = e.error;
    }
    entries.push_back(std::move(j));
  }
  return {{"entries", entries}, {"failures", report.failures()}};
}

NormalizationReport normalization_report_from_json(const nlohmann::json& j) {
  NormalizationReport r;
  try {
    for (const auto& x : j.at("entries")) {
      NormalizationEntry e;
      e.image_id = x.at("image_id").get<std::string>();
      e.ok = x.at("ok").get<bool>();
      if (e.ok) {
        e.mean_product_depth = x.at("mean_product_depth").get<double>();
        e.scale_factor = x.at("scale_factor").get<double>();
      } else {
        e.error = x.value("error", std::string());
      }
      r.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed normalization report: ") + e.what());
  }
  return r;
}

} // namespace oosdsd
