#pragma once

#include "oosdsd/ablation.hpp"
#include "oosdsd/depthnorm.hpp"
#include "oosdsd/trainer.hpp"

#include <string>
#include <utility>
#include <vector>

namespace oosdsd {

/// "88.4" style percentage with one decimal; "-" for nullopt.
std::string format_percent(std::optional<double> v);
/// Three decimals; "-" for nullopt.
std::string format_mae(std::optional<double> v);

/// Detection results table: per-class AP (Normal, Front), mAP (All), plus IoU and MAE.
std::string metrics_table(const std::vector<std::pair<std::string, EvalMetrics>>& rows, double iou_threshold);

/// Per-fold test metrics followed by their mean.
std::string cv_report_markdown(const CVReport& report, double iou_threshold);

/// Grid-specific layout: branch checkmarks, seg/depth loss pairs, or model x normalization.
std::string ablation_markdown(const AblationResult& result);

/// Per-record normalization factors and failures.
std::string normalization_markdown(const NormalizationReport& report);
nlohmann::json to_json(const NormalizationReport& report);
NormalizationReport normalization_report_from_json(const nlohmann::json& j);

} // namespace oosdsd
