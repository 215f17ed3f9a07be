#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scaler/tensor.hpp"

namespace scaler {

// The four mask-quality measures reported by evaluation. Predictions are
// probability masks in [0,1]; ground truth is strictly binary. All four land
// in [0,1]. Variant choices (pinned, documented in the README): adaptive
// threshold 2*mean(pred) floored at 1e-12 and capped at 1, beta^2 = 0.3,
// structure-measure alpha = 0.5 with sample-normalized moments, single
// adaptive-threshold alignment measure normalized by pixel count.

double adaptive_threshold(const Tensor& pred_hw);

double mae(const Tensor& pred_hw, const Tensor& gt_hw);

// Needs at least one foreground pixel in gt.
double f_beta(const Tensor& pred_hw, const Tensor& gt_hw, double beta_sq = 0.3);

// Object-aware + region-aware structural similarity. Degenerate gt: all
// background scores 1 - mean(pred), all foreground scores mean(pred).
double s_measure(const Tensor& pred_hw, const Tensor& gt_hw, double alpha = 0.5);

// Enhanced alignment of de-meaned binarized prediction against de-meaned gt,
// at the same adaptive threshold as f_beta. Degenerate gt: the alignment map
// collapses to 1 - binarized (empty gt) or binarized (full gt).
double e_measure(const Tensor& pred_hw, const Tensor& gt_hw);

struct MetricRow {
    int64_t sample_id = 0;
    double mae = 0.0, f_beta = 0.0, e_phi = 0.0, s_alpha = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    double mae = 0.0, f_beta = 0.0, e_phi = 0.0, s_alpha = 0.0; // dataset means
};

// Row ids are the vector indices. Means are the exact arithmetic means of
// the per-sample rows.
MetricReport evaluate_metrics(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts);

std::string metric_report_json_text(const MetricReport& r);
void write_metric_report_json(const std::filesystem::path& path, const MetricReport& r);
void write_metric_report_csv(const std::filesystem::path& path, const MetricReport& r);

} // namespace scaler
