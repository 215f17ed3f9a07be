#include "scaler/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "scaler/error.hpp"

namespace scaler {

namespace {

constexpr double kEps = 1e-12;

void validate_pair(const Tensor& pred, const Tensor& gt) {
  if (pred.dims.size() != 2 || gt.dims.size() != 2)
    throw NumericError("metrics expect rank-2 masks");
  if (!pred.same_shape(gt))
    throw NumericError("metric shape mismatch " + pred.shape_str() + " vs " + gt.shape_str());
  for (double v : pred.data)
    if (!(v >= 0.0 && v <= 1.0)) throw NumericError("prediction values must lie in [0,1]");
  for (double v : gt.data)
    if (v != 0.0 && v != 1.0) throw NumericError("ground truth must be binary");
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

bool is_constant(const std::vector<double>& v) {
  for (double x : v)
    if (x != v.front()) return false;
  return true;
}

// Sample-normalized (n-1, floored at 1) second moments. Constant input is
// detected explicitly so its variance is an exact zero regardless of how the
// mean rounded; the similarity score below branches on that exact zero.
double var_of(const std::vector<double>& v, double mu) {
  if (v.empty() || is_constant(v)) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return acc / std::max<double>(1.0, static_cast<double>(v.size()) - 1.0);
}

double cov_of(const std::vector<double>& a, double mua, const std::vector<double>& b, double mub) {
  if (a.empty() || is_constant(a) || is_constant(b)) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - mua) * (b[i] - mub);
  return acc / std::max<double>(1.0, static_cast<double>(a.size()) - 1.0);
}

double object_score(const std::vector<double>& region) {
  const double mu = mean_of(region);
  const double sigma = std::sqrt(var_of(region, mu));
  return 2.0 * mu / (mu * mu + 1.0 + sigma + kEps);
}

double region_ssim(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean_of(x), my = mean_of(y);
  const double vx = var_of(x, mx), vy = var_of(y, my);
  const double cxy = cov_of(x, mx, y, my);
  const double a = 4.0 * mx * my * cxy;
  const double b = (mx * mx + my * my) * (vx + vy);
  if (a != 0.0) return a / (b + kEps);
  return (b == 0.0) ? 1.0 : 0.0;
}

} // namespace

double adaptive_threshold(const Tensor& pred_hw) {
  double m = 0.0;
  for (double v : pred_hw.data) m += v;
  m = 2.0 * m / static_cast<double>(pred_hw.numel());
  return std::min(1.0, std::max(1e-12, m));
}

double mae(const Tensor& pred_hw, const Tensor& gt_hw) {
  validate_pair(pred_hw, gt_hw);
  double acc = 0.0;
  for (size_t i = 0; i < pred_hw.data.size(); ++i)
    acc += std::abs(pred_hw.data[i] - gt_hw.data[i]);
  return acc / static_cast<double>(pred_hw.numel());
}

double f_beta(const Tensor& pred_hw, const Tensor& gt_hw, double beta_sq) {
  validate_pair(pred_hw, gt_hw);
  double gt_fg = 0.0;
  for (double v : gt_hw.data) gt_fg += v;
  if (gt_fg == 0.0) throw NumericError("f_beta needs foreground in the ground truth");

  const double tau = adaptive_threshold(pred_hw);
  double tp = 0.0, predicted = 0.0;
  for (size_t i = 0; i < pred_hw.data.size(); ++i) {
    const bool on = pred_hw.data[i] >= tau;
    if (on) {
      predicted += 1.0;
      if (gt_hw.data[i] == 1.0) tp += 1.0;
    }
  }
  const double precision = predicted > 0.0 ? tp / predicted : 0.0;
  const double recall = tp / gt_fg;
  if (precision + recall == 0.0) return 0.0;
  return (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall);
}

double s_measure(const Tensor& pred_hw, const Tensor& gt_hw, double alpha) {
  validate_pair(pred_hw, gt_hw);
  const int64_t H = pred_hw.dims[0], W = pred_hw.dims[1];
  double fg_count = 0.0;
  for (double v : gt_hw.data) fg_count += v;
  const double n = static_cast<double>(gt_hw.numel());
  const double mu = fg_count / n;

  double pred_mean = 0.0;
  for (double v : pred_hw.data) pred_mean += v;
  pred_mean /= n;
  if (mu == 0.0) return 1.0 - pred_mean;
  if (mu == 1.0) return pred_mean;

  // Object-aware: foreground judged on pred, background on its complement.
  std::vector<double> fg_vals, bg_vals;
  for (size_t i = 0; i < pred_hw.data.size(); ++i) {
    if (gt_hw.data[i] == 1.0) fg_vals.push_back(pred_hw.data[i]);
    else bg_vals.push_back(1.0 - pred_hw.data[i]);
  }
  const double s_object = mu * object_score(fg_vals) + (1.0 - mu) * object_score(bg_vals);

  // Region-aware: four quadrants about the foreground centroid.
  double cy_acc = 0.0, cx_acc = 0.0;
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      if (gt_hw.at2(y, x) == 1.0) {
        cy_acc += static_cast<double>(y);
        cx_acc += static_cast<double>(x);
      }
  const int64_t cy = std::clamp<int64_t>(std::llround(cy_acc / fg_count), 0, H - 1);
  const int64_t cx = std::clamp<int64_t>(std::llround(cx_acc / fg_count), 0, W - 1);

  double s_region = 0.0;
  const int64_t row_lo[2] = {0, cy + 1}, row_hi[2] = {cy + 1, H};
  const int64_t col_lo[2] = {0, cx + 1}, col_hi[2] = {cx + 1, W};
  for (int qy = 0; qy < 2; ++qy)
    for (int qx = 0; qx < 2; ++qx) {
      std::vector<double> px, gx;
      for (int64_t y = row_lo[qy]; y < row_hi[qy]; ++y)
        for (int64_t x = col_lo[qx]; x < col_hi[qx]; ++x) {
          px.push_back(pred_hw.at2(y, x));
          gx.push_back(gt_hw.at2(y, x));
        }
      if (px.empty()) continue;
      const double w = static_cast<double>(px.size()) / n;
      s_region += w * region_ssim(px, gx);
    }

  const double s = alpha * s_object + (1.0 - alpha) * s_region;
  return std::min(1.0, std::max(0.0, s));
}

double e_measure(const Tensor& pred_hw, const Tensor& gt_hw) {
  validate_pair(pred_hw, gt_hw);
  const double n = static_cast<double>(pred_hw.numel());
  const double tau = adaptive_threshold(pred_hw);

  double gt_fg = 0.0, dm_sum = 0.0;
  std::vector<double> dm(pred_hw.data.size());
  for (size_t i = 0; i < pred_hw.data.size(); ++i) {
    dm[i] = pred_hw.data[i] >= tau ? 1.0 : 0.0;
    dm_sum += dm[i];
    gt_fg += gt_hw.data[i];
  }

  double acc = 0.0;
  if (gt_fg == 0.0) {
    for (double v : dm) acc += 1.0 - v;
  } else if (gt_fg == n) {
    for (double v : dm) acc += v;
  } else {
    const double gt_mu = gt_fg / n;
    const double dm_mu = dm_sum / n;
    for (size_t i = 0; i < dm.size(); ++i) {
      const double gc = gt_hw.data[i] - gt_mu;
      const double dc = dm[i] - dm_mu;
      const double align = 2.0 * gc * dc / (gc * gc + dc * dc + kEps);
      acc += (align + 1.0) * (align + 1.0) / 4.0;
    }
  }
  return std::min(1.0, std::max(0.0, acc / n));
}

MetricReport evaluate_metrics(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
  if (preds.size() != gts.size()) throw NumericError("prediction/ground-truth count mismatch");
  if (preds.empty()) throw NumericError("cannot evaluate zero samples");
  MetricReport r;
  r.rows.reserve(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    MetricRow row;
    row.sample_id = static_cast<int64_t>(i);
    row.mae = mae(preds[i], gts[i]);
    row.f_beta = f_beta(preds[i], gts[i]);
    row.e_phi = e_measure(preds[i], gts[i]);
    row.s_alpha = s_measure(preds[i], gts[i]);
    r.rows.push_back(row);
  }
  const double n = static_cast<double>(r.rows.size());
  for (const MetricRow& row : r.rows) {
    r.mae += row.mae;
    r.f_beta += row.f_beta;
    r.e_phi += row.e_phi;
    r.s_alpha += row.s_alpha;
  }
  r.mae /= n;
  r.f_beta /= n;
  r.e_phi /= n;
  r.s_alpha /= n;
  return r;
}

std::string metric_report_json_text(const MetricReport& r) {
  nlohmann::json j;
  j["count"] = r.rows.size();
  j["mean"] = {{"mae", r.mae}, {"f_beta", r.f_beta}, {"e_phi", r.e_phi}, {"s_alpha", r.s_alpha}};
  nlohmann::json samples = nlohmann::json::array();
  for (const MetricRow& row : r.rows)
    samples.push_back({{"sample_id", row.sample_id},
                       {"mae", row.mae},
                       {"f_beta", row.f_beta},
                       {"e_phi", row.e_phi},
                       {"s_alpha", row.s_alpha}});
  j["samples"] = std::move(samples);
  return j.dump(2) + "\n";
}

void write_metric_report_json(const std::filesystem::path& path, const MetricReport& r) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write metric report: " + path.string());
  os << metric_report_json_text(r);
  if (!os) throw IoError("metric report write failed: " + path.string());
}

void write_metric_report_csv(const std::filesystem::path& path, const MetricReport& r) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write metric table: " + path.string());
  os << "sample_id,mae,f_beta,e_phi,s_alpha\n";
  os.precision(17);
  for (const MetricRow& row : r.rows)
    os << row.sample_id << "," << row.mae << "," << row.f_beta << "," << row.e_phi << ","
       << row.s_alpha << "\n";
  if (!os) throw IoError("metric table write failed: " + path.string());
}

} // namespace scaler
