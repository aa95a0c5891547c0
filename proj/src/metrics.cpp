#include "cycledepth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cycledepth {

std::string EvalReport::to_json() const {
  std::ostringstream os;
  os.precision(12);
  os << "{\"abs_rel\":" << abs_rel << ",\"sq_rel\":" << sq_rel << ",\"rmse\":" << rmse
     << ",\"rmse_log\":" << rmse_log << ",\"a1\":" << a1 << ",\"a2\":" << a2 << ",\"a3\":" << a3
     << ",\"pixels\":" << pixels << ",\"cap_meters\":" << cap_meters << "}";
  return os.str();
}

EvalReport compute_metrics(std::span<const double> pred_depth, std::span<const double> gt_depth,
                           double cap_meters) {
  if (pred_depth.size() != gt_depth.size()) {
    throw ShapeError("metrics: pred length " + std::to_string(pred_depth.size()) +
                     " vs gt length " + std::to_string(gt_depth.size()));
  }
  if (cap_meters <= kMinDepthMeters) throw ValueError("metrics: cap_meters too small");

  double sum_abs_rel = 0, sum_sq_rel = 0, sum_sq = 0, sum_sq_log = 0;
  i64 n1 = 0, n2 = 0, n3 = 0, valid = 0;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (size_t i = 0; i < gt_depth.size(); ++i) {
    if (!(gt_depth[i] > 0)) continue;
    ++valid;
    const double gt = std::clamp(gt_depth[i], kMinDepthMeters, cap_meters);
    const double pred = std::clamp(pred_depth[i], kMinDepthMeters, cap_meters);
    const double diff = pred - gt;
    sum_abs_rel += std::abs(diff) / gt;
    sum_sq_rel += diff * diff / gt;
    sum_sq += diff * diff;
    const double dlog = std::log(pred) - std::log(gt);
    sum_sq_log += dlog * dlog;
    const double ratio = std::max(pred / gt, gt / pred);
    if (ratio < t1) ++n1;
    if (ratio < t2) ++n2;
    if (ratio < t3) ++n3;
  }
  if (valid == 0) throw ValueError("metrics: no valid pixels (gt > 0)");

  EvalReport r;
  const double inv = 1.0 / static_cast<double>(valid);
  r.abs_rel = sum_abs_rel * inv;
  r.sq_rel = sum_sq_rel * inv;
  r.rmse = std::sqrt(sum_sq * inv);
  r.rmse_log = std::sqrt(sum_sq_log * inv);
  r.a1 = static_cast<double>(n1) * inv;
  r.a2 = static_cast<double>(n2) * inv;
  r.a3 = static_cast<double>(n3) * inv;
  r.pixels = valid;
  r.cap_meters = cap_meters;
  return r;
}

}  // namespace cycledepth
