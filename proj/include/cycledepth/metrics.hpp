#pragma once

#include <span>
#include <string>

#include "cycledepth/common.hpp"

namespace cycledepth {

// The seven standard depth-evaluation statistics, pooled over all valid
// pixels of a test set.
struct EvalReport {
  double abs_rel = 0;
  double sq_rel = 0;
  double rmse = 0;
  double rmse_log = 0;
  double a1 = 0;
  double a2 = 0;
  double a3 = 0;
  i64 pixels = 0;
  double cap_meters = 0;

  std::string to_json() const;
};

inline constexpr double kMinDepthMeters = 0.1;

// Pixels with gt > 0 are valid; both arrays are clipped to
// [kMinDepthMeters, cap_meters] before comparison. Accuracy thresholds are
// 1.25, 1.25^2 and 1.25^3.
EvalReport compute_metrics(std::span<const double> pred_depth, std::span<const double> gt_depth,
                           double cap_meters);

}  // namespace cycledepth
