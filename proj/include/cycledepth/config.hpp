#pragma once

#include <string>
#include <vector>

#include "cycledepth/data.hpp"
#include "cycledepth/networks.hpp"
#include "cycledepth/pipeline.hpp"

namespace cycledepth {

// Whole-run configuration. Defaults follow the reference training recipe:
// lr 1e-5, batch 8, alpha 0.85, the staged lambda presets and an 80 m
// evaluation cap. Unknown keys anywhere in the document are rejected.
struct RunConfig {
  struct DataSection {
    std::string root;
    i64 width = 64;
    i64 height = 32;
    i64 count = 200;
    u64 seed = 7;
    double fb = 0;  // 0: derived as 0.15 * width
  } data;

  NetworkConfig network;

  OptimizerConfig optimizer;

  struct ScheduleSection {
    i64 batch_size = 8;
    double scale_factor = 1.0;
    i64 steps_per_epoch = 0;  // 0: floor(train/batch); applies to all stages
    std::vector<StageOverride> stages;
  } schedule;

  LossWeights loss;  // lambda_dist filled from dist_mode when not set

  struct EvalSection {
    double cap_meters = 80.0;
  } eval;

  ScheduleConfig make_schedule_config() const;
  CameraParams camera() const;
};

// Parses and validates a config document. Malformed JSON raises ConfigError
// with 1-based line/column; unknown keys raise ConfigError naming the key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace cycledepth
