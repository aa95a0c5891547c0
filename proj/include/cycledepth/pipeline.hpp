#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>

#include "cycledepth/checkpoint.hpp"
#include "cycledepth/losses.hpp"
#include "cycledepth/metrics.hpp"

namespace cycledepth {

// ---- cycle forward -------------------------------------------------------

// Generic wiring of the synthesis cycle over injectable network callables;
// the bundle-backed overload below is the production path.
template <typename T, typename StudentFn, typename BackwardFn, typename TeacherFn>
CycleOutputs<T> cycle_forward_with(const Tensor<T>& right_image, StudentFn&& student,
                                   BackwardFn&& backward_net, TeacherFn&& teacher,
                                   bool include_backward, bool include_teacher) {
  CycleOutputs<T> out;
  out.student = student(right_image);
  out.left_synth = warp(out.student.disparities[0], right_image, WarpDirection::synthesize_left);
  if (include_backward || include_teacher) {
    out.backward_net = backward_net(out.left_synth);
    out.right_synth =
        warp(out.backward_net->disparities[0], out.left_synth, WarpDirection::synthesize_right);
    out.inconsistency = sub(right_image, out.right_synth);
  }
  if (include_teacher) {
    std::array<DisparityMap<T>, 3> multi = {out.student.disparities[1],
                                            out.student.disparities[2],
                                            out.student.disparities[3]};
    out.refined = teacher(right_image, out.inconsistency, out.student.disparities[0], multi);
    out.left_synth_refined =
        warp(out.refined->disparities[0], right_image, WarpDirection::synthesize_left);
  }
  return out;
}

template <typename T>
CycleOutputs<T> forward_cycle(const Tensor<T>& right_image, const NetworkBundle<T>& bundle,
                              bool include_backward, bool include_teacher) {
  return cycle_forward_with<T>(
      right_image, [&](const Tensor<T>& x) { return student_forward(x, bundle); },
      [&](const Tensor<T>& x) { return backward_forward(x, bundle); },
      [&](const Tensor<T>& x, const Tensor<T>& inc, const DisparityMap<T>& d0,
          const std::array<DisparityMap<T>, 3>& multi) {
        return inconsistency_forward(x, inc, d0, multi, bundle);
      },
      include_backward, include_teacher);
}

// The spec'd entry point: the backward half-cycle (and with it the
// inconsistency tensor) is always produced.
template <typename T>
CycleOutputs<T> cycle_forward(const Tensor<T>& right_image, const NetworkBundle<T>& bundle,
                              bool include_teacher) {
  return forward_cycle(right_image, bundle, true, include_teacher);
}

// ---- stages ----------------------------------------------------------------

enum class StageName { half_cycle, backward_decoder, joint_cycle, teacher_pretrain, joint_finetune };

inline constexpr std::array<StageName, 5> kStageOrder = {
    StageName::half_cycle, StageName::backward_decoder, StageName::joint_cycle,
    StageName::teacher_pretrain, StageName::joint_finetune};

inline const char* to_string(StageName s) {
  switch (s) {
    case StageName::half_cycle: return "half_cycle";
    case StageName::backward_decoder: return "backward_decoder";
    case StageName::joint_cycle: return "joint_cycle";
    case StageName::teacher_pretrain: return "teacher_pretrain";
    case StageName::joint_finetune: return "joint_finetune";
  }
  return "?";
}

inline StageName stage_from_string(const std::string& name) {
  for (StageName s : kStageOrder) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown stage name: " + name);
}

inline int stage_index(StageName s) {
  for (size_t i = 0; i < kStageOrder.size(); ++i) {
    if (kStageOrder[i] == s) return static_cast<int>(i);
  }
  return -1;
}

struct StageConfig {
  StageName name = StageName::half_cycle;
  i64 epochs = 0;
  i64 steps_per_epoch = 0;  // 0: floor(train_size / batch_size)
  LossWeights weights;
  std::vector<std::string> trainable;

  void validate() const {
    if (trainable.empty()) throw ConfigError("stage: trainable set must be non-empty");
    if (epochs < 0 || steps_per_epoch < 0) throw ConfigError("stage: negative step counts");
    weights.validate();
  }
};

// Per-stage weight presets. `base` supplies the configured lambda values,
// alpha, reconstruction variant and distillation mode; each stage activates
// the subset of terms it trains with.
inline StageConfig stage_preset(StageName name, const LossWeights& base) {
  StageConfig s;
  s.name = name;
  s.weights = base;
  s.weights.dist_mode = DistMode::none;
  s.weights.lambda_dist = 0;
  switch (name) {
    case StageName::half_cycle:
      s.epochs = 10;
      s.weights.lambda_b = 0;
      s.weights.lambda_t = 0;
      s.trainable = {"encoder_shared", "decoder_s"};
      break;
    case StageName::backward_decoder:
      s.epochs = 5;
      s.weights.lambda_s = 0;
      s.weights.lambda_t = 0;
      s.trainable = {"decoder_b"};
      break;
    case StageName::joint_cycle:
      s.epochs = 10;
      s.weights.lambda_t = 0;
      s.trainable = {"encoder_shared", "decoder_s", "decoder_b"};
      break;
    case StageName::teacher_pretrain:
      s.epochs = 5;
      s.weights.lambda_s = 0;
      s.weights.lambda_b = 0;
      s.trainable = {"encoder_i", "decoder_i"};
      break;
    case StageName::joint_finetune:
      s.epochs = 10;
      s.weights.dist_mode = base.dist_mode;
      s.weights.lambda_dist = base.lambda_dist;
      s.trainable = {"encoder_shared", "decoder_s", "decoder_b", "encoder_i", "decoder_i"};
      break;
  }
  return s;
}

struct StageOverride {
  std::string name;
  std::optional<i64> epochs;
  std::optional<i64> steps_per_epoch;
  std::optional<double> lambda_s;
  std::optional<double> lambda_b;
  std::optional<double> lambda_t;
  std::optional<double> lambda_dist;
};

inline std::vector<StageConfig> make_schedule(const LossWeights& base, double scale_factor,
                                              std::span<const StageOverride> overrides = {}) {
  std::vector<StageConfig> stages;
  for (StageName name : kStageOrder) {
    StageConfig s = stage_preset(name, base);
    s.epochs = static_cast<i64>(std::llround(static_cast<double>(s.epochs) * scale_factor));
    for (const StageOverride& o : overrides) {
      if (o.name != to_string(name)) continue;
      if (o.epochs) s.epochs = *o.epochs;
      if (o.steps_per_epoch) s.steps_per_epoch = *o.steps_per_epoch;
      if (o.lambda_s) s.weights.lambda_s = *o.lambda_s;
      if (o.lambda_b) s.weights.lambda_b = *o.lambda_b;
      if (o.lambda_t) s.weights.lambda_t = *o.lambda_t;
      if (o.lambda_dist) s.weights.lambda_dist = *o.lambda_dist;
    }
    s.validate();
    stages.push_back(std::move(s));
  }
  return stages;
}

// ---- training loop ---------------------------------------------------------

struct LogRecord {
  std::string stage;
  i64 epoch = 0;
  i64 step = 0;  // step index within the stage
  double total = 0;
  double rec_s = 0;
  double rec_b = 0;
  double rec_t = 0;
  double dist = 0;
  double wall_ms = 0;

  std::string json_line() const {
    std::ostringstream os;
    os.precision(10);
    os << "{\"stage\":\"" << stage << "\",\"epoch\":" << epoch << ",\"step\":" << step
       << ",\"total\":" << total << ",\"rec_s\":" << rec_s << ",\"rec_b\":" << rec_b
       << ",\"rec_t\":" << rec_t << ",\"dist\":" << dist << ",\"wall_ms\":" << wall_ms << "}";
    return os.str();
  }
};

struct StageResult {
  std::vector<LogRecord> log;
  std::vector<std::string> skipped_params;
};

namespace pipeline_detail {

// Deterministic sampler: walks a permutation of the training indices and
// reshuffles whenever fewer than a full batch remains.
class BatchSampler {
 public:
  BatchSampler(i64 count, i64 batch, u64 seed) : count_(count), batch_(batch), rng_(seed) {
    perm_.resize(static_cast<size_t>(count));
    std::iota(perm_.begin(), perm_.end(), i64(0));
    pos_ = count_;  // force an initial shuffle
  }

  std::vector<i64> next() {
    if (pos_ + batch_ > count_) {
      for (i64 i = count_ - 1; i > 0; --i) {
        const i64 j = rng_.uniform_int(0, i);
        std::swap(perm_[static_cast<size_t>(i)], perm_[static_cast<size_t>(j)]);
      }
      pos_ = 0;
    }
    std::vector<i64> out(perm_.begin() + pos_, perm_.begin() + pos_ + batch_);
    pos_ += batch_;
    return out;
  }

 private:
  i64 count_;
  i64 batch_;
  Rng rng_;
  std::vector<i64> perm_;
  i64 pos_ = 0;
};

}  // namespace pipeline_detail

template <typename T>
StageResult run_stage(const StageConfig& stage, const Dataset& dataset, NetworkBundle<T>& bundle,
                      const OptimizerConfig& opt, i64 batch_size, u64 run_seed,
                      const std::function<void(const LogRecord&)>& log_sink = {}) {
  stage.validate();
  opt.validate();
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  const i64 train_count = static_cast<i64>(dataset.train.size());
  if (train_count < batch_size) {
    throw StateError("train: dataset has " + std::to_string(train_count) +
                     " training samples, need at least one batch of " +
                     std::to_string(batch_size));
  }

  std::vector<std::shared_ptr<Parameter<T>>> trainable;
  for (const std::string& g : stage.trainable) {
    const auto& group = bundle.group(g);
    trainable.insert(trainable.end(), group.begin(), group.end());
  }

  const LossWeights& w = stage.weights;
  const bool need_teacher = w.lambda_t > 0 || w.dist_mode != DistMode::none;
  const bool need_backward = need_teacher || w.lambda_b > 0;
  const i64 steps_per_epoch =
      stage.steps_per_epoch > 0 ? stage.steps_per_epoch : train_count / batch_size;

  const u64 stage_tag = static_cast<u64>(stage_index(stage.name));
  pipeline_detail::BatchSampler sampler(train_count, batch_size,
                                        derive_seed(run_seed, stage_tag * 2 + 1));
  Rng flip_rng(derive_seed(run_seed, stage_tag * 2 + 2));

  StageResult result;
  std::vector<std::string> skipped_seen;
  i64 step_in_stage = 0;
  for (i64 epoch = 0; epoch < stage.epochs; ++epoch) {
    for (i64 s = 0; s < steps_per_epoch; ++s) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<i64> idx = sampler.next();
      std::vector<StereoSample> staged;
      staged.reserve(idx.size());
      for (i64 i : idx) {
        staged.push_back(
            augment_flip(dataset.train[static_cast<size_t>(i)], flip_rng.bernoulli(0.5)));
      }
      std::vector<const StereoSample*> ptrs;
      for (const auto& sample : staged) ptrs.push_back(&sample);
      Batch<T> batch = make_batch<T>(std::span<const StereoSample* const>(ptrs.data(), ptrs.size()));

      CycleOutputs<T> cycle = forward_cycle(batch.right, bundle, need_backward, need_teacher);
      LossBreakdown<T> breakdown = compute_objective(cycle, batch, w);
      if (!std::isfinite(breakdown.total_value)) {
        throw NumericError("train: non-finite loss at stage " + std::string(to_string(stage.name)) +
                           " step " + std::to_string(step_in_stage));
      }
      backward(breakdown.total);
      auto skipped = adam_step<T>(trainable, opt);
      for (auto& name : skipped) {
        if (std::find(skipped_seen.begin(), skipped_seen.end(), name) == skipped_seen.end()) {
          skipped_seen.push_back(name);
        }
      }
      bundle.zero_all_grads();

      LogRecord rec;
      rec.stage = to_string(stage.name);
      rec.epoch = epoch;
      rec.step = step_in_stage;
      rec.total = breakdown.total_value;
      rec.rec_s = breakdown.rec_per_network[0];
      rec.rec_b = breakdown.rec_per_network[1];
      rec.rec_t = breakdown.rec_per_network[2];
      rec.dist = breakdown.dist;
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
      if (log_sink) log_sink(rec);
      result.log.push_back(std::move(rec));
      ++step_in_stage;
    }
  }
  result.skipped_params = std::move(skipped_seen);
  return result;
}

// ---- full schedule ----------------------------------------------------------

struct ScheduleConfig {
  std::vector<StageConfig> stages;  // must follow kStageOrder
  i64 batch_size = 8;
  u64 run_seed = 1;
};

inline std::string stage_checkpoint_name(int index, StageName name) {
  return "stage-" + std::to_string(index + 1) + "-" + to_string(name) + ".ckpt";
}

template <typename T>
std::vector<StageResult> run_full_schedule(const ScheduleConfig& config, const Dataset& dataset,
                                           NetworkBundle<T>& bundle, const OptimizerConfig& opt,
                                           const std::string& checkpoint_dir = "",
                                           const std::function<void(const LogRecord&)>& log_sink = {},
                                           const nlohmann::json& manifest_extra = {}) {
  if (config.stages.size() != kStageOrder.size()) {
    throw ConfigError("schedule: expected the five stages in order");
  }
  for (size_t i = 0; i < kStageOrder.size(); ++i) {
    if (config.stages[i].name != kStageOrder[i]) {
      throw ConfigError("schedule: stage " + std::to_string(i) + " must be " +
                        to_string(kStageOrder[i]));
    }
  }
  std::vector<StageResult> results;
  std::vector<std::string> completed;
  for (size_t i = 0; i < config.stages.size(); ++i) {
    const StageConfig& stage = config.stages[i];
    results.push_back(run_stage(stage, dataset, bundle, opt, config.batch_size, config.run_seed,
                                log_sink));
    if (!checkpoint_dir.empty()) {
      const std::string path =
          (std::filesystem::path(checkpoint_dir) /
           stage_checkpoint_name(static_cast<int>(i), stage.name))
              .string();
      try {
        save_checkpoint(path, bundle.all_parameters(), manifest_extra);
      } catch (const Error& e) {
        std::string done;
        for (const auto& c : completed) done += (done.empty() ? "" : ", ") + c;
        throw StateError("schedule: checkpoint write failed after completing [" + done +
                         "]: " + e.what());
      }
    }
    completed.push_back(to_string(stage.name));
  }
  return results;
}

// ---- evaluation --------------------------------------------------------------

inline constexpr double kEvalMinDisparity = 0.01;

template <typename T>
EvalReport evaluate(const NetworkBundle<T>& bundle, std::span<const StereoSample> samples,
                    bool use_teacher, double cap_meters) {
  if (samples.empty()) throw StateError("evaluate: no samples");
  std::vector<double> pred_depth;
  std::vector<double> gt_depth;
  for (const StereoSample& sample : samples) {
    if (!sample.gt_disparity) {
      throw StateError("evaluate: sample " + sample.id + " has no ground-truth disparity");
    }
    const StereoSample* ptr = &sample;
    Batch<T> batch = make_batch<T>(std::span<const StereoSample* const>(&ptr, 1));
    Tensor<T> disp;
    if (use_teacher) {
      CycleOutputs<T> cycle = forward_cycle(batch.right, bundle, true, true);
      disp = cycle.refined->disparities[0].tensor;
    } else {
      disp = student_forward(batch.right, bundle).disparities[0].tensor;
    }
    const double fb = sample.camera.fb();
    for (T v : disp.data()) {
      pred_depth.push_back(fb / std::max(static_cast<double>(v), kEvalMinDisparity));
    }
    for (float v : sample.gt_disparity->data) {
      gt_depth.push_back(fb / std::max(static_cast<double>(v), kEvalMinDisparity));
    }
  }
  return compute_metrics(pred_depth, gt_depth, cap_meters);
}

}  // namespace cycledepth
