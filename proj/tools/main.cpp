// Command-line front end: dataset generation, staged training, evaluation,
// single-image inference and the gradient-check harness.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cycledepth/gradcheck.hpp"
#include "cycledepth/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cycledepth;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitState = 3;
constexpr int kExitNumeric = 4;

nlohmann::json network_manifest(const NetworkConfig& nc) {
  return {{"network",
           {{"base_channels", nc.base_channels},
            {"levels", nc.num_encoder_levels},
            {"d_max_fraction", nc.d_max_fraction},
            {"seed", nc.seed}}}};
}

NetworkConfig network_from_manifest(const nlohmann::json& manifest) {
  if (!manifest.contains("network")) {
    throw StateError("checkpoint manifest carries no network section");
  }
  const auto& n = manifest.at("network");
  NetworkConfig nc;
  nc.base_channels = n.at("base_channels").get<i64>();
  nc.num_encoder_levels = n.at("levels").get<i64>();
  nc.d_max_fraction = n.at("d_max_fraction").get<double>();
  nc.seed = n.at("seed").get<u64>();
  return nc;
}

void apply_camera(Dataset& ds, const CameraParams& camera) {
  ds.camera = camera;
  for (auto& s : ds.train) s.camera = camera;
  for (auto& s : ds.heldout) s.camera = camera;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_run_config(config_path);
  Dataset ds = make_dataset(cfg.data.count, cfg.data.width, cfg.data.height, cfg.data.seed);
  apply_camera(ds, cfg.camera());
  save_dataset(out_dir, ds);
  std::cout << "wrote " << ds.train.size() << " train and " << ds.heldout.size()
            << " held-out samples to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& stage_name) {
  RunConfig cfg = load_run_config(config_path);
  Dataset ds = load_dataset(data_dir);
  NetworkBundle<float> bundle = make_bundle<float>(cfg.network);
  ScheduleConfig sched = cfg.make_schedule_config();
  fs::create_directories(out_dir);

  std::ofstream log_file(fs::path(out_dir) / "train_log.jsonl", std::ios::app);
  if (!log_file) throw StateError("train: cannot open log file in " + out_dir);
  auto sink = [&](const LogRecord& rec) { log_file << rec.json_line() << "\n"; };

  auto ckpt_path = [&](int idx) {
    return (fs::path(out_dir) / stage_checkpoint_name(idx, kStageOrder[static_cast<size_t>(idx)]))
        .string();
  };

  const nlohmann::json extra = network_manifest(cfg.network);
  auto params = bundle.all_parameters();

  if (!stage_name.empty()) {
    const StageName stage = stage_from_string(stage_name);
    const int idx = stage_index(stage);
    if (idx > 0) {
      const std::string prev = ckpt_path(idx - 1);
      if (!fs::exists(prev)) {
        throw StateError("train: stage " + stage_name + " requires completed predecessor " +
                         std::string(to_string(kStageOrder[static_cast<size_t>(idx - 1)])) +
                         " (missing " + prev + ")");
      }
      load_checkpoint(prev, params);
    }
    StageResult result = run_stage(sched.stages[static_cast<size_t>(idx)], ds, bundle,
                                   cfg.optimizer, sched.batch_size, sched.run_seed, sink);
    save_checkpoint(ckpt_path(idx), params, extra);
    std::cout << "stage " << stage_name << " done: " << result.log.size() << " steps\n";
    for (const auto& name : result.skipped_params) {
      std::cerr << "warning: no gradient for " << name << "\n";
    }
    return kExitOk;
  }

  // Full schedule; existing consecutive stage checkpoints are reused.
  int completed = 0;
  while (completed < static_cast<int>(kStageOrder.size()) && fs::exists(ckpt_path(completed))) {
    ++completed;
  }
  if (completed > 0) {
    load_checkpoint(ckpt_path(completed - 1), params);
    std::cout << "resuming after stage " << completed << "\n";
  }
  for (int i = completed; i < static_cast<int>(kStageOrder.size()); ++i) {
    const StageConfig& stage = sched.stages[static_cast<size_t>(i)];
    StageResult result = run_stage(stage, ds, bundle, cfg.optimizer, sched.batch_size,
                                   sched.run_seed, sink);
    save_checkpoint(ckpt_path(i), params, extra);
    std::cout << "stage " << to_string(stage.name) << " done: " << result.log.size()
              << " steps\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& data_dir,
             const std::string& checkpoint, const std::string& which) {
  RunConfig cfg = load_run_config(config_path);
  Dataset ds = load_dataset(data_dir);
  if (ds.heldout.empty()) throw StateError("eval: dataset has no held-out samples");
  nlohmann::json manifest = load_checkpoint_manifest(checkpoint);
  NetworkBundle<float> bundle = make_bundle<float>(network_from_manifest(manifest));
  load_checkpoint(checkpoint, bundle.all_parameters());

  auto emit = [&](const char* tag, bool use_teacher) {
    EvalReport report =
        evaluate(bundle, std::span<const StereoSample>(ds.heldout), use_teacher,
                 cfg.eval.cap_meters);
    std::cout << "{\"" << tag << "\":" << report.to_json() << "}\n";
  };
  if (which == "student" || which == "both") emit("student", false);
  if (which == "teacher" || which == "both") emit("teacher", true);
  return kExitOk;
}

int cmd_infer(const std::string& checkpoint, const std::string& image_path,
              const std::string& out_dir) {
  nlohmann::json manifest = load_checkpoint_manifest(checkpoint);
  NetworkBundle<float> bundle = make_bundle<float>(network_from_manifest(manifest));
  load_checkpoint(checkpoint, bundle.all_parameters());

  ImageF img = load_ppm(image_path);
  std::vector<float> data(img.data.begin(), img.data.end());
  Tensor<float> input =
      Tensor<float>::from_vector(Shape{1, 3, img.height, img.width}, std::move(data));
  ForwardOutputs<float> out = student_forward(input, bundle);
  const Tensor<float>& d0 = out.disparities[0].tensor;

  fs::create_directories(out_dir);
  ImageF disp(1, img.height, img.width);
  std::copy(d0.data().begin(), d0.data().end(), disp.data.begin());
  save_pfm((fs::path(out_dir) / "disp.pfm").string(), disp);

  // Color map: t = disparity / d_max (proportional to inverse depth),
  // linear blend from cool (far) to warm (near).
  const double d_max = bundle.d_max_for_width(img.width);
  ImageF depth_vis(3, img.height, img.width);
  for (i64 y = 0; y < img.height; ++y) {
    for (i64 x = 0; x < img.width; ++x) {
      const double t =
          std::min(1.0, std::max(0.0, static_cast<double>(disp.at(0, y, x)) / d_max));
      depth_vis.at(0, y, x) = static_cast<float>(0.10 + 0.85 * t);
      depth_vis.at(1, y, x) = static_cast<float>(0.20 + 0.15 * t);
      depth_vis.at(2, y, x) = static_cast<float>(0.90 - 0.80 * t);
    }
  }
  save_ppm((fs::path(out_dir) / "depth.ppm").string(), depth_vis);
  std::cout << "wrote " << (fs::path(out_dir) / "disp.pfm").string() << " and "
            << (fs::path(out_dir) / "depth.ppm").string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(u64 seed, int num_seeds, const std::string& corrupt_op) {
  auto rows = run_gradcheck(seed, num_seeds, corrupt_op);
  bool all_pass = true;
  std::printf("%-42s %-14s %s\n", "op", "max_rel_err", "status");
  for (const auto& row : rows) {
    std::printf("%-42s %-14.3e %s\n", row.op.c_str(), row.max_rel_err,
                row.pass ? "PASS" : "FAIL");
    all_pass = all_pass && row.pass;
  }
  if (!all_pass) {
    for (const auto& row : rows) {
      if (!row.pass) std::cerr << "gradcheck failed: " << row.op << "\n";
    }
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cycledepth: self-supervised stereo-cycle monocular depth estimation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, checkpoint, image_path;
  std::string stage_name, which = "both", corrupt_op;
  u64 seed = 1;
  int num_seeds = 5;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic stereo dataset");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "run one stage or the full schedule");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "run directory for checkpoints and logs")->required();
  train->add_option("--stage", stage_name, "single stage to run");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
  eval_cmd->add_option("--config", config_path, "run config JSON")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint manifest path")->required();
  eval_cmd->add_option("--which", which, "student|teacher|both")
      ->check(CLI::IsMember({"student", "teacher", "both"}));

  CLI::App* infer = app.add_subcommand("infer", "predict disparity and depth for one image");
  infer->add_option("--checkpoint", checkpoint, "checkpoint manifest path")->required();
  infer->add_option("--image", image_path, "input PPM image")->required();
  infer->add_option("--out", out_dir, "output directory")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");
  gc->add_option("--seed", seed, "base seed");
  gc->add_option("--seeds", num_seeds, "number of seeds")->check(CLI::PositiveNumber);
  gc->add_option("--corrupt-op", corrupt_op, "test fixture: corrupt one op's gradient")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
    if (train->parsed()) return cmd_train(config_path, data_dir, out_dir, stage_name);
    if (eval_cmd->parsed()) return cmd_eval(config_path, data_dir, checkpoint, which);
    if (infer->parsed()) return cmd_infer(checkpoint, image_path, out_dir);
    if (gc->parsed()) return cmd_gradcheck(seed, num_seeds, corrupt_op);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const StateError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitState;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
