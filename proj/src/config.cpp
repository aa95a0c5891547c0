#include "cycledepth/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace cycledepth {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("config: unknown key \"" + where + it.key() + "\"");
    }
  }
}

template <typename T>
void read_into(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad value for \"") + key + "\"");
  }
}

std::pair<i64, i64> line_col_of_offset(const std::string& text, size_t offset) {
  i64 line = 1, col = 1;
  for (size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

DistMode dist_mode_from_string(const std::string& s) {
  if (s == "none") return DistMode::none;
  if (s == "disparity") return DistMode::disparity;
  if (s == "feature") return DistMode::feature;
  throw ConfigError("config: dist_mode must be none|disparity|feature, got \"" + s + "\"");
}

ReconVariant recon_variant_from_string(const std::string& s) {
  if (s == "downsampled_compare") return ReconVariant::downsampled_compare;
  if (s == "upsample_full") return ReconVariant::upsample_full;
  throw ConfigError("config: recon_variant must be downsampled_compare|upsample_full, got \"" + s +
                    "\"");
}

}  // namespace

ScheduleConfig RunConfig::make_schedule_config() const {
  ScheduleConfig sc;
  sc.batch_size = schedule.batch_size;
  sc.run_seed = network.seed;
  sc.stages = make_schedule(loss, schedule.scale_factor,
                            std::span<const StageOverride>(schedule.stages.data(),
                                                           schedule.stages.size()));
  if (schedule.steps_per_epoch > 0) {
    for (auto& stage : sc.stages) {
      bool overridden = false;
      for (const auto& o : schedule.stages) {
        if (o.name == to_string(stage.name) && o.steps_per_epoch) overridden = true;
      }
      if (!overridden) stage.steps_per_epoch = schedule.steps_per_epoch;
    }
  }
  return sc;
}

CameraParams RunConfig::camera() const {
  const double fb = data.fb > 0 ? data.fb : 0.15 * static_cast<double>(data.width);
  return CameraParams{static_cast<double>(data.width), fb / static_cast<double>(data.width)};
}

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_col_of_offset(json_text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError("config: malformed JSON at line " + std::to_string(line) + ", column " +
                      std::to_string(col));
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");

  RunConfig cfg;
  reject_unknown_keys(doc, {"data", "network", "optimizer", "schedule", "loss", "eval"}, "");

  if (doc.contains("data")) {
    const json& d = doc.at("data");
    reject_unknown_keys(d, {"root", "width", "height", "count", "seed", "fb"}, "data.");
    read_into(d, "root", cfg.data.root);
    read_into(d, "width", cfg.data.width);
    read_into(d, "height", cfg.data.height);
    read_into(d, "count", cfg.data.count);
    read_into(d, "seed", cfg.data.seed);
    read_into(d, "fb", cfg.data.fb);
    if (cfg.data.width <= 0 || cfg.data.height <= 0) {
      throw ConfigError("config: data.width/height must be positive");
    }
    if (cfg.data.count < 2) throw ConfigError("config: data.count must be >= 2");
  }

  if (doc.contains("network")) {
    const json& n = doc.at("network");
    reject_unknown_keys(n, {"base_channels", "levels", "d_max_fraction", "seed"}, "network.");
    read_into(n, "base_channels", cfg.network.base_channels);
    read_into(n, "levels", cfg.network.num_encoder_levels);
    read_into(n, "d_max_fraction", cfg.network.d_max_fraction);
    read_into(n, "seed", cfg.network.seed);
    try {
      cfg.network.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  if (doc.contains("optimizer")) {
    const json& o = doc.at("optimizer");
    reject_unknown_keys(o, {"lr", "beta1", "beta2", "eps", "weight_decay"}, "optimizer.");
    read_into(o, "lr", cfg.optimizer.learning_rate);
    read_into(o, "beta1", cfg.optimizer.beta1);
    read_into(o, "beta2", cfg.optimizer.beta2);
    read_into(o, "eps", cfg.optimizer.epsilon);
    read_into(o, "weight_decay", cfg.optimizer.weight_decay);
    try {
      cfg.optimizer.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  bool lambda_dist_given = false;
  if (doc.contains("loss")) {
    const json& l = doc.at("loss");
    reject_unknown_keys(
        l, {"alpha", "recon_variant", "dist_mode", "lambda_s", "lambda_b", "lambda_t", "lambda_dist"},
        "loss.");
    read_into(l, "alpha", cfg.loss.alpha);
    read_into(l, "lambda_s", cfg.loss.lambda_s);
    read_into(l, "lambda_b", cfg.loss.lambda_b);
    read_into(l, "lambda_t", cfg.loss.lambda_t);
    if (l.contains("dist_mode")) {
      cfg.loss.dist_mode = dist_mode_from_string(l.at("dist_mode").get<std::string>());
    }
    if (l.contains("recon_variant")) {
      cfg.loss.recon_variant = recon_variant_from_string(l.at("recon_variant").get<std::string>());
    }
    if (l.contains("lambda_dist")) {
      read_into(l, "lambda_dist", cfg.loss.lambda_dist);
      lambda_dist_given = true;
    }
  }
  if (!lambda_dist_given) {
    switch (cfg.loss.dist_mode) {
      case DistMode::disparity: cfg.loss.lambda_dist = 0.1; break;
      case DistMode::feature: cfg.loss.lambda_dist = 0.005; break;
      case DistMode::none: cfg.loss.lambda_dist = 0.0; break;
    }
  }
  try {
    cfg.loss.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (doc.contains("schedule")) {
    const json& s = doc.at("schedule");
    reject_unknown_keys(s, {"batch_size", "scale_factor", "steps_per_epoch", "stages"},
                        "schedule.");
    read_into(s, "batch_size", cfg.schedule.batch_size);
    read_into(s, "scale_factor", cfg.schedule.scale_factor);
    read_into(s, "steps_per_epoch", cfg.schedule.steps_per_epoch);
    if (cfg.schedule.batch_size < 1) throw ConfigError("config: schedule.batch_size must be >= 1");
    if (cfg.schedule.scale_factor < 0) {
      throw ConfigError("config: schedule.scale_factor must be >= 0");
    }
    if (s.contains("stages")) {
      if (!s.at("stages").is_array()) throw ConfigError("config: schedule.stages must be an array");
      for (const json& e : s.at("stages")) {
        reject_unknown_keys(
            e, {"name", "epochs", "steps_per_epoch", "lambda_s", "lambda_b", "lambda_t", "lambda_dist"},
            "schedule.stages[].");
        StageOverride o;
        if (!e.contains("name")) throw ConfigError("config: stage override needs a name");
        o.name = e.at("name").get<std::string>();
        stage_from_string(o.name);  // validates
        if (e.contains("epochs")) o.epochs = e.at("epochs").get<i64>();
        if (e.contains("steps_per_epoch")) o.steps_per_epoch = e.at("steps_per_epoch").get<i64>();
        if (e.contains("lambda_s")) o.lambda_s = e.at("lambda_s").get<double>();
        if (e.contains("lambda_b")) o.lambda_b = e.at("lambda_b").get<double>();
        if (e.contains("lambda_t")) o.lambda_t = e.at("lambda_t").get<double>();
        if (e.contains("lambda_dist")) o.lambda_dist = e.at("lambda_dist").get<double>();
        cfg.schedule.stages.push_back(std::move(o));
      }
    }
  }

  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    reject_unknown_keys(e, {"cap_meters"}, "eval.");
    read_into(e, "cap_meters", cfg.eval.cap_meters);
    if (cfg.eval.cap_meters <= 0) throw ConfigError("config: eval.cap_meters must be positive");
  }

  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

}  // namespace cycledepth
