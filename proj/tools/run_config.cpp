#include "run_config.hpp"

#include <fstream>

#include "affseg/errors.hpp"

namespace affseg::cli {

nlohmann::json default_config_json() {
  RunConfig defaults;
  nlohmann::json j;
  j["model"] = defaults.model;
  j["train"] = {
      {"epochs", defaults.train.epochs},
      {"switch_epoch", defaults.train.switch_epoch},
      {"lambda_first", {defaults.train.lambda_first.first, defaults.train.lambda_first.second}},
      {"lambda_second",
       {defaults.train.lambda_second.first, defaults.train.lambda_second.second}},
      {"learning_rate", defaults.train.learning_rate},
      {"batch_size", defaults.train.batch_size},
      {"seed", defaults.train.seed},
      {"checkpoint_every", defaults.train.checkpoint_every},
      {"parallel_batch", defaults.train.parallel_batch},
  };
  j["data"] = {
      {"root", defaults.data.root},
      {"target_fps", defaults.data.target_fps},
      {"max_depth_units", defaults.data.max_depth_units},
  };
  return j;
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  std::string pointer = "/" + assignment.substr(0, eq);
  for (auto& c : pointer) {
    if (c == '.') c = '/';
  }
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;  // unquoted string value
  }
  config[nlohmann::json::json_pointer(pointer)] = value;
}

namespace {

std::pair<double, double> read_pair(const nlohmann::json& j, const std::string& key) {
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.size() != 2) {
    throw ConfigError("config: " + key + " must be an array of two numbers");
  }
  return {arr[0].get<double>(), arr[1].get<double>()};
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& merged) {
  RunConfig cfg;
  try {
    if (merged.contains("model")) cfg.model = merged.at("model").get<ModelConfig>();
    if (merged.contains("train")) {
      const auto& t = merged.at("train");
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.switch_epoch = t.value("switch_epoch", cfg.train.switch_epoch);
      if (t.contains("lambda_first")) cfg.train.lambda_first = read_pair(t, "lambda_first");
      if (t.contains("lambda_second")) cfg.train.lambda_second = read_pair(t, "lambda_second");
      cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.seed = t.value("seed", cfg.train.seed);
      cfg.train.checkpoint_every = t.value("checkpoint_every", cfg.train.checkpoint_every);
      cfg.train.parallel_batch = t.value("parallel_batch", cfg.train.parallel_batch);
    }
    if (merged.contains("data")) {
      const auto& d = merged.at("data");
      cfg.data.root = d.value("root", cfg.data.root);
      cfg.data.target_fps = d.value("target_fps", cfg.data.target_fps);
      cfg.data.max_depth_units = d.value("max_depth_units", cfg.data.max_depth_units);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: malformed value: ") + e.what());
  }
  cfg.model.validate();
  cfg.train.validate();
  if (cfg.data.target_fps < 1) throw ConfigError("config: data.target_fps must be positive");
  if (cfg.data.max_depth_units <= 0.0) {
    throw ConfigError("config: data.max_depth_units must be positive");
  }
  return cfg;
}

}  // namespace affseg::cli
