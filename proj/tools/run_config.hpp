#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "affseg/model.hpp"
#include "affseg/trainer.hpp"

namespace affseg::cli {

struct DataConfig {
  std::string root = "data";
  int target_fps = 10;
  double max_depth_units = 4.5;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

/// Desk-scale defaults as a JSON document (the documented config schema).
nlohmann::json default_config_json();

nlohmann::json load_config_file(const std::filesystem::path& path);

/// Applies "dotted.path=value" onto the config document; the value is
/// parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Validates and converts the merged document. Throws ConfigError with a
/// distinct message per problem.
RunConfig parse_run_config(const nlohmann::json& merged);

}  // namespace affseg::cli
