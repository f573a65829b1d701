#pragma once

#include "hdeval/alignment_trainer.hpp"
#include "hdeval/scoring_backend.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace hdeval {

// Everything one CLI run needs, read from a single JSON file:
//   {"dataset": {"manifest": ..., "data": ...}, "output_dir": ...,
//    "backend": {...}, "train": {...}, "report_format": "table"}
struct RunConfig {
  std::filesystem::path manifest_path;
  std::filesystem::path data_path;
  std::filesystem::path output_dir = "artifact";
  BackendConfig backend;
  TrainConfig train;
  std::string report_format = "table";
};

nlohmann::json to_json(const RunConfig& c);
// Relative paths are resolved against base_dir.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace hdeval
