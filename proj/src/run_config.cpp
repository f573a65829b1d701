#include "hdeval/run_config.hpp"

#include "hdeval/util.hpp"

namespace hdeval {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  auto train = to_json(c.train);
  if (c.train.checkpoint_dir) train["checkpoint_dir"] = c.train.checkpoint_dir->string();
  return {{"dataset", {{"manifest", c.manifest_path.string()}, {"data", c.data_path.string()}}},
          {"output_dir", c.output_dir.string()},
          {"backend", to_json(c.backend)},
          {"train", train},
          {"report_format", c.report_format}};
}

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("manifest")) c.manifest_path = resolve(base_dir, d.at("manifest").get<std::string>());
      if (d.contains("data")) c.data_path = resolve(base_dir, d.at("data").get<std::string>());
    }
    c.output_dir = resolve(base_dir, j.value("output_dir", c.output_dir.string()));
    if (j.contains("backend")) c.backend = backend_config_from_json(j.at("backend"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    c.report_format = j.value("report_format", c.report_format);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  if (c.backend.cache_dir) c.backend.cache_dir = resolve(base_dir, *c.backend.cache_dir);
  if (c.backend.fixture_path) c.backend.fixture_path = resolve(base_dir, *c.backend.fixture_path);
  if (c.train.checkpoint_dir) c.train.checkpoint_dir = resolve(base_dir, *c.train.checkpoint_dir);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

}  // namespace hdeval
