#pragma once

#include "hdeval/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hdeval {

enum class TemplateId { conversation, summarization, data_to_text };

std::string to_string(TemplateId id);
TemplateId template_id_from_string(std::string_view s);

struct EvalSample {
  std::string sample_id;
  // Source document / dialogue; samples sharing it are ranked against each other.
  std::string group_id;
  std::string context;
  std::optional<std::string> fact;
  std::string candidate;
  std::map<std::string, double> labels;
  // Unrecognised fields from the input line, carried through on write.
  nlohmann::json extra = nlohmann::json::object();
};

struct AspectSpec {
  std::string name;
  std::string definition;
};

struct AspectGroup {
  std::string name;
  std::vector<std::string> aspects;
};

struct DatasetManifest {
  std::string name;
  std::string task_description;
  std::string task_background;
  std::vector<AspectSpec> aspects;
  // Empty means a single group "all" holding every aspect.
  std::vector<AspectGroup> aspect_groups;
  TemplateId template_id = TemplateId::summarization;

  std::vector<std::string> aspect_names() const;
  // Declared groups, or the default single group.
  std::vector<AspectGroup> resolved_groups() const;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

nlohmann::json to_json(const EvalSample& s);
// Parses one data line; does not check labels against a manifest.
EvalSample sample_from_json(const nlohmann::json& j);

struct Dataset {
  DatasetManifest manifest;
  std::vector<EvalSample> samples;
};

// Reads manifest.json and a JSON-lines data file. Errors carry the 1-based
// line number of the offending record.
Dataset load_dataset(const std::filesystem::path& manifest_path, const std::filesystem::path& data_path);

void write_dataset(const Dataset& dataset, const std::filesystem::path& manifest_path,
                   const std::filesystem::path& data_path);

// Samples x aspects label matrix, columns in `aspects` order.
Matrix label_matrix(const std::vector<EvalSample>& samples, const std::vector<std::string>& aspects);

struct Split {
  std::vector<EvalSample> train;
  std::vector<EvalSample> test;
};

// Seeded, group-atomic held-out split. Input order is preserved on each side.
Split split(const std::vector<EvalSample>& samples, double test_fraction, std::uint64_t seed);

// Seeded subsample of exactly ceil(fraction * n) samples. Whole groups are
// taken in shuffled order; only the last group drawn may be cut.
std::vector<EvalSample> subsample_train(const std::vector<EvalSample>& train, double fraction,
                                        std::uint64_t seed);

}  // namespace hdeval
