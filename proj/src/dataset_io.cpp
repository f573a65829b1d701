#include "hdeval/dataset.hpp"

#include "hdeval/random.hpp"
#include "hdeval/util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace hdeval {

std::string to_string(TemplateId id) {
  switch (id) {
    case TemplateId::conversation: return "conversation";
    case TemplateId::summarization: return "summarization";
    case TemplateId::data_to_text: return "data_to_text";
  }
  return "summarization";
}

TemplateId template_id_from_string(std::string_view s) {
  if (s == "conversation") return TemplateId::conversation;
  if (s == "summarization") return TemplateId::summarization;
  if (s == "data_to_text") return TemplateId::data_to_text;
  throw ValidationError("unknown template_id '" + std::string(s) + "'");
}

std::vector<std::string> DatasetManifest::aspect_names() const {
  std::vector<std::string> out;
  for (const auto& a : aspects) out.push_back(a.name);
  return out;
}

std::vector<AspectGroup> DatasetManifest::resolved_groups() const {
  if (!aspect_groups.empty()) return aspect_groups;
  return {AspectGroup{"all", aspect_names()}};
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json aspects = nlohmann::json::array();
  for (const auto& a : m.aspects) aspects.push_back({{"name", a.name}, {"definition", a.definition}});
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : m.aspect_groups) groups.push_back({{"name", g.name}, {"aspects", g.aspects}});
  return {{"name", m.name},
          {"task_description", m.task_description},
          {"task_background", m.task_background},
          {"aspects", aspects},
          {"aspect_groups", groups},
          {"template_id", to_string(m.template_id)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.name = j.value("name", std::string{});
    m.task_description = j.at("task_description").get<std::string>();
    m.task_background = j.value("task_background", std::string{});
    for (const auto& a : j.at("aspects")) {
      m.aspects.push_back({a.at("name").get<std::string>(), a.value("definition", std::string{})});
    }
    if (j.contains("aspect_groups")) {
      for (const auto& g : j.at("aspect_groups")) {
        m.aspect_groups.push_back({g.at("name").get<std::string>(), g.at("aspects").get<std::vector<std::string>>()});
      }
    }
    m.template_id = template_id_from_string(j.at("template_id").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  if (m.task_description.empty()) throw ValidationError("manifest: empty task_description");
  if (m.aspects.empty()) throw ValidationError("manifest: at least one aspect is required");
  std::set<std::string> names;
  for (const auto& a : m.aspects) {
    if (!names.insert(a.name).second) throw ValidationError("manifest: duplicate aspect '" + a.name + "'");
  }
  if (!m.aspect_groups.empty()) {
    std::multiset<std::string> covered;
    for (const auto& g : m.aspect_groups) covered.insert(g.aspects.begin(), g.aspects.end());
    if (covered != std::multiset<std::string>(names.begin(), names.end())) {
      throw ValidationError("manifest: aspect_groups must partition the aspect set exactly");
    }
  }
  return m;
}

namespace {
const std::set<std::string> kSampleFields = {"sample_id", "group_id", "context", "fact", "candidate", "labels"};
}

nlohmann::json to_json(const EvalSample& s) {
  nlohmann::json j = s.extra.is_object() ? s.extra : nlohmann::json::object();
  j["sample_id"] = s.sample_id;
  j["group_id"] = s.group_id;
  j["context"] = s.context;
  if (s.fact) j["fact"] = *s.fact;
  j["candidate"] = s.candidate;
  j["labels"] = s.labels;
  return j;
}

EvalSample sample_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("sample is not a JSON object");
  EvalSample s;
  try {
    s.sample_id = j.at("sample_id").get<std::string>();
    s.group_id = j.contains("group_id") ? j.at("group_id").get<std::string>() : s.sample_id;
    s.context = j.value("context", std::string{});
    if (j.contains("fact") && !j.at("fact").is_null()) s.fact = j.at("fact").get<std::string>();
    s.candidate = j.at("candidate").get<std::string>();
    for (const auto& [k, v] : j.at("labels").items()) {
      if (!v.is_number()) throw ParseError("label '" + k + "' is not numeric");
      s.labels[k] = v.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what());
  }
  for (const auto& [k, v] : j.items()) {
    if (!kSampleFields.contains(k)) s.extra[k] = v;
  }
  for (const auto& [k, v] : s.labels) {
    if (!std::isfinite(v)) throw ValidationError("label '" + k + "' is not finite");
  }
  return s;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, const std::filesystem::path& data_path) {
  if (!std::filesystem::exists(manifest_path)) throw IoError("manifest not found: " + manifest_path.string());
  if (!std::filesystem::exists(data_path)) throw IoError("data file not found: " + data_path.string());
  Dataset ds;
  {
    auto parsed = nlohmann::json::parse(read_file(manifest_path), nullptr, false);
    if (parsed.is_discarded()) throw ParseError("manifest is not valid JSON: " + manifest_path.string());
    ds.manifest = manifest_from_json(parsed);
  }
  const auto aspects = ds.manifest.aspect_names();
  const std::set<std::string> aspect_set(aspects.begin(), aspects.end());

  std::ifstream in(data_path);
  if (!in) throw IoError("cannot open " + data_path.string());
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = data_path.string() + ":" + std::to_string(line_no) + ": ";
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(where + "malformed JSON");
    EvalSample s;
    try {
      s = sample_from_json(j);
    } catch (const Error& e) {
      throw ParseError(where + e.what());
    }
    std::set<std::string> keys;
    for (const auto& [k, v] : s.labels) keys.insert(k);
    if (keys != aspect_set) throw ValidationError(where + "label aspects do not match the manifest");
    if (!ids.insert(s.sample_id).second) throw ValidationError(where + "duplicate sample_id '" + s.sample_id + "'");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& manifest_path,
                   const std::filesystem::path& data_path) {
  write_file_atomic(manifest_path, to_json(dataset.manifest).dump(2) + "\n");
  std::string out;
  for (const auto& s : dataset.samples) out += to_json(s).dump() + "\n";
  write_file_atomic(data_path, out);
}

Matrix label_matrix(const std::vector<EvalSample>& samples, const std::vector<std::string>& aspects) {
  Matrix y(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(aspects.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t t = 0; t < aspects.size(); ++t) {
      auto it = samples[i].labels.find(aspects[t]);
      if (it == samples[i].labels.end()) {
        throw ValidationError("sample '" + samples[i].sample_id + "' has no label for '" + aspects[t] + "'");
      }
      y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = it->second;
    }
  }
  return y;
}

namespace {

// Distinct group ids in first-appearance order.
std::vector<std::string> group_order(const std::vector<EvalSample>& samples) {
  std::vector<std::string> groups;
  std::set<std::string> seen;
  for (const auto& s : samples) {
    if (seen.insert(s.group_id).second) groups.push_back(s.group_id);
  }
  return groups;
}

}  // namespace

Split split(const std::vector<EvalSample>& samples, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test_fraction must lie in (0, 1)");
  }
  auto groups = group_order(samples);
  Rng rng(derive_seed(seed, {0x5eed5u}));
  rng.shuffle(std::span<std::string>(groups));
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(groups.size())));
  if (groups.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, groups.size() - 1);
  const std::set<std::string> test_groups(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(std::min(n_test, groups.size())));
  Split out;
  for (const auto& s : samples) (test_groups.contains(s.group_id) ? out.test : out.train).push_back(s);
  return out;
}

std::vector<EvalSample> subsample_train(const std::vector<EvalSample>& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fraction must lie in (0, 1]");
  const auto target = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(train.size()) - 1e-9));
  if (target >= train.size()) return train;

  auto groups = group_order(train);
  Rng rng(derive_seed(seed, {0x5ab5u}));
  rng.shuffle(std::span<std::string>(groups));
  std::unordered_map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < groups.size(); ++i) rank[groups[i]] = i;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rank.at(train[a].group_id) < rank.at(train[b].group_id);
  });
  order.resize(target);
  std::sort(order.begin(), order.end());
  std::vector<EvalSample> out;
  out.reserve(target);
  for (auto i : order) out.push_back(train[i]);
  return out;
}

}  // namespace hdeval
