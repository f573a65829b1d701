#pragma once

#include "hdeval/criteria_tree.hpp"
#include "hdeval/dataset.hpp"
#include "hdeval/scoring_backend.hpp"
#include "hdeval/util.hpp"

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace hdeval::test {

inline std::filesystem::path data_dir() { return HDEVAL_TEST_DATA; }

inline CriteriaTree topical_chat_tree() {
  return CriteriaTree::from_json(nlohmann::json::parse(read_file(data_dir() / "fixtures" / "topical_chat_tree.json")));
}

// Manifest whose expert aspects are the fixture tree's layer-1 criteria.
inline DatasetManifest topical_chat_manifest(const CriteriaTree& tree) {
  DatasetManifest m;
  m.name = "topical-chat-fixture";
  m.task_description = tree.task();
  m.template_id = TemplateId::conversation;
  for (const auto& c : tree.nodes_at_layer(1)) m.aspects.push_back({c.name, c.definition});
  return m;
}

inline std::vector<EvalSample> conversation_samples(int n, int group_size = 1) {
  std::vector<EvalSample> out;
  for (int i = 0; i < n; ++i) {
    EvalSample s;
    s.sample_id = "t" + std::to_string(i);
    s.group_id = "d" + std::to_string(i / group_size);
    s.context = "User: have you heard about the moon landing? (dialogue " + std::to_string(i / group_size) + ")";
    s.fact = "The first crewed moon landing was in 1969.";
    s.candidate = "Yes, it happened in 1969, candidate " + std::to_string(i) + ".";
    out.push_back(std::move(s));
  }
  return out;
}

// Mock replies that reproduce `tree`: one decomposition reply per internal
// node and a score reply for every (sample, criterion) cell.
inline MockBackend::Table fixtures_for_tree(
    const CriteriaTree& tree, const DatasetManifest& manifest, const std::vector<EvalSample>& samples,
    const std::function<double(std::size_t, const std::string&)>& score_of, int desired) {
  MockBackend::Table table;
  auto add_decomposition = [&](const Criterion& parent) {
    std::string reply;
    for (const auto& c : tree.children(parent.id)) reply += c.name + ": " + c.definition + "\n";
    if (reply.empty()) return;
    table[MockBackend::prompt_digest(
        render_decomposition_prompt(manifest.task_description, manifest.task_background, parent, desired))] = reply;
  };
  add_decomposition(tree.root());
  for (const auto& id : tree.feature_order()) {
    add_decomposition(tree.node(id));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto prompt = render_evaluation_prompt(samples[i], tree.node(id), tree, manifest.template_id);
      table[MockBackend::prompt_digest(prompt)] = "Score (1-5): " + format_double(score_of(i, id));
    }
  }
  return table;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hdeval_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace hdeval::test
