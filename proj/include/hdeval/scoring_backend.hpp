#pragma once

#include "hdeval/common.hpp"
#include "hdeval/criteria_tree.hpp"
#include "hdeval/dataset.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hdeval {

enum class BackendKind { remote, mock, replay };

std::string to_string(BackendKind kind);
BackendKind backend_kind_from_string(std::string_view s);

struct BackendConfig {
  BackendKind kind = BackendKind::mock;
  std::string endpoint;  // remote only, e.g. http://localhost:8080/v1/chat/completions
  std::string model_name = "mock";
  double temperature = 0.0;
  double top_p = 1.0;
  int max_tokens = 32;
  int max_retries = 2;
  std::optional<std::filesystem::path> cache_dir;
  // Mock fixture table (prompt digest -> reply); optional.
  std::optional<std::filesystem::path> fixture_path;
  std::uint64_t seed = 0;
  std::string api_key_env = "HDEVAL_API_KEY";
  int max_in_flight = 4;
  int requests_per_minute = 0;  // 0 disables the ceiling
  double backoff_base_ms = 500.0;
  double backoff_max_ms = 30000.0;
  double timeout_s = 60.0;

  void validate() const;
};

nlohmann::json to_json(const BackendConfig& c);
BackendConfig backend_config_from_json(const nlohmann::json& j);

struct ScoreValue {
  double value = 3.0;
  std::string raw_text;
  int retries_used = 0;
  bool imputed = false;
};

inline constexpr double kScoreMin = 1.0;
inline constexpr double kScoreMax = 5.0;
inline constexpr double kImputedScore = 3.0;
inline constexpr std::string_view kScoreCue = "Score (1-5):";

class TransportError : public Error {
 public:
  using Error::Error;
};

class ReplayMissError : public Error {
 public:
  ReplayMissError(std::string key, const std::string& what) : Error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class DecompositionParseError : public ParseError {
 public:
  DecompositionParseError(std::string raw, const std::string& what) : ParseError(what), raw_(std::move(raw)) {}
  const std::string& raw_text() const { return raw_; }

 private:
  std::string raw_;
};

// ---------------------------------------------------------------------------
// Prompts

std::string render_decomposition_prompt(std::string_view task, std::string_view task_background,
                                        const Criterion& parent, int desired_children);

// Hierarchy-aware evaluation prompt: names the parent criterion (the task for
// layer-1 nodes) and the child criterion with its definition.
std::string render_evaluation_prompt(const EvalSample& sample, const Criterion& criterion,
                                     const CriteriaTree& tree, TemplateId template_id);

// ---------------------------------------------------------------------------
// Reply parsing

// 1) number right after "Score (1-5):", clamped to [1,5];
// 2) otherwise the first standalone number inside [1,5].
std::optional<double> parse_score(std::string_view raw);

// "Name: definition" lines, optionally numbered/bulleted/bolded. Returns at
// most max_items entries; throws DecompositionParseError when none parse.
std::vector<ChildSpec> parse_decomposition(std::string_view raw, int max_items);

// ---------------------------------------------------------------------------
// Backends

// sha256 over model, prompt bytes and sampling parameters.
std::string cache_key(const BackendConfig& config, std::string_view prompt);

// One JSON file per key: {"key", "prompt", "reply", "timestamp"}.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<std::string> lookup(const std::string& key) const;
  void store(const std::string& key, std::string_view prompt, std::string_view reply);
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& key) const;
  std::filesystem::path dir_;
  std::mutex write_mu_;
};

// Text-in/text-out model interface. Implementations are safe to call from
// several threads at once.
class Backend {
 public:
  explicit Backend(BackendConfig config) : config_(std::move(config)) {}
  virtual ~Backend() = default;
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  virtual std::string complete(const std::string& prompt) = 0;
  const BackendConfig& config() const { return config_; }

 private:
  BackendConfig config_;
};

// Deterministic stand-in for an LLM: replies come from a fixture table keyed
// by sha256(prompt). Unknown evaluation prompts get a seed-derived score,
// unknown decomposition prompts an empty reply.
class MockBackend : public Backend {
 public:
  using Table = std::unordered_map<std::string, std::string>;
  MockBackend(BackendConfig config, Table table);
  std::string complete(const std::string& prompt) override;

  static std::string prompt_digest(std::string_view prompt);
  static Table load_table(const std::filesystem::path& path);
  static void save_table(const Table& table, const std::filesystem::path& path);

 private:
  Table table_;
};

// Serves replies from a cache directory only; a miss is an error.
class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(BackendConfig config);
  std::string complete(const std::string& prompt) override;

 private:
  ResponseCache cache_;
};

// Chat-completions style HTTP client with retry/backoff, an in-flight cap and
// an optional requests-per-minute ceiling.
class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(BackendConfig config);
  std::string complete(const std::string& prompt) override;

  // Request body for one prompt: {model, messages, temperature, top_p, max_tokens}.
  static nlohmann::json request_body(const BackendConfig& config, std::string_view prompt);
  // Pulls the reply text out of a chat-completions response body.
  static std::string extract_reply(const nlohmann::json& body);

 private:
  void wait_for_rate_slot();

  std::string scheme_host_;
  std::string path_;
  std::counting_semaphore<1024> in_flight_;
  std::mutex rate_mu_;
  std::chrono::steady_clock::time_point next_slot_{};
};

// Read-through/write-back cache around another backend.
class CachingBackend : public Backend {
 public:
  CachingBackend(std::unique_ptr<Backend> inner, std::filesystem::path dir);
  std::string complete(const std::string& prompt) override;

 private:
  std::unique_ptr<Backend> inner_;
  ResponseCache cache_;
};

// Builds the configured backend; mock and remote get a CachingBackend wrapper
// when cache_dir is set.
std::unique_ptr<Backend> make_backend(const BackendConfig& config);

// ---------------------------------------------------------------------------
// Operations

std::vector<ChildSpec> decompose(Backend& backend, const CriteriaTree& tree, std::string_view parent_id,
                                 int desired_children, std::string_view task_background);

ScoreValue score(Backend& backend, const EvalSample& sample, const Criterion& criterion,
                 const CriteriaTree& tree, TemplateId template_id);

}  // namespace hdeval
