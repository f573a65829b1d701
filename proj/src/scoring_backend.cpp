#include "hdeval/scoring_backend.hpp"

#include "hdeval/random.hpp"
#include "hdeval/util.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <thread>

namespace hdeval {

std::string to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::remote: return "remote";
    case BackendKind::mock: return "mock";
    case BackendKind::replay: return "replay";
  }
  return "mock";
}

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "remote") return BackendKind::remote;
  if (s == "mock") return BackendKind::mock;
  if (s == "replay") return BackendKind::replay;
  throw ValidationError("unknown backend kind '" + std::string(s) + "'");
}

void BackendConfig::validate() const {
  if (temperature < 0.0) throw ValidationError("temperature must be >= 0");
  if (max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
  if (max_retries < 0) throw ValidationError("max_retries must be >= 0");
  if (max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
  if (kind == BackendKind::remote && endpoint.empty()) throw ValidationError("remote backend needs an endpoint");
  if (kind == BackendKind::replay && !cache_dir) throw ValidationError("replay backend needs cache_dir");
}

nlohmann::json to_json(const BackendConfig& c) {
  nlohmann::json j = {{"kind", to_string(c.kind)},
                      {"endpoint", c.endpoint},
                      {"model_name", c.model_name},
                      {"temperature", c.temperature},
                      {"top_p", c.top_p},
                      {"max_tokens", c.max_tokens},
                      {"max_retries", c.max_retries},
                      {"seed", c.seed},
                      {"api_key_env", c.api_key_env},
                      {"max_in_flight", c.max_in_flight},
                      {"requests_per_minute", c.requests_per_minute},
                      {"backoff_base_ms", c.backoff_base_ms},
                      {"backoff_max_ms", c.backoff_max_ms},
                      {"timeout_s", c.timeout_s}};
  j["cache_dir"] = c.cache_dir ? nlohmann::json(c.cache_dir->string()) : nlohmann::json(nullptr);
  j["fixture_path"] = c.fixture_path ? nlohmann::json(c.fixture_path->string()) : nlohmann::json(nullptr);
  return j;
}

BackendConfig backend_config_from_json(const nlohmann::json& j) {
  BackendConfig c;
  try {
    if (j.contains("kind")) c.kind = backend_kind_from_string(j.at("kind").get<std::string>());
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model_name = j.value("model_name", c.model_name);
    c.temperature = j.value("temperature", c.temperature);
    c.top_p = j.value("top_p", c.top_p);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.seed = j.value("seed", c.seed);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.requests_per_minute = j.value("requests_per_minute", c.requests_per_minute);
    c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
    c.backoff_max_ms = j.value("backoff_max_ms", c.backoff_max_ms);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    if (j.contains("cache_dir") && !j.at("cache_dir").is_null()) c.cache_dir = j.at("cache_dir").get<std::string>();
    if (j.contains("fixture_path") && !j.at("fixture_path").is_null()) {
      c.fixture_path = j.at("fixture_path").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("backend config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Prompts

namespace {

std::string strip_final_period(std::string s) {
  while (!s.empty() && (s.back() == '.' || std::isspace(static_cast<unsigned char>(s.back())))) s.pop_back();
  return s;
}

std::string sample_payload(const EvalSample& sample, TemplateId template_id) {
  switch (template_id) {
    case TemplateId::conversation:
      return "Conversation History:\n" + sample.context + "\n\nCorresponding Fact:\n" + sample.fact.value_or("") +
             "\n\nResponse:\n" + sample.candidate;
    case TemplateId::summarization:
      return "Source Text:\n" + sample.context + "\n\nSummary:\n" + sample.candidate;
    case TemplateId::data_to_text:
      return "Data Expression:\n" + sample.context + "\n\nGenerated Text:\n" + sample.candidate;
  }
  return {};
}

std::string instruction_header(TemplateId template_id, const std::string& parent) {
  switch (template_id) {
    case TemplateId::conversation:
      return "You will be given the conversation history between two individuals, its corresponding fact, and one "
             "potential response for the next turn in the conversation.\n\nPlease evaluate the " +
             parent + " of the given response to the conversation.";
    case TemplateId::summarization:
      return "We would like to score the following summary of a news article on its " + parent + ".";
    case TemplateId::data_to_text:
      return "We would like to evaluate the " + parent +
             " of data-to-text, a natural language sentence generated according to a structured data expression.";
  }
  return {};
}

std::string reading_list(TemplateId template_id) {
  switch (template_id) {
    case TemplateId::conversation:
      return "the conversation history, corresponding fact, generated response";
    case TemplateId::summarization:
      return "the source text and the summary";
    case TemplateId::data_to_text:
      return "the data expression and the generated text";
  }
  return {};
}

}  // namespace

std::string render_decomposition_prompt(std::string_view task, std::string_view task_background,
                                        const Criterion& parent, int desired_children) {
  if (desired_children < 1) throw ValidationError("desired_children must be >= 1");
  std::string criteria = parent.layer == 0
                             ? std::string("its overall quality")
                             : "its " + parent.name + " (" + strip_final_period(parent.definition) + ")";
  std::string out = "I would like to perform automatic evaluation on quality of " + std::string(task) + ".\n\n";
  if (!task_background.empty()) out += strip_final_period(std::string(task_background)) + ".\n\n";
  out += "I would like to to evaluate " + criteria + ".\n\n";
  out += "Please give me around " + std::to_string(desired_children) +
         " fine-grained evaluation critics to evaluate them. I want to obtain a final comprehensive evaluation based "
         "on an overall aggregation on fine-grained metrics. With the fine-grained metrics, I can better dispatch the "
         "evaluation task to different workers and make a better overall efficiency and accuracy.\n\n";
  out += "Please list each critic on its own line in the form \"Name: definition\".";
  return out;
}

std::string render_evaluation_prompt(const EvalSample& sample, const Criterion& criterion,
                                     const CriteriaTree& tree, TemplateId template_id) {
  if (criterion.layer < 1) throw ValidationError("cannot render an evaluation prompt for the root criterion");
  const auto path = tree.lineage(criterion.id);
  const Criterion& parent = path[path.size() - 2];
  const std::string parent_name = parent.layer == 0 ? tree.task() : parent.name;

  std::string out = "## Instructions\n\n";
  out += instruction_header(template_id, parent_name) + "\n\n";
  out += "Specifically, to evaluate " + parent_name +
         ", we would like you to score the given response on the following metric:\n\n";
  out += criterion.name + " : " + criterion.definition + "\n\n";
  out += "Please return your score on the above metric in the scale of 1 to 5, with 1 being the lowest.\n\n";
  out += "## Example\n\n" + sample_payload(sample, template_id) + "\n\n";
  out += "## Evaluation\n\n";
  out += "Now, please evaluate the " + parent_name +
         " of the provided response. (on a scale of 1-5, with 1 being the lowest).\n";
  out += "Please carefully read " + reading_list(template_id) + ", and evaluate the sentence using the metric " +
         criterion.name + ".\n";
  out += "Please first return your score, and then provide your reasoning for the score.\n\n";
  out += std::string(kScoreCue);
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Parses [0-9]+(.[0-9]+)? at pos; returns length consumed (0 if none).
std::size_t scan_number(std::string_view s, std::size_t pos, double& value) {
  std::size_t end = pos;
  while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
  if (end == pos) return 0;
  if (end + 1 < s.size() && s[end] == '.' && std::isdigit(static_cast<unsigned char>(s[end + 1]))) {
    ++end;
    while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
  }
  auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + end, value);
  if (ec != std::errc{}) return 0;
  return static_cast<std::size_t>(ptr - (s.data() + pos));
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

}  // namespace

std::optional<double> parse_score(std::string_view raw) {
  if (auto cue = raw.find(kScoreCue); cue != std::string_view::npos) {
    std::size_t pos = cue + kScoreCue.size();
    while (pos < raw.size() && (raw[pos] == ' ' || raw[pos] == '\t' || raw[pos] == '*')) ++pos;
    double v = 0.0;
    if (scan_number(raw, pos, v) > 0) return std::clamp(v, kScoreMin, kScoreMax);
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(raw[i]))) continue;
    if (i > 0 && (is_word_char(raw[i - 1]) || raw[i - 1] == '.' || raw[i - 1] == '-')) {
      while (i + 1 < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i + 1]))) ++i;
      continue;
    }
    double v = 0.0;
    const std::size_t len = scan_number(raw, i, v);
    const std::size_t end = i + len;
    const bool standalone = end >= raw.size() || !is_word_char(raw[end]);
    if (standalone && v >= kScoreMin && v <= kScoreMax) return v;
    i = end - 1;
  }
  return std::nullopt;
}

std::vector<ChildSpec> parse_decomposition(std::string_view raw, int max_items) {
  std::vector<ChildSpec> out;
  std::size_t start = 0;
  while (start <= raw.size() && static_cast<int>(out.size()) < max_items) {
    auto nl = raw.find('\n', start);
    std::string line = trim(raw.substr(start, nl == std::string_view::npos ? raw.npos : nl - start));
    start = nl == std::string_view::npos ? raw.size() + 1 : nl + 1;

    // Bullets and list numbering: "-", "*", "1.", "2)".
    std::size_t p = 0;
    if (p < line.size() && (line[p] == '-' || line[p] == '*') && p + 1 < line.size() && line[p + 1] == ' ') p += 2;
    std::size_t d = p;
    while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
    if (d > p && d < line.size() && (line[d] == '.' || line[d] == ')')) p = d + 1;
    line = trim(std::string_view(line).substr(p));
    std::erase(line, '*');

    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string name = trim(std::string_view(line).substr(0, colon));
    std::string def = trim(std::string_view(line).substr(colon + 1));
    if (name.empty() || def.empty() || name.size() > 80) continue;
    if (std::any_of(out.begin(), out.end(), [&](const ChildSpec& c) { return c.name == name; })) continue;
    out.push_back({std::move(name), std::move(def)});
  }
  if (out.empty()) {
    throw DecompositionParseError(std::string(raw), "no 'Name: definition' lines in decomposition reply");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cache

std::string cache_key(const BackendConfig& config, std::string_view prompt) {
  nlohmann::json k = {{"model", config.model_name},
                      {"temperature", config.temperature},
                      {"top_p", config.top_p},
                      {"max_tokens", config.max_tokens}};
  return sha256_hex(k.dump() + '\n' + std::string(prompt));
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path ResponseCache::path_for(const std::string& key) const { return dir_ / (key + ".json"); }

std::optional<std::string> ResponseCache::lookup(const std::string& key) const {
  const auto path = path_for(key);
  if (!std::filesystem::exists(path)) return std::nullopt;
  auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains("reply")) throw ParseError("corrupt cache entry " + path.string());
  return j.at("reply").get<std::string>();
}

void ResponseCache::store(const std::string& key, std::string_view prompt, std::string_view reply) {
  const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  nlohmann::json j = {{"key", key}, {"prompt", std::string(prompt)}, {"reply", std::string(reply)}, {"timestamp", now}};
  std::lock_guard lock(write_mu_);
  write_file_atomic(path_for(key), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Backends

MockBackend::MockBackend(BackendConfig config, Table table) : Backend(std::move(config)), table_(std::move(table)) {}

std::string MockBackend::prompt_digest(std::string_view prompt) { return sha256_hex(prompt); }

std::string MockBackend::complete(const std::string& prompt) {
  const auto digest = prompt_digest(prompt);
  if (auto it = table_.find(digest); it != table_.end()) return it->second;
  if (prompt.ends_with(kScoreCue)) {
    const auto h = std::stoull(digest.substr(0, 15), nullptr, 16);
    const auto v = 1 + mix_seed(h ^ config().seed) % 5;
    return std::string(kScoreCue) + " " + std::to_string(v);
  }
  return {};
}

MockBackend::Table MockBackend::load_table(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains("replies")) throw ParseError("mock fixture is not valid: " + path.string());
  return j.at("replies").get<Table>();
}

void MockBackend::save_table(const Table& table, const std::filesystem::path& path) {
  // std::map for a stable key order on disk.
  nlohmann::json j = {{"replies", std::map<std::string, std::string>(table.begin(), table.end())}};
  write_file_atomic(path, j.dump(1) + "\n");
}

ReplayBackend::ReplayBackend(BackendConfig config)
    : Backend(std::move(config)), cache_(this->config().cache_dir.value_or("")) {}

std::string ReplayBackend::complete(const std::string& prompt) {
  const auto key = cache_key(config(), prompt);
  if (auto hit = cache_.lookup(key)) return *hit;
  throw ReplayMissError(key, "replay cache miss for key " + key + " in " + cache_.dir().string());
}

CachingBackend::CachingBackend(std::unique_ptr<Backend> inner, std::filesystem::path dir)
    : Backend(inner->config()), inner_(std::move(inner)), cache_(std::move(dir)) {}

std::string CachingBackend::complete(const std::string& prompt) {
  const auto key = cache_key(config(), prompt);
  if (auto hit = cache_.lookup(key)) return *hit;
  auto reply = inner_->complete(prompt);
  cache_.store(key, prompt, reply);
  return reply;
}

namespace {

std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

RemoteBackend::RemoteBackend(BackendConfig config)
    : Backend(std::move(config)), in_flight_(std::clamp(this->config().max_in_flight, 1, 1024)) {
  std::tie(scheme_host_, path_) = split_endpoint(this->config().endpoint);
}

nlohmann::json RemoteBackend::request_body(const BackendConfig& config, std::string_view prompt) {
  return {{"model", config.model_name},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
          {"temperature", config.temperature},
          {"top_p", config.top_p},
          {"max_tokens", config.max_tokens}};
}

std::string RemoteBackend::extract_reply(const nlohmann::json& body) {
  try {
    const auto& choice = body.at("choices").at(0);
    if (choice.contains("message")) return choice.at("message").at("content").get<std::string>();
    return choice.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("unexpected completion response: ") + e.what());
  }
}

void RemoteBackend::wait_for_rate_slot() {
  if (config().requests_per_minute <= 0) return;
  const auto spacing = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(60.0 / config().requests_per_minute));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(rate_mu_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_slot_);
    next_slot_ = slot + spacing;
  }
  std::this_thread::sleep_until(slot);
}

std::string RemoteBackend::complete(const std::string& prompt) {
  const auto& cfg = config();
  const std::string body = request_body(cfg, prompt).dump();
  httplib::Headers headers;
  if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  Rng jitter(derive_seed(cfg.seed, {std::hash<std::string>{}(prompt)}));
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      const double delay = std::min(cfg.backoff_max_ms, cfg.backoff_base_ms * std::pow(2.0, attempt - 1));
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay * (0.5 + 0.5 * jitter.uniform())));
    }
    wait_for_rate_slot();
    in_flight_.acquire();
    httplib::Result res;
    {
      httplib::Client client(scheme_host_);
      const auto timeout = std::chrono::duration<double>(cfg.timeout_s);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      res = client.Post(path_, headers, body, "application/json");
    }
    in_flight_.release();
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw TransportError("HTTP " + std::to_string(res->status) + " from " + cfg.endpoint + ": " + res->body);
    }
    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) {
      last_error = "non-JSON response body";
      continue;
    }
    return extract_reply(parsed);
  }
  throw TransportError("giving up after " + std::to_string(cfg.max_retries + 1) + " attempts: " + last_error);
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  config.validate();
  std::unique_ptr<Backend> backend;
  switch (config.kind) {
    case BackendKind::replay:
      return std::make_unique<ReplayBackend>(config);
    case BackendKind::mock:
      backend = std::make_unique<MockBackend>(
          config, config.fixture_path ? MockBackend::load_table(*config.fixture_path) : MockBackend::Table{});
      break;
    case BackendKind::remote:
      backend = std::make_unique<RemoteBackend>(config);
      break;
  }
  if (config.cache_dir) return std::make_unique<CachingBackend>(std::move(backend), *config.cache_dir);
  return backend;
}

// ---------------------------------------------------------------------------
// Operations

std::vector<ChildSpec> decompose(Backend& backend, const CriteriaTree& tree, std::string_view parent_id,
                                 int desired_children, std::string_view task_background) {
  const Criterion& parent = tree.node(parent_id);
  if (desired_children < 1 || desired_children > tree.max_children()) {
    throw ValidationError("desired_children must lie in [1, max_children]");
  }
  const auto prompt = render_decomposition_prompt(tree.task(), task_background, parent, desired_children);
  return parse_decomposition(backend.complete(prompt), desired_children);
}

ScoreValue score(Backend& backend, const EvalSample& sample, const Criterion& criterion, const CriteriaTree& tree,
                 TemplateId template_id) {
  const auto prompt = render_evaluation_prompt(sample, criterion, tree, template_id);
  ScoreValue out;
  for (int attempt = 0; attempt <= backend.config().max_retries; ++attempt) {
    out.raw_text = backend.complete(prompt);
    out.retries_used = attempt;
    if (auto v = parse_score(out.raw_text)) {
      out.value = *v;
      out.imputed = false;
      return out;
    }
  }
  out.value = kImputedScore;
  out.imputed = true;
  return out;
}

}  // namespace hdeval
