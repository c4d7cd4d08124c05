#include "cbr/enrichment.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "cbr/errors.hpp"
#include "cbr/hashing.hpp"
#include "cbr/io.hpp"

namespace cbr {

using nlohmann::json;

namespace {

constexpr std::string_view kSlot = "{case}";

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

// Order of the class list in the label-prediction prompt.
constexpr std::array<FallacyLabel, kNumLabels> kPromptClassOrder = {
    FallacyLabel::FallacyOfLogic,       FallacyLabel::CircularReasoning,     FallacyLabel::AppealToEmotion,
    FallacyLabel::Intentional,          FallacyLabel::FaultyGeneralization,  FallacyLabel::FallacyOfExtension,
    FallacyLabel::FalseDilemma,         FallacyLabel::AdPopulum,             FallacyLabel::AdHominem,
    FallacyLabel::FalseCausality,       FallacyLabel::Equivocation,          FallacyLabel::FallacyOfRelevance,
    FallacyLabel::FallacyOfCredibility,
};

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Templates

std::string PromptTemplate::render(std::string_view case_text) const {
  const auto pos = instruction.find(kSlot);
  std::string out = instruction.substr(0, pos);
  out += '"';
  out += case_text;
  out += '"';
  out += instruction.substr(pos + kSlot.size());
  return out;
}

const PromptTemplate& prompt_template(RepresentationKind kind) {
  static const std::array<PromptTemplate, 4> templates = {{
      {RepresentationKind::Counterarguments, "Represent the counterargument to the argument {case}"},
      {RepresentationKind::Goals, "Express the goal of the argument {case}"},
      {RepresentationKind::Explanations, "Analyze the argument {case}"},
      {RepresentationKind::Structure, "Represent the structure of the argument {case}"},
  }};
  for (const auto& t : templates) {
    if (t.kind == kind) return t;
  }
  throw UnsupportedKindError("no prompt template for kind '" + std::string(kind_name(kind)) + "'");
}

std::string build_seed_prompt(RepresentationKind kind, const Case& c) {
  if (kind == RepresentationKind::Structure) {
    throw UnsupportedKindError("structure demonstrations are hand-written, not generated from a seed prompt");
  }
  return prompt_template(kind).render(c.text);
}

// ---------------------------------------------------------------------------
// Demonstrations

void validate_demonstration(const Demonstration& demo) {
  std::string folded = lower(demo.response);
  std::replace_if(folded.begin(), folded.end(), [](char ch) { return ch == '_' || ch == '-'; }, ' ');
  // Collapse whitespace runs so "ad   hominem" is caught as well.
  std::string text;
  for (char ch : folded) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (space && (text.empty() || text.back() == ' ')) continue;
    text.push_back(space ? ' ' : ch);
  }
  auto is_word = [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) != 0; };
  for (const FallacyLabel label : kAllLabels) {
    const std::string name = label_display_name(label);
    for (std::size_t pos = text.find(name); pos != std::string::npos; pos = text.find(name, pos + 1)) {
      const bool left = pos == 0 || !is_word(text[pos - 1]);
      const std::size_t end = pos + name.size();
      const bool right = end == text.size() || !is_word(text[end]);
      if (left && right) {
        throw DemoError("demonstration response mentions the class name '" + name + "'");
      }
    }
  }
}

std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<Demonstration> demos;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      Demonstration d{j.at("prompt").get<std::string>(), j.at("response").get<std::string>()};
      validate_demonstration(d);
      demos.push_back(std::move(d));
    } catch (const DemoError& e) {
      throw DemoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw DemoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return demos;
}

std::string build_fewshot_prompt(RepresentationKind kind, std::span<const Demonstration> demos, const Case& c) {
  if (demos.empty()) throw ConfigError("few-shot prompt needs at least one demonstration");
  std::string out;
  for (const auto& d : demos) {
    out += d.prompt;
    out += ":\n";
    out += d.response;
    out += "\n###\n";
  }
  out += prompt_template(kind).render(c.text);
  out += ':';
  return out;
}

std::string build_label_prompt(std::span<const Case> demos, const Case& query) {
  if (demos.size() != kNumLabels) {
    throw ConfigError("label prompt needs exactly 13 demonstrations, got " + std::to_string(demos.size()));
  }
  std::array<const Case*, kNumLabels> by_label{};
  for (const auto& d : demos) {
    if (!d.label) throw ConfigError("label prompt demonstration '" + d.id + "' is unlabeled");
    auto& slot = by_label[label_index(*d.label)];
    if (slot != nullptr) throw ConfigError("label prompt has two demonstrations for " + label_display_name(*d.label));
    slot = &d;
  }
  std::string out = "classes = [";
  for (std::size_t i = 0; i < kPromptClassOrder.size(); ++i) {
    if (i > 0) out += ", ";
    out += "'" + label_display_name(kPromptClassOrder[i]) + "'";
  }
  out += "]\n--------\n";
  for (const FallacyLabel label : kPromptClassOrder) {
    const Case& d = *by_label[label_index(label)];
    out += d.text;
    out += '\n';
    out += label_display_name(label);
    out += "\n###\n";
  }
  out += query.text;
  out += '\n';
  return out;
}

FallacyLabel parse_label(std::string_view completion) {
  const std::string text = trim(completion);
  const std::string first = lower(trim(std::string_view(text).substr(0, text.find('\n'))));
  if (auto label = try_parse_fallacy_label(first)) return *label;
  throw LabelParseError("completion does not name a fallacy class: '" + first + "'");
}

// ---------------------------------------------------------------------------
// HTTP client

HttpCompletionClient::HttpCompletionClient(CompletionClientConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an http(s) URL: " + config_.endpoint);
  const std::string scheme = config_.endpoint.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("unsupported endpoint scheme '" + scheme + "'");
  const auto path_start = config_.endpoint.find('/', scheme_end + 3);
  scheme_host_port_ = config_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
  if (config_.max_retries < 0) throw ConfigError("max_retries must be non-negative");
}

std::string HttpCompletionClient::complete(const std::string& prompt) {
  if (config_.offline) throw ClientError("network calls are disabled in offline mode");
  const json body = {{"model", config_.model_id},
                     {"prompt", prompt},
                     {"max_tokens", config_.max_tokens},
                     {"temperature", config_.temperature}};
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  client.set_write_timeout(config_.timeout_seconds, 0);

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0 && config_.backoff_base_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(config_.backoff_base_ms) << (attempt - 1)));
    }
    ++calls_;
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      // Client errors other than throttling will not improve on retry.
      if (res->status >= 400 && res->status < 500 && res->status != 408 && res->status != 429) break;
      continue;
    }
    try {
      return json::parse(res->body).at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw ClientError(std::string("malformed completion response: ") + e.what());
    }
  }
  throw ClientError("completion request to " + config_.endpoint + " failed: " + last_error);
}

// ---------------------------------------------------------------------------
// Cache

std::string enrichment_cache_key(RepresentationKind kind, std::string_view case_text, std::string_view model_id,
                                 std::string_view template_version) {
  Sha256Builder b;
  b.add(kind_name(kind)).add(case_text).add(model_id).add(template_version);
  return b.hex();
}

namespace {

json record_to_json(const EnrichmentRecord& r) {
  return json{{"cache_key", r.cache_key},   {"kind", std::string(kind_name(r.kind))},
              {"case_id", r.case_id},       {"prompt", r.prompt},
              {"response", r.response},     {"model_id", r.model_id},
              {"created_at", r.created_at}};
}

EnrichmentRecord record_from_json(const json& j) {
  EnrichmentRecord r;
  r.cache_key = j.at("cache_key").get<std::string>();
  r.kind = parse_kind(j.at("kind").get<std::string>());
  r.case_id = j.at("case_id").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.response = j.at("response").get<std::string>();
  r.model_id = j.at("model_id").get<std::string>();
  r.created_at = j.value("created_at", std::string());
  return r;
}

}  // namespace

EnrichmentCache::EnrichmentCache(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::istringstream in(read_file(path_));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      EnrichmentRecord r = record_from_json(json::parse(line));
      records_.insert_or_assign(r.cache_key, std::move(r));
    } catch (const std::exception& e) {
      throw CacheError(path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::optional<EnrichmentRecord> EnrichmentCache::find(const std::string& key) const {
  std::shared_lock lock(mutex_);
  auto it = records_.find(key);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void EnrichmentCache::append(const EnrichmentRecord& record) {
  std::unique_lock lock(mutex_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw CacheError("cannot open cache file " + path_.string());
  out << record_to_json(record).dump() << '\n';
  out.flush();
  if (!out) throw CacheError("failed to append to cache file " + path_.string());
  records_.insert_or_assign(record.cache_key, record);
}

std::size_t EnrichmentCache::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

// ---------------------------------------------------------------------------
// Generator

EnrichmentGenerator::EnrichmentGenerator(CompletionClientConfig config, CompletionBackend* backend,
                                         EnrichmentCache& cache,
                                         std::map<RepresentationKind, std::vector<Demonstration>> demos)
    : config_(std::move(config)), backend_(backend), cache_(cache), demos_(std::move(demos)) {
  if (backend_ == nullptr && !config_.offline) throw ConfigError("an online enrichment generator needs a backend");
}

std::string EnrichmentGenerator::generate(RepresentationKind kind, const Case& c) {
  if (kind == RepresentationKind::Text) throw UnsupportedKindError("text is never generated");
  const std::string key = enrichment_cache_key(kind, c.text, config_.model_id);
  if (auto hit = cache_.find(key)) return hit->response;
  if (config_.offline) {
    throw OfflineCacheMissError("no cached " + std::string(kind_name(kind)) + " for case '" + c.id +
                                "' and offline mode is set");
  }
  auto demos = demos_.find(kind);
  if (demos == demos_.end()) throw ConfigError("no demonstrations loaded for " + std::string(kind_name(kind)));
  const std::string prompt = build_fewshot_prompt(kind, demos->second, c);

  std::lock_guard lock(backend_mutex_);
  if (auto hit = cache_.find(key)) return hit->response;
  const std::string response = trim(backend_->complete(prompt));
  if (response.empty()) throw ClientError("empty completion for case '" + c.id + "'");
  cache_.append(EnrichmentRecord{key, kind, c.id, prompt, response, config_.model_id, utc_timestamp()});
  return response;
}

std::vector<Case> EnrichmentGenerator::enrich(std::vector<Case> cases, std::span<const RepresentationKind> kinds) {
  for (auto& c : cases) {
    for (const RepresentationKind kind : kinds) {
      if (kind == RepresentationKind::Text) continue;
      c.set_enrichment(kind, generate(kind, c));
    }
  }
  return cases;
}

std::map<RepresentationKind, std::vector<Demonstration>> load_demo_dir(const std::filesystem::path& dir,
                                                                       std::span<const RepresentationKind> kinds) {
  std::map<RepresentationKind, std::vector<Demonstration>> out;
  for (const RepresentationKind kind : kinds) {
    if (kind == RepresentationKind::Text) continue;
    const auto path = dir / (std::string(kind_name(kind)) + ".jsonl");
    if (!std::filesystem::exists(path)) throw ConfigError("missing demonstrations file " + path.string());
    out[kind] = load_demonstrations(path);
    if (out[kind].empty()) throw ConfigError("demonstrations file " + path.string() + " is empty");
  }
  return out;
}

std::vector<std::optional<FallacyLabel>> predict_labels_fewshot(CompletionBackend& backend,
                                                                std::span<const Case> demos,
                                                                std::span<const Case> queries) {
  std::vector<std::optional<FallacyLabel>> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    const std::string completion = backend.complete(build_label_prompt(demos, q));
    try {
      out.push_back(parse_label(completion));
    } catch (const LabelParseError&) {
      out.push_back(std::nullopt);
    }
  }
  return out;
}

}  // namespace cbr
