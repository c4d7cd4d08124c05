#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cbr/corpus.hpp"
#include "cbr/labels.hpp"

namespace cbr {

inline constexpr std::string_view kTemplateVersion = "v1";

/// Fixed instruction with a single {case} slot.
struct PromptTemplate {
  RepresentationKind kind;
  std::string instruction;

  /// Substitutes the double-quoted case text into the slot.
  std::string render(std::string_view case_text) const;
};

/// Template for an enrichment kind. Structure has a template for few-shot
/// prompting even though its seeds are hand-written. Throws
/// UnsupportedKindError for Text.
const PromptTemplate& prompt_template(RepresentationKind kind);

/// Zero-shot seed prompt, e.g. `Express the goal of the argument "..."`.
/// Throws UnsupportedKindError for Text and Structure.
std::string build_seed_prompt(RepresentationKind kind, const Case& c);

struct Demonstration {
  std::string prompt;
  std::string response;
};

/// Throws DemoError when the response mentions a fallacy class name.
void validate_demonstration(const Demonstration& demo);

/// JSONL {"prompt": str, "response": str}; every row is validated.
std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path);

/// (prompt:\nresponse\n###\n) per demo, then the new case's prompt and ":".
std::string build_fewshot_prompt(RepresentationKind kind,
                                 std::span<const Demonstration> demos,
                                 const Case& c);

/// Class list, "--------", one "text\nlabel\n###\n" block per class demo,
/// then the query text and a newline. demos must be 13 labeled cases, one
/// per class.
std::string build_label_prompt(std::span<const Case> demos, const Case& query);

/// First line, trimmed and lowercased, folded onto a canonical label.
FallacyLabel parse_label(std::string_view completion);

struct CompletionClientConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080/v1/completions
  std::string api_key_env = "CBR_API_KEY";
  std::string model_id = "default";
  int max_retries = 3;
  int backoff_base_ms = 200;
  double temperature = 0.0;
  int max_tokens = 256;
  int timeout_seconds = 60;
  bool offline = false;
};

/// Text completion endpoint.
class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::size_t calls() const = 0;
};

/// POSTs {"model","prompt","max_tokens","temperature"} and reads {"text"}.
/// Retries with exponential backoff; throws ClientError after the last
/// attempt.
class HttpCompletionClient : public CompletionBackend {
 public:
  explicit HttpCompletionClient(CompletionClientConfig config);
  std::string complete(const std::string& prompt) override;
  std::size_t calls() const override { return calls_; }

 private:
  CompletionClientConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::size_t calls_ = 0;
};

struct EnrichmentRecord {
  std::string cache_key;
  RepresentationKind kind = RepresentationKind::Text;
  std::string case_id;
  std::string prompt;
  std::string response;
  std::string model_id;
  std::string created_at;
};

std::string enrichment_cache_key(RepresentationKind kind, std::string_view case_text,
                                 std::string_view model_id,
                                 std::string_view template_version = kTemplateVersion);

/// Append-only JSONL cache. Appends are serialized; lookups share a lock.
class EnrichmentCache {
 public:
  /// Loads existing records; a missing file is an empty cache.
  explicit EnrichmentCache(std::filesystem::path path);

  std::optional<EnrichmentRecord> find(const std::string& key) const;
  void append(const EnrichmentRecord& record);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, EnrichmentRecord> records_;
};

class EnrichmentGenerator {
 public:
  /// backend may be null only when config.offline is set.
  EnrichmentGenerator(CompletionClientConfig config, CompletionBackend* backend,
                      EnrichmentCache& cache,
                      std::map<RepresentationKind, std::vector<Demonstration>> demos);

  /// Cached response when present; otherwise prompts the backend with the
  /// few-shot prompt, stores the record and returns the trimmed text.
  std::string generate(RepresentationKind kind, const Case& c);

  /// Fills enrichments for every case and kind.
  std::vector<Case> enrich(std::vector<Case> cases,
                           std::span<const RepresentationKind> kinds);

 private:
  CompletionClientConfig config_;
  CompletionBackend* backend_;
  EnrichmentCache& cache_;
  std::map<RepresentationKind, std::vector<Demonstration>> demos_;
  std::mutex backend_mutex_;
};

/// Loads <dir>/<kind>.jsonl for each kind.
std::map<RepresentationKind, std::vector<Demonstration>> load_demo_dir(
    const std::filesystem::path& dir, std::span<const RepresentationKind> kinds);

/// 13-shot label prediction. Completions that do not parse come back as
/// nullopt (abstain).
std::vector<std::optional<FallacyLabel>> predict_labels_fewshot(
    CompletionBackend& backend, std::span<const Case> demos,
    std::span<const Case> queries);

}  // namespace cbr
