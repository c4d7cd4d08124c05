#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>

#include "cbr/corpus.hpp"
#include "cbr/encoders.hpp"
#include "cbr/enrichment.hpp"
#include "cbr/errors.hpp"
#include "cbr/evaluation.hpp"
#include "cbr/hashing.hpp"
#include "cbr/io.hpp"
#include "cbr/labels.hpp"
#include "cbr/training.hpp"

namespace cbr::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  TrainConfig tc;
  std::string representation{kind_name(TrainConfig{}.representation)};
  std::string optimizer{optimizer_name(TrainConfig{}.optimizer)};
  std::string pool{pool_mode_name(TrainConfig{}.pool)};

  EncoderSpec encoder_spec;
  std::string encoder{variant_name(EncoderSpec{}.variant)};
  std::string embeddings;
  std::string retrieval_embeddings;

  std::string config;
  std::string corpus;
  std::string format = "auto";
  std::string train;
  std::string test;
  std::string db;
  std::string checkpoint;
  std::string out = "cbr-out";
  std::string demos;
  std::string cache;
  std::string lexicon;

  CompletionClientConfig client;
  std::vector<std::string> kinds;

  std::size_t target = 0;
  std::string query;
  std::string query_id;
  std::size_t trials = 1000;
  std::string method = "frequency";
  std::size_t overlap_k = 0;

  std::vector<std::size_t> ks;
  std::vector<double> ratios;
  std::vector<std::string> representations;
  std::vector<std::string> attentions;

  int gc_dim = 16;
  int gc_heads = 2;
  int gc_max_len = 6;
  std::size_t gc_seeds = 1;
  std::string gc_mode = "both";
};

struct Context {
  Options& o;
  const CLI::App& sub;
  std::ostream& out;
  std::ostream& err;
};

void add_common(CLI::App* s, Options& o) {
  s->add_option("--config", o.config, "Flat key = value file; command-line flags take precedence");
  s->add_option("--out", o.out, "Output directory")->envname("CBR_OUT_DIR");
}

void add_train_options(CLI::App* s, Options& o) {
  auto& c = o.tc;
  s->add_option("--k", c.k, "Number of retrieved cases");
  s->add_option("--db-ratio", c.db_ratio, "Fraction of the case database kept, in (0, 1]");
  s->add_option("--representation", o.representation,
                "text, counterarguments, goals, explanations or structure");
  s->add_option("--heads", c.heads, "Attention heads");
  s->add_option("--dim", c.dim, "Model dimension");
  s->add_option("--epochs", c.epochs);
  s->add_option("--batch-size", c.batch_size);
  s->add_option("--lr", c.learning_rate, "Learning rate");
  s->add_option("--optimizer", o.optimizer, "adam or sgd");
  s->add_option("--beta1", c.beta1);
  s->add_option("--beta2", c.beta2);
  s->add_option("--epsilon", c.epsilon);
  s->add_option("--seed", c.seed);
  s->add_option("--attention", c.attention_enabled, "on: cross-attention; off: bypass");
  s->add_option("--pool", o.pool, "mean or first");
  s->add_option("--sep-between-cases", c.sep_between_cases);
  s->add_option("--include-synthetic", c.include_synthetic, "Keep augmented cases in the database");
  s->add_option("--max-k", c.max_k);
}

void add_encoder_options(CLI::App* s, Options& o) {
  s->add_option("--encoder", o.encoder, "hashed_ngram or file_backed");
  s->add_option("--embeddings", o.embeddings, "CBRE file with token states (file_backed)");
  s->add_option("--retrieval-embeddings", o.retrieval_embeddings,
                "CBRE file with sentence vectors; defaults to --embeddings");
  s->add_option("--position-scale", o.encoder_spec.position_scale);
  s->add_option("--hash-buckets", o.encoder_spec.buckets);
  s->add_option("--hash-seed", o.encoder_spec.seed);
}

void add_client_options(CLI::App* s, Options& o) {
  auto& c = o.client;
  s->add_option("--endpoint", c.endpoint, "Completion endpoint URL");
  s->add_option("--model-id", c.model_id);
  s->add_option("--api-key-env", c.api_key_env, "Environment variable holding the API key");
  s->add_option("--max-retries", c.max_retries);
  s->add_option("--backoff-ms", c.backoff_base_ms);
  s->add_option("--temperature", c.temperature);
  s->add_option("--max-tokens", c.max_tokens);
  s->add_option("--timeout", c.timeout_seconds, "Seconds");
  s->add_option("--offline", c.offline, "Serve from the cache only");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool user_supplied(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin() + 1, args.end(), [&](const std::string& a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

/// Splices config-file entries in as flags right after the subcommand name,
/// skipping keys the user also passed on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const CLI::App& app) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  for (const CLI::App* s : app.get_subcommands({})) {
    if (s->get_name() == args[0]) sub = s;
  }
  if (sub == nullptr) return args;

  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  std::vector<std::string> injected;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    if (key == "config") throw UsageError(path + ":" + std::to_string(lineno) + ": nested config files are not supported");
    if (sub->get_option_no_throw(flag) == nullptr) {
      bool known = false;
      for (const CLI::App* s : app.get_subcommands({})) known = known || s->get_option_no_throw(flag) != nullptr;
      if (!known) throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      continue;
    }
    if (user_supplied(args, flag)) continue;
    injected.push_back(flag + "=" + value);
  }
  std::vector<std::string> expanded{args[0]};
  expanded.insert(expanded.end(), injected.begin(), injected.end());
  expanded.insert(expanded.end(), args.begin() + 1, args.end());
  return expanded;
}

json resolved_options(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name == "out") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

void hash_into(json& j, const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) j[f.generic_string()] = git_blob_hash_file(f);
  } else {
    j[p.generic_string()] = git_blob_hash_file(p);
  }
}

json input_hashes(std::initializer_list<std::string> paths) {
  json j = json::object();
  for (const auto& p : paths) {
    if (!p.empty()) hash_into(j, p);
  }
  return j;
}

json run_block(const Context& ctx, std::initializer_list<std::string> inputs) {
  return json{{"command", ctx.sub.get_name()}, {"options", resolved_options(ctx.sub)}, {"inputs", input_hashes(inputs)}};
}

fs::path out_dir(const Options& o) {
  fs::create_directories(o.out);
  return o.out;
}

void write_json(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

template <typename F>
auto usage_guard(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

TrainConfig resolve_train_config(const Options& o) {
  return usage_guard([&] {
    TrainConfig c = o.tc;
    c.representation = parse_kind(o.representation);
    c.optimizer = parse_optimizer(o.optimizer);
    c.pool = parse_pool_mode(o.pool);
    c.validate();
    return c;
  });
}

DatasetFormat resolve_format(const std::string& format, const fs::path& path) {
  if (format != "auto") return parse_format(format);
  if (fs::is_directory(path)) return fs::exists(path / "train.jsonl") ? DatasetFormat::Jsonl : DatasetFormat::Csv;
  return format_from_path(path);
}

std::vector<Case> load_split(const Options& o, const std::string& path, std::string_view split,
                             bool allow_unlabeled = false) {
  return load_cases(path, resolve_format(o.format, path), split, allow_unlabeled);
}

std::vector<RepresentationKind> resolve_kinds(const std::vector<std::string>& names,
                                              std::vector<RepresentationKind> fallback) {
  if (names.empty()) return fallback;
  return usage_guard([&] {
    std::vector<RepresentationKind> kinds;
    for (const auto& n : names) kinds.push_back(parse_kind(n));
    return kinds;
  });
}

/// Hashed encoders use the model dimension; file-backed ones impose the
/// file's dimension unless --dim was given explicitly.
EncoderPair make_encoders(const Context& ctx, TrainConfig& config) {
  const Options& o = ctx.o;
  const auto variant = usage_guard([&] { return parse_variant(o.encoder); });
  if (variant == EncoderVariant::HashedNgram) {
    EncoderSpec spec = o.encoder_spec;
    spec.variant = variant;
    spec.dim = config.dim;
    const Encoder e = Encoder::hashed(spec);
    return EncoderPair{e, e};
  }
  if (o.embeddings.empty()) throw UsageError("--encoder file_backed requires --embeddings");
  EncoderSpec spec;
  spec.variant = variant;
  spec.embedding_file = o.embeddings;
  const Encoder adapter = Encoder::from_spec(spec);
  Encoder retrieval = adapter;
  if (!o.retrieval_embeddings.empty()) {
    spec.embedding_file = o.retrieval_embeddings;
    retrieval = Encoder::from_spec(spec);
  }
  if (ctx.sub.count("--dim") == 0) {
    config.dim = adapter.dim();
    usage_guard([&] {
      config.validate();
      return 0;
    });
  }
  return EncoderPair{retrieval, adapter};
}

CaseDatabase make_database(std::vector<Case> cases, const TrainConfig& config) {
  return subsample_database(CaseDatabase(std::move(cases), 1.0, config.seed), config.db_ratio, config.seed);
}

json counts_json(const LabelCounts& counts) {
  json j = json::object();
  for (auto l : kAllLabels) j[std::string(label_name(l))] = counts[label_index(l)];
  return j;
}

json metrics_summary(const MetricsReport& m) {
  return json{{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"accuracy", m.accuracy}};
}

std::string format_prf(const MetricsReport& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "precision %.4f recall %.4f f1 %.4f", m.precision, m.recall, m.f1);
  return buf;
}

int cmd_ingest(const Context& ctx) {
  const auto& o = ctx.o;
  const auto corpus = load_dataset(o.corpus, resolve_format(o.format, o.corpus));
  const auto dir = out_dir(o);
  save_jsonl(corpus.train, dir / "train.jsonl");
  if (!corpus.test.empty()) save_jsonl(corpus.test, dir / "test.jsonl");
  json report = run_block(ctx, {o.corpus});
  report["train_counts"] = counts_json(corpus.train_counts());
  report["test_counts"] = counts_json(corpus.test_counts());
  write_json(dir / "ingest.json", report);
  ctx.out << "ingested " << corpus.train.size() << " train and " << corpus.test.size() << " test cases into "
          << dir.string() << "\n";
  return 0;
}

int cmd_augment(const Context& ctx) {
  const auto& o = ctx.o;
  LabeledCorpus corpus;
  corpus.train = load_split(o, o.train, "train");
  const auto before = corpus.train_counts();
  const std::size_t target = o.target > 0 ? o.target : *std::max_element(before.begin(), before.end());
  const auto balanced = balance_classes(corpus, target, load_lexicon(o.lexicon), o.tc.seed);
  const auto dir = out_dir(o);
  save_jsonl(balanced.train, dir / "train_augmented.jsonl");
  json report = run_block(ctx, {o.train, o.lexicon});
  report["target"] = target;
  report["counts_before"] = counts_json(before);
  report["counts_after"] = counts_json(balanced.train_counts());
  write_json(dir / "augment.json", report);
  ctx.out << "augmented " << corpus.train.size() << " cases to " << balanced.train.size() << "\n";
  return 0;
}

int cmd_enrich(const Context& ctx) {
  const auto& o = ctx.o;
  const auto kinds = resolve_kinds(o.kinds, {RepresentationKind::Counterarguments, RepresentationKind::Goals,
                                             RepresentationKind::Explanations, RepresentationKind::Structure});
  if (std::find(kinds.begin(), kinds.end(), RepresentationKind::Text) != kinds.end()) {
    throw UsageError("text is not an enrichment kind");
  }
  if (!o.client.offline && o.client.endpoint.empty()) throw UsageError("--endpoint is required unless --offline");
  if (!o.client.offline && o.demos.empty()) throw UsageError("--demos is required unless --offline");

  const auto cases = load_split(o, o.corpus, "corpus", true);
  const auto dir = out_dir(o);
  const fs::path cache_path = o.cache.empty() ? dir / "enrichment_cache.jsonl" : fs::path(o.cache);
  std::map<RepresentationKind, std::vector<Demonstration>> demos;
  if (!o.demos.empty()) demos = load_demo_dir(o.demos, kinds);

  EnrichmentCache cache(cache_path);
  std::unique_ptr<HttpCompletionClient> client;
  if (!o.client.offline) client = std::make_unique<HttpCompletionClient>(o.client);
  EnrichmentGenerator generator(o.client, client.get(), cache, demos);
  const auto enriched = generator.enrich(cases, kinds);
  save_jsonl(enriched, dir / "enriched.jsonl");

  const std::size_t calls = client ? client->calls() : 0;
  json report = run_block(ctx, {o.corpus, o.demos});
  report["cache"] = cache_path.generic_string();
  report["cache_records"] = cache.size();
  report["network_calls"] = calls;
  write_json(dir / "enrich.json", report);
  ctx.out << "enriched " << enriched.size() << " cases (" << kinds.size() << " kinds); network calls: " << calls
          << "\n";
  return 0;
}

int cmd_embed_import(const Context& ctx) {
  const auto& o = ctx.o;
  const auto store = load_embedding_file(o.embeddings);
  std::size_t with_sentence = 0;
  for (const auto& [key, rec] : store.records) with_sentence += rec.sentence.has_value() ? 1 : 0;

  std::vector<std::string> missing;
  if (!o.corpus.empty()) {
    const auto kinds = resolve_kinds(o.kinds, {RepresentationKind::Text});
    for (const auto& c : load_split(o, o.corpus, "corpus", true)) {
      for (auto kind : kinds) {
        const std::string key = c.id + "#" + std::string(kind_name(kind));
        if (!store.records.contains(key)) missing.push_back(key);
      }
    }
  }
  if (!missing.empty()) {
    throw MissingEmbeddingError(std::to_string(missing.size()) + " corpus entries have no embedding, first: " +
                                missing.front());
  }

  const auto dir = out_dir(o);
  const fs::path target = dir / "embeddings.cbre";
  if (!fs::exists(target) || !fs::equivalent(target, o.embeddings)) {
    fs::copy_file(o.embeddings, target, fs::copy_options::overwrite_existing);
  }
  json report = run_block(ctx, {o.embeddings, o.corpus});
  report["dim"] = store.dim;
  report["records"] = store.records.size();
  report["records_with_sentence_vector"] = with_sentence;
  write_json(dir / "embed_import.json", report);
  ctx.out << "imported " << store.records.size() << " records (dim " << store.dim << ") to " << target.string()
          << "\n";
  return 0;
}

int cmd_retrieve(const Context& ctx) {
  const auto& o = ctx.o;
  TrainConfig config = resolve_train_config(o);
  if (o.query.empty() == o.query_id.empty()) throw UsageError("give exactly one of --query and --query-id");
  const auto cases = load_split(o, o.db, "db");
  auto encoders = make_encoders(ctx, config);

  Case query("query", o.query, std::nullopt);
  if (!o.query_id.empty()) {
    const auto it = std::find_if(cases.begin(), cases.end(), [&](const Case& c) { return c.id == o.query_id; });
    if (it == cases.end()) throw ConfigError("no case with id " + o.query_id);
    query = *it;
  }
  Pipeline pipeline(config, make_database(cases, config), std::move(encoders));
  for (const auto& hit : pipeline.retrieve(query, config.k)) {
    const Case* c = pipeline.database().find(hit.case_id);
    json line{{"case_id", hit.case_id},
              {"score", hit.score},
              {"rank", hit.rank},
              {"text", c->text},
              {"label", std::string(label_name(*c->label))}};
    ctx.out << line.dump() << "\n";
  }
  return 0;
}

int cmd_train(const Context& ctx) {
  const auto& o = ctx.o;
  TrainConfig config = resolve_train_config(o);
  const auto train_cases = load_split(o, o.train, "train");
  auto db_cases = o.db.empty() ? train_cases : load_split(o, o.db, "db");
  auto encoders = make_encoders(ctx, config);
  Pipeline pipeline(config, make_database(std::move(db_cases), config), std::move(encoders));

  json run = run_block(ctx, {o.train, o.db, o.embeddings, o.retrieval_embeddings});
  run["train_config"] = json::parse(config.to_json());
  TrainedModel model = train(config, pipeline, train_cases);
  model.provenance_json = run.dump();

  const auto dir = out_dir(o);
  const std::string bytes = checkpoint_bytes(model);
  atomic_write(dir / "checkpoint.cbrm", bytes);

  json report = run;
  json history = json::array();
  for (const auto& e : model.history) history.push_back({{"loss", e.mean_loss}, {"accuracy", e.accuracy}});
  report["history"] = std::move(history);
  report["db_fingerprint"] = model.db_fingerprint;
  report["checkpoint"] = (dir / "checkpoint.cbrm").generic_string();
  report["checkpoint_sha256"] = sha256_hex(bytes);
  write_json(dir / "train.json", report);

  if (model.history.empty()) {
    ctx.out << "0 epochs; initial checkpoint written to " << (dir / "checkpoint.cbrm").string() << "\n";
  } else {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu epochs; final loss %.6f, train accuracy %.4f\n", model.history.size(),
                  model.history.back().mean_loss, model.history.back().accuracy);
    ctx.out << buf << "checkpoint written to " << (dir / "checkpoint.cbrm").string() << "\n";
  }
  return 0;
}

int cmd_eval(const Context& ctx) {
  const auto& o = ctx.o;
  const TrainedModel model = load_checkpoint(o.checkpoint);
  EncoderSpec adapter_spec = model.adapter_encoder;
  EncoderSpec retrieval_spec = model.retrieval_encoder;
  if (!o.embeddings.empty()) adapter_spec.embedding_file = o.embeddings;
  if (!o.retrieval_embeddings.empty()) {
    retrieval_spec.embedding_file = o.retrieval_embeddings;
  } else if (!o.embeddings.empty()) {
    retrieval_spec.embedding_file = o.embeddings;
  }
  EncoderPair encoders{Encoder::from_spec(retrieval_spec), Encoder::from_spec(adapter_spec)};

  const auto test_cases = load_split(o, o.test, "test");
  Pipeline pipeline(model.config, make_database(load_split(o, o.db, "db"), model.config), std::move(encoders));
  auto result = evaluate(model, pipeline, test_cases);

  json run = run_block(ctx, {o.checkpoint, o.test, o.db, o.embeddings, o.retrieval_embeddings});
  run["train_config"] = json::parse(model.config.to_json());
  result.metrics.config_json = run.dump();
  const auto dir = out_dir(o);
  atomic_write(dir / "metrics.json", result.metrics.to_json() + "\n");
  ctx.out << format_prf(result.metrics) << " on " << result.metrics.evaluated << " cases\n";

  if (o.overlap_k > 0) {
    const auto overlap = label_overlap(model, pipeline, test_cases, o.overlap_k);
    json j = json::parse(overlap.to_json());
    j["run"] = run;
    write_json(dir / "overlap.json", j);
    ctx.out << "label overlap: ground truth " << overlap.ground_truth_overlap << ", prediction "
            << overlap.prediction_overlap << "\n";
  }
  return 0;
}

bool parse_switch(const std::string& raw) {
  if (raw == "on" || raw == "true" || raw == "1") return true;
  if (raw == "off" || raw == "false" || raw == "0") return false;
  throw UsageError("expected on or off, got '" + raw + "'");
}

int cmd_ablate(const Context& ctx) {
  const auto& o = ctx.o;
  TrainConfig base = resolve_train_config(o);
  AblationGrid grid;
  grid.ks = o.ks.empty() ? std::vector<std::size_t>{base.k} : o.ks;
  grid.ratios = o.ratios.empty() ? std::vector<double>{base.db_ratio} : o.ratios;
  grid.representations = resolve_kinds(o.representations, {base.representation});
  if (o.attentions.empty()) {
    grid.attention = {base.attention_enabled};
  } else {
    for (const auto& a : o.attentions) grid.attention.push_back(parse_switch(a));
  }
  usage_guard([&] {
    for (const auto& cell : expand_grid(grid)) {
      TrainConfig c = base;
      c.k = cell.k;
      c.db_ratio = cell.ratio;
      c.validate();
    }
    return 0;
  });

  const auto train_cases = load_split(o, o.train, "train");
  const auto test_cases = load_split(o, o.test, "test");
  const auto encoders = make_encoders(ctx, base);
  const auto dir = out_dir(o) / "ablation";
  const auto rows = ablation_sweep(grid, base, train_cases, test_cases, encoders, dir);

  json run = run_block(ctx, {o.train, o.test, o.embeddings, o.retrieval_embeddings});
  run["train_config"] = json::parse(base.to_json());
  json cells = json::array();
  for (const auto& r : rows) {
    cells.push_back({{"cell_hash", r.cell_hash},
                     {"checkpoint_sha256", r.checkpoint_hash},
                     {"from_cache", r.from_cache},
                     {"metrics", metrics_summary(r.metrics)}});
  }
  run["cells"] = std::move(cells);
  write_json(dir / "run.json", run);
  ctx.out << sweep_csv(rows);
  return 0;
}

/// First original case of each class, in file order.
std::vector<Case> label_demos(const std::vector<Case>& train) {
  std::vector<Case> demos;
  std::array<bool, kNumLabels> seen{};
  for (const auto& c : train) {
    if (!c.label || is_synthetic(c) || seen[label_index(*c.label)]) continue;
    seen[label_index(*c.label)] = true;
    demos.push_back(c);
  }
  return demos;
}

int cmd_baseline(const Context& ctx) {
  const auto& o = ctx.o;
  if (o.method != "frequency" && o.method != "fewshot") throw UsageError("--method must be frequency or fewshot");
  if (o.method == "fewshot" && o.client.endpoint.empty()) throw UsageError("--method fewshot requires --endpoint");

  const auto train_cases = load_split(o, o.train, "train");
  const auto test_cases = load_split(o, o.test, "test");
  std::vector<FallacyLabel> golds;
  for (const auto& c : test_cases) golds.push_back(*c.label);

  MetricsReport report;
  if (o.method == "frequency") {
    std::vector<Case> originals;
    std::copy_if(train_cases.begin(), train_cases.end(), std::back_inserter(originals),
                 [](const Case& c) { return !is_synthetic(c); });
    report = frequency_baseline(count_labels(originals), golds, o.tc.seed, o.trials);
  } else {
    HttpCompletionClient client(o.client);
    const auto preds = predict_labels_fewshot(client, label_demos(train_cases), test_cases);
    report = weighted_prf(confusion_matrix(golds, preds));
    report.config_json = json{{"baseline", "fewshot"}, {"model_id", o.client.model_id}}.dump();
  }
  json run = run_block(ctx, {o.train, o.test});
  run["baseline"] = json::parse(report.config_json);
  report.config_json = run.dump();
  const auto dir = out_dir(o);
  atomic_write(dir / ("baseline_" + o.method + ".json"), report.to_json() + "\n");
  ctx.out << o.method << " baseline: " << format_prf(report) << "\n";
  return 0;
}

int cmd_gradcheck(const Context& ctx) {
  const auto& o = ctx.o;
  std::vector<bool> modes;
  if (o.gc_mode == "both") {
    modes = {true, false};
  } else {
    modes = {parse_switch(o.gc_mode)};
  }
  if (o.gc_max_len < 1 || o.gc_seeds == 0) throw UsageError("--max-len and --seeds must be positive");
  TrainConfig config;
  config.dim = o.gc_dim;
  config.heads = o.gc_heads;
  usage_guard([&] {
    config.pool = parse_pool_mode(o.pool);
    config.validate();
    return 0;
  });

  constexpr double kTolerance = 1e-4;
  double worst = 0.0;
  for (std::uint64_t seed = o.tc.seed; seed < o.tc.seed + o.gc_seeds; ++seed) {
    const auto example = random_prepared_example(config.dim, o.gc_max_len, seed);
    const auto params = ModelParams::random(config.dim, config.heads, seed);
    for (bool attention : modes) {
      config.attention_enabled = attention;
      const auto r = finite_difference_check(params, config, example, *example.gold);
      char buf[200];
      std::snprintf(buf, sizeof buf, "seed %llu attention %s: max relative error %.3e at %s(%ld,%ld) over %zu entries\n",
                    static_cast<unsigned long long>(seed), attention ? "on" : "off", r.max_relative_error,
                    r.worst_tensor.c_str(), static_cast<long>(r.worst_row), static_cast<long>(r.worst_col), r.entries);
      ctx.out << buf;
      worst = std::max(worst, r.max_relative_error);
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "max relative error: %.3e (%s)\n", worst, worst < kTolerance ? "pass" : "fail");
  ctx.out << buf;
  return worst < kTolerance ? 0 : 1;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Case-based reasoning for logical fallacy classification", "cbr"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  Options o;

  auto* ingest = app.add_subcommand("ingest", "Load a CSV/JSONL corpus and write JSONL splits");
  add_common(ingest, o);
  ingest->add_option("--corpus", o.corpus, "File or directory with train/test files")->required();
  ingest->add_option("--format", o.format, "auto, csv or jsonl");

  auto* augment = app.add_subcommand("augment", "Balance train classes by synonym substitution");
  add_common(augment, o);
  augment->add_option("--train", o.train)->required();
  augment->add_option("--lexicon", o.lexicon, "JSONL {token, substitutes}")->required();
  augment->add_option("--target", o.target, "Cases per class; 0 means the largest class size");
  augment->add_option("--seed", o.tc.seed);
  augment->add_option("--format", o.format);

  auto* enrich = app.add_subcommand("enrich", "Generate enriched representations through a completion endpoint");
  add_common(enrich, o);
  add_client_options(enrich, o);
  enrich->add_option("--corpus", o.corpus)->required();
  enrich->add_option("--kinds", o.kinds, "Enrichment kinds")->delimiter(',');
  enrich->add_option("--demos", o.demos, "Directory with <kind>.jsonl demonstrations");
  enrich->add_option("--cache", o.cache, "Enrichment cache; defaults to <out>/enrichment_cache.jsonl");
  enrich->add_option("--format", o.format);

  auto* embed = app.add_subcommand("embed-import", "Validate and import a CBRE embedding file");
  add_common(embed, o);
  embed->add_option("--embeddings", o.embeddings)->required();
  embed->add_option("--corpus", o.corpus, "Check that every case has an entry");
  embed->add_option("--kinds", o.kinds, "Kinds to check; defaults to text")->delimiter(',');
  embed->add_option("--format", o.format);

  auto* retrieve = app.add_subcommand("retrieve", "Print the top-k similar cases as JSONL");
  add_common(retrieve, o);
  add_train_options(retrieve, o);
  add_encoder_options(retrieve, o);
  retrieve->add_option("--db", o.db, "Case database")->required();
  retrieve->add_option("--query", o.query, "Query text");
  retrieve->add_option("--query-id", o.query_id, "Database case to use as the query (excluded from hits)");
  retrieve->add_option("--format", o.format);

  auto* train_cmd = app.add_subcommand("train", "Train adapter and classifier");
  add_common(train_cmd, o);
  add_train_options(train_cmd, o);
  add_encoder_options(train_cmd, o);
  train_cmd->add_option("--train", o.train)->required();
  train_cmd->add_option("--db", o.db, "Case database; defaults to the train set");
  train_cmd->add_option("--format", o.format);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, o);
  eval->add_option("--checkpoint", o.checkpoint)->required();
  eval->add_option("--test", o.test)->required();
  eval->add_option("--db", o.db, "Case database used at training time")->required();
  eval->add_option("--embeddings", o.embeddings, "Override the checkpoint's token-state file");
  eval->add_option("--retrieval-embeddings", o.retrieval_embeddings);
  eval->add_option("--overlap-k", o.overlap_k, "Also report retrieved-label overlap at this k");
  eval->add_option("--format", o.format);

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate over a grid");
  add_common(ablate, o);
  add_train_options(ablate, o);
  add_encoder_options(ablate, o);
  ablate->add_option("--train", o.train)->required();
  ablate->add_option("--test", o.test)->required();
  ablate->add_option("--ks", o.ks)->delimiter(',');
  ablate->add_option("--ratios", o.ratios)->delimiter(',');
  ablate->add_option("--representations", o.representations)->delimiter(',');
  ablate->add_option("--attentions", o.attentions, "on, off")->delimiter(',');
  ablate->add_option("--format", o.format);

  auto* baseline = app.add_subcommand("baseline", "Frequency or few-shot prompting baseline");
  add_common(baseline, o);
  add_client_options(baseline, o);
  baseline->add_option("--method", o.method, "frequency or fewshot");
  baseline->add_option("--train", o.train)->required();
  baseline->add_option("--test", o.test)->required();
  baseline->add_option("--trials", o.trials);
  baseline->add_option("--seed", o.tc.seed);
  baseline->add_option("--format", o.format);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  gradcheck->add_option("--config", o.config);
  gradcheck->add_option("--seed", o.tc.seed, "First seed");
  gradcheck->add_option("--seeds", o.gc_seeds, "Number of consecutive seeds");
  gradcheck->add_option("--dim", o.gc_dim);
  gradcheck->add_option("--heads", o.gc_heads);
  gradcheck->add_option("--max-len", o.gc_max_len);
  gradcheck->add_option("--mode", o.gc_mode, "both, on or off");
  gradcheck->add_option("--pool", o.pool);

  const std::vector<std::pair<CLI::App*, int (*)(const Context&)>> commands{
      {ingest, cmd_ingest},     {augment, cmd_augment}, {enrich, cmd_enrich}, {embed, cmd_embed_import},
      {retrieve, cmd_retrieve}, {train_cmd, cmd_train}, {eval, cmd_eval},     {ablate, cmd_ablate},
      {baseline, cmd_baseline}, {gradcheck, cmd_gradcheck}};

  try {
    auto expanded = expand_config(args, app);
    std::reverse(expanded.begin(), expanded.end());
    app.parse(expanded);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    if (app.get_subcommands().empty()) err << app.help();
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  for (const auto& [sub, fn] : commands) {
    if (!sub->parsed()) continue;
    const Context ctx{o, *sub, out, err};
    try {
      return fn(ctx);
    } catch (const UsageError& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}

}  // namespace cbr::cli
