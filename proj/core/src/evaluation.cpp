#include "cbr/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "cbr/errors.hpp"
#include "cbr/hashing.hpp"
#include "cbr/io.hpp"
#include "cbr/rng.hpp"

namespace cbr {

using nlohmann::json;

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (std::size_t g = 0; g < kNumLabels; ++g) n += row_sum(g);
  return n;
}

std::size_t ConfusionMatrix::row_sum(std::size_t gold) const {
  std::size_t n = abstained.at(gold);
  for (std::size_t p = 0; p < kNumLabels; ++p) n += counts.at(gold)[p];
  return n;
}

std::size_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::size_t n = 0;
  for (std::size_t g = 0; g < kNumLabels; ++g) n += counts[g].at(predicted);
  return n;
}

ConfusionMatrix confusion_matrix(std::span<const FallacyLabel> golds, std::span<const FallacyLabel> preds) {
  if (golds.size() != preds.size()) {
    throw ShapeError("confusion matrix needs equal lengths, got " + std::to_string(golds.size()) + " golds and " +
                     std::to_string(preds.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < golds.size(); ++i) ++cm.counts[label_index(golds[i])][label_index(preds[i])];
  return cm;
}

ConfusionMatrix confusion_matrix(std::span<const FallacyLabel> golds,
                                 std::span<const std::optional<FallacyLabel>> preds) {
  if (golds.size() != preds.size()) {
    throw ShapeError("confusion matrix needs equal lengths, got " + std::to_string(golds.size()) + " golds and " +
                     std::to_string(preds.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (preds[i]) {
      ++cm.counts[label_index(golds[i])][label_index(*preds[i])];
    } else {
      ++cm.abstained[label_index(golds[i])];
    }
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Metrics

MetricsReport weighted_prf(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw ShapeError("confusion matrix is empty");
  MetricsReport r;
  r.evaluated = total;
  std::size_t correct = 0;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double predicted = static_cast<double>(cm.column_sum(c));
    const double support = static_cast<double>(cm.row_sum(c));
    ClassMetrics& m = r.per_class[c];
    m.support = support;
    m.precision = predicted > 0 ? tp / predicted : 0.0;
    m.recall = support > 0 ? tp / support : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.precision += support * m.precision;
    r.recall += support * m.recall;
    r.f1 += support * m.f1;
    correct += cm.counts[c][c];
  }
  const double n = static_cast<double>(total);
  r.precision /= n;
  r.recall /= n;
  r.f1 /= n;
  r.accuracy = static_cast<double>(correct) / n;
  r.confusion = cm;
  return r;
}

MetricsReport frequency_baseline(const LabelCounts& train_counts, std::span<const FallacyLabel> test_golds,
                                 std::uint64_t seed, std::size_t trials) {
  if (test_golds.empty()) throw ConfigError("frequency baseline needs a non-empty test set");
  if (trials == 0) throw ConfigError("frequency baseline needs at least one trial");
  std::array<std::uint64_t, kNumLabels> cumulative{};
  std::uint64_t total = 0;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    total += train_counts[c];
    cumulative[c] = total;
  }
  if (total == 0) throw ConfigError("frequency baseline needs non-zero train counts");

  Rng rng(seed);
  MetricsReport mean;
  std::vector<FallacyLabel> preds(test_golds.size());
  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& p : preds) {
      const std::uint64_t draw = rng.uniform_index(total);
      std::size_t c = 0;
      while (draw >= cumulative[c]) ++c;
      p = label_at(c);
    }
    const MetricsReport r = weighted_prf(confusion_matrix(test_golds, preds));
    mean.precision += r.precision;
    mean.recall += r.recall;
    mean.f1 += r.f1;
    mean.accuracy += r.accuracy;
    for (std::size_t c = 0; c < kNumLabels; ++c) {
      mean.per_class[c].precision += r.per_class[c].precision;
      mean.per_class[c].recall += r.per_class[c].recall;
      mean.per_class[c].f1 += r.per_class[c].f1;
      mean.per_class[c].support = r.per_class[c].support;
    }
  }
  const double n = static_cast<double>(trials);
  mean.precision /= n;
  mean.recall /= n;
  mean.f1 /= n;
  mean.accuracy /= n;
  for (auto& m : mean.per_class) {
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
  }
  mean.evaluated = test_golds.size();
  json cfg{{"baseline", "frequency"}, {"seed", seed}, {"trials", trials}};
  mean.config_json = cfg.dump();
  return mean;
}

// ---------------------------------------------------------------------------
// Report serialization

std::string MetricsReport::to_json() const {
  json j;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["accuracy"] = accuracy;
  j["evaluated"] = evaluated;
  json classes = json::object();
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    const auto& m = per_class[c];
    classes[std::string(label_name(label_at(c)))] =
        json{{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
  }
  j["per_class"] = std::move(classes);
  if (confusion) {
    j["confusion"] = confusion->counts;
    j["abstained"] = confusion->abstained;
  }
  j["config"] = json::parse(config_json);
  j["db_fingerprint"] = db_fingerprint;
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(std::string_view text) {
  const json j = json::parse(text);
  MetricsReport r;
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.evaluated = j.at("evaluated").get<std::size_t>();
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    const json& m = j.at("per_class").at(std::string(label_name(label_at(c))));
    r.per_class[c] = ClassMetrics{m.at("precision").get<double>(), m.at("recall").get<double>(),
                                  m.at("f1").get<double>(), m.at("support").get<double>()};
  }
  if (j.contains("confusion")) {
    ConfusionMatrix cm;
    cm.counts = j.at("confusion").get<decltype(cm.counts)>();
    cm.abstained = j.at("abstained").get<decltype(cm.abstained)>();
    r.confusion = cm;
  }
  r.config_json = j.at("config").dump();
  r.db_fingerprint = j.value("db_fingerprint", std::string());
  return r;
}

std::string OverlapReport::to_json() const {
  return json{{"ground_truth_overlap", ground_truth_overlap},
              {"prediction_overlap", prediction_overlap},
              {"k", k},
              {"representation", std::string(kind_name(representation))}}
      .dump(2);
}

// ---------------------------------------------------------------------------
// Model evaluation

namespace {

void require_labels(const std::vector<Case>& cases, std::string_view what) {
  if (cases.empty()) throw ConfigError(std::string(what) + " set is empty");
  for (const auto& c : cases) {
    if (!c.label) throw ConfigError(std::string(what) + " case '" + c.id + "' has no label");
  }
}

}  // namespace

OverlapReport label_overlap(const TrainedModel& model, Pipeline& pipeline, const std::vector<Case>& testset,
                            std::size_t k) {
  if (k == 0) throw ConfigError("label overlap is undefined for k = 0");
  require_labels(testset, "overlap");
  OverlapReport report;
  report.k = k;
  report.representation = pipeline.config().representation;
  for (const auto& c : testset) {
    const auto hits = pipeline.retrieve(c, k);
    if (hits.empty()) continue;
    const FallacyLabel predicted = forward_prepared(model.params, model.config, pipeline.prepare(c)).prediction.argmax;
    std::size_t gold_matches = 0;
    std::size_t pred_matches = 0;
    for (const auto& hit : hits) {
      const FallacyLabel hit_label = *pipeline.database().cases()[hit.row].label;
      gold_matches += hit_label == *c.label ? 1 : 0;
      pred_matches += hit_label == predicted ? 1 : 0;
    }
    const double n = static_cast<double>(hits.size());
    report.ground_truth_overlap += static_cast<double>(gold_matches) / n;
    report.prediction_overlap += static_cast<double>(pred_matches) / n;
  }
  report.ground_truth_overlap /= static_cast<double>(testset.size());
  report.prediction_overlap /= static_cast<double>(testset.size());
  return report;
}

EvaluationResult evaluate(const TrainedModel& model, Pipeline& pipeline, const std::vector<Case>& testset) {
  require_labels(testset, "evaluation");
  if (model.config.dim != pipeline.config().dim || model.config.heads != pipeline.config().heads) {
    throw ConfigError("model shape does not match the evaluation pipeline");
  }
  const std::string fingerprint = pipeline.database().fingerprint();
  if (!model.db_fingerprint.empty() && fingerprint != model.db_fingerprint) {
    warn("case database fingerprint " + fingerprint.substr(0, 12) + " differs from the training database " +
         model.db_fingerprint.substr(0, 12));
  }
  EvaluationResult result;
  for (const auto& c : testset) {
    result.golds.push_back(*c.label);
    result.predictions.push_back(forward_prepared(model.params, model.config, pipeline.prepare(c)).prediction.argmax);
  }
  result.metrics = weighted_prf(confusion_matrix(result.golds, result.predictions));
  result.metrics.config_json = model.config.to_json();
  result.metrics.db_fingerprint = model.db_fingerprint;
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationCell> expand_grid(const AblationGrid& grid) {
  if (grid.ks.empty() || grid.ratios.empty() || grid.representations.empty() || grid.attention.empty()) {
    throw ConfigError("ablation grid has an empty axis");
  }
  std::vector<AblationCell> cells;
  for (const auto k : grid.ks) {
    for (const double ratio : grid.ratios) {
      for (const auto kind : grid.representations) {
        for (const bool attention : grid.attention) cells.push_back(AblationCell{k, ratio, kind, attention});
      }
    }
  }
  return cells;
}

namespace {

TrainConfig apply_cell(TrainConfig config, const AblationCell& cell) {
  config.k = cell.k;
  config.db_ratio = cell.ratio;
  config.representation = cell.representation;
  config.attention_enabled = cell.attention;
  return config;
}

AblationCell cell_of(const TrainConfig& config) {
  return AblationCell{config.k, config.db_ratio, config.representation, config.attention_enabled};
}

std::string encoder_key(const EncoderSpec& s) {
  Sha256Builder b;
  b.add(variant_name(s.variant)).add_u64(static_cast<std::uint64_t>(s.dim)).add_u64(s.buckets).add_u64(s.seed);
  b.add_f64(s.position_scale).add(s.embedding_file.string());
  return b.hex();
}

std::string cell_hash(const TrainConfig& config, const std::string& train_hash, const std::string& eval_hash,
                      const EncoderPair& encoders) {
  Sha256Builder b;
  b.add(config.to_json()).add(train_hash).add(eval_hash);
  b.add(encoder_key(encoders.retrieval.spec())).add(encoder_key(encoders.adapter.spec()));
  return b.hex();
}

json cell_to_json(const CellResult& r) {
  return json{{"k", r.cell.k},
              {"ratio", r.cell.ratio},
              {"representation", std::string(kind_name(r.cell.representation))},
              {"attention", r.cell.attention},
              {"cell_hash", r.cell_hash},
              {"checkpoint_hash", r.checkpoint_hash},
              {"metrics", json::parse(r.metrics.to_json())}};
}

CellResult cell_from_json(const json& j) {
  CellResult r;
  r.cell.k = j.at("k").get<std::size_t>();
  r.cell.ratio = j.at("ratio").get<double>();
  r.cell.representation = parse_kind(j.at("representation").get<std::string>());
  r.cell.attention = j.at("attention").get<bool>();
  r.cell_hash = j.at("cell_hash").get<std::string>();
  r.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
  r.metrics = MetricsReport::from_json(j.at("metrics").dump());
  r.from_cache = true;
  return r;
}

}  // namespace

CellResult train_and_evaluate(const TrainConfig& config, const std::vector<Case>& train,
                              const std::vector<Case>& evalset, const EncoderPair& encoders) {
  config.validate();
  CaseDatabase db = subsample_database(CaseDatabase(train, 1.0, config.seed), config.db_ratio, config.seed);
  Pipeline pipeline(config, std::move(db), encoders);
  const TrainedModel model = cbr::train(config, pipeline, train);
  CellResult r;
  r.cell = cell_of(config);
  r.checkpoint_hash = sha256_hex(checkpoint_bytes(model));
  r.metrics = evaluate(model, pipeline, evalset).metrics;
  return r;
}

std::vector<CellResult> ablation_sweep(const AblationGrid& grid, const TrainConfig& base,
                                       const std::vector<Case>& train, const std::vector<Case>& evalset,
                                       const EncoderPair& encoders,
                                       const std::optional<std::filesystem::path>& out_dir) {
  const auto cells = expand_grid(grid);
  const std::string train_hash = sha256_hex(to_jsonl(train));
  const std::string eval_hash = sha256_hex(to_jsonl(evalset));
  std::vector<CellResult> results;
  for (const auto& cell : cells) {
    const TrainConfig config = apply_cell(base, cell);
    config.validate();
    const std::string hash = cell_hash(config, train_hash, eval_hash, encoders);
    std::optional<std::filesystem::path> cell_path;
    if (out_dir) {
      cell_path = *out_dir / "cells" / (hash + ".json");
      if (std::filesystem::exists(*cell_path)) {
        results.push_back(cell_from_json(json::parse(read_file(*cell_path))));
        continue;
      }
    }
    CellResult r = train_and_evaluate(config, train, evalset, encoders);
    r.cell_hash = hash;
    if (cell_path) atomic_write(*cell_path, cell_to_json(r).dump(2) + "\n");
    results.push_back(std::move(r));
  }
  if (out_dir) atomic_write(*out_dir / "sweep.csv", sweep_csv(results));
  return results;
}

std::string sweep_csv(std::span<const CellResult> rows) {
  std::ostringstream out;
  out << "k,ratio,representation,attention,precision,recall,f1\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%s,%s,%.6f,%.6f,%.6f\n", r.cell.k, r.cell.ratio,
                  std::string(kind_name(r.cell.representation)).c_str(), r.cell.attention ? "on" : "off",
                  r.metrics.precision, r.metrics.recall, r.metrics.f1);
    out << buf;
  }
  return out.str();
}

}  // namespace cbr
