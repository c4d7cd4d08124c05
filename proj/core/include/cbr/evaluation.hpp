#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbr/corpus.hpp"
#include "cbr/labels.hpp"
#include "cbr/training.hpp"

namespace cbr {

/// Rows are gold labels, columns predictions. Abstentions (unparseable
/// predictions) are tallied per gold row and count as errors.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> counts{};
  std::array<std::size_t, kNumLabels> abstained{};

  /// Every evaluated case, abstentions included.
  std::size_t total() const;
  /// Support of a gold class, abstentions included.
  std::size_t row_sum(std::size_t gold) const;
  std::size_t column_sum(std::size_t predicted) const;
};

ConfusionMatrix confusion_matrix(std::span<const FallacyLabel> golds,
                                 std::span<const FallacyLabel> preds);

ConfusionMatrix confusion_matrix(std::span<const FallacyLabel> golds,
                                 std::span<const std::optional<FallacyLabel>> preds);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double support = 0.0;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::size_t evaluated = 0;
  std::array<ClassMetrics, kNumLabels> per_class{};
  std::optional<ConfusionMatrix> confusion;
  std::string config_json = "{}";
  std::string db_fingerprint;

  std::string to_json() const;
  static MetricsReport from_json(std::string_view json);
};

/// Per-class P/R/F1 with 0 for empty denominators; weighted by support.
/// Throws ShapeError on an empty matrix.
MetricsReport weighted_prf(const ConfusionMatrix& cm);

/// Samples each test prediction from the train label distribution and
/// averages every metric over trials.
MetricsReport frequency_baseline(const LabelCounts& train_counts,
                                 std::span<const FallacyLabel> test_golds,
                                 std::uint64_t seed, std::size_t trials);

struct OverlapReport {
  double ground_truth_overlap = 0.0;
  double prediction_overlap = 0.0;
  std::size_t k = 0;
  RepresentationKind representation = RepresentationKind::Text;

  std::string to_json() const;
};

/// Mean over test cases of the fraction of retrieved labels equal to the
/// gold label, and to the model's prediction. Throws ConfigError for k = 0.
OverlapReport label_overlap(const TrainedModel& model, Pipeline& pipeline,
                            const std::vector<Case>& testset, std::size_t k);

struct EvaluationResult {
  MetricsReport metrics;
  std::vector<FallacyLabel> golds;
  std::vector<FallacyLabel> predictions;
};

/// Runs the model over labeled cases. Warns when the pipeline database does
/// not match the fingerprint recorded at training time.
EvaluationResult evaluate(const TrainedModel& model, Pipeline& pipeline,
                          const std::vector<Case>& testset);

struct AblationGrid {
  std::vector<std::size_t> ks;
  std::vector<double> ratios;
  std::vector<RepresentationKind> representations;
  std::vector<bool> attention;
};

struct AblationCell {
  std::size_t k = 1;
  double ratio = 1.0;
  RepresentationKind representation = RepresentationKind::Text;
  bool attention = true;
};

struct CellResult {
  AblationCell cell;
  std::string cell_hash;
  std::string checkpoint_hash;
  MetricsReport metrics;
  bool from_cache = false;
};

std::vector<AblationCell> expand_grid(const AblationGrid& grid);

/// Builds the database from train (subsampled to config.db_ratio), trains,
/// and evaluates on evalset.
CellResult train_and_evaluate(const TrainConfig& config,
                              const std::vector<Case>& train,
                              const std::vector<Case>& evalset,
                              const EncoderPair& encoders);

/// One train+eval per cell with the shared base seed. With an output
/// directory, each cell is written to cells/<hash>.json and existing cells
/// are served from disk; sweep.csv is rewritten at the end.
std::vector<CellResult> ablation_sweep(const AblationGrid& grid, const TrainConfig& base,
                                       const std::vector<Case>& train,
                                       const std::vector<Case>& evalset,
                                       const EncoderPair& encoders,
                                       const std::optional<std::filesystem::path>& out_dir);

std::string sweep_csv(std::span<const CellResult> rows);

}  // namespace cbr
