#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cbr/adapter.hpp"
#include "cbr/classifier.hpp"
#include "cbr/corpus.hpp"
#include "cbr/encoders.hpp"
#include "cbr/retriever.hpp"

namespace cbr {

enum class OptimizerKind { Adam, Sgd };

std::string_view optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view raw);

struct TrainConfig {
  std::size_t k = 1;
  double db_ratio = 0.1;
  RepresentationKind representation = RepresentationKind::Text;
  int heads = 8;
  int dim = 64;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool attention_enabled = true;
  PoolMode pool = PoolMode::Mean;
  bool sep_between_cases = false;
  bool include_synthetic = true;
  std::size_t max_k = 5;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  std::string to_json() const;
  static TrainConfig from_json(std::string_view json);
};

/// A named view of one trainable tensor.
struct NamedTensor {
  std::string name;
  Eigen::MatrixXd* value;
};

struct ConstNamedTensor {
  std::string name;
  const Eigen::MatrixXd* value;
};

/// Adapter plus classifier. tensors() lists every trainable tensor in the
/// fixed update order: adapter.w_query[h], adapter.w_key[h],
/// adapter.w_value[h] for h = 0..H-1, adapter.w_out, classifier.w1,
/// classifier.b1, classifier.w2, classifier.b2.
struct ModelParams {
  AdapterParams adapter;
  ClassifierParams classifier;

  static ModelParams zeros(int dim, int heads);
  static ModelParams random(int dim, int heads, std::uint64_t seed);

  std::vector<NamedTensor> tensors();
  std::vector<ConstNamedTensor> tensors() const;
  std::size_t parameter_count() const;
};

struct EpochStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

struct TrainedModel {
  ModelParams params;
  TrainConfig config;
  EncoderSpec retrieval_encoder;
  EncoderSpec adapter_encoder;
  std::string db_fingerprint;
  std::vector<EpochStats> history;
  /// Free-form JSON object stored verbatim (resolved run config, input hashes).
  std::string provenance_json = "{}";
};

/// Retrieval encoder (sentence vectors) and adapter encoder (token states).
/// They may be the same encoder.
struct EncoderPair {
  Encoder retrieval;
  Encoder adapter;
};

/// Encoded inputs for one case. Depends only on frozen components, so it is
/// computed once and reused across epochs.
struct PreparedExample {
  std::string case_id;
  std::optional<FallacyLabel> gold;
  ComposedInput composed;
  EncodedSequence query_seq;
  EncodedSequence key_seq;
};

/// Frozen part of the pipeline: representation, retrieval, composition,
/// and encoding.
class Pipeline {
 public:
  /// db must already be subsampled; the retrieval index for
  /// config.representation is built here when missing.
  Pipeline(TrainConfig config, CaseDatabase db, EncoderPair encoders);

  const TrainConfig& config() const { return config_; }
  const CaseDatabase& database() const { return db_; }
  const EncoderPair& encoders() const { return encoders_; }

  /// Retrieval excludes the case's own id. Results are memoized by id.
  const PreparedExample& prepare(const Case& c);

  /// Same as prepare without touching the memo.
  PreparedExample prepare_uncached(const Case& c) const;

  std::vector<RetrievalHit> retrieve(const Case& c, std::size_t k) const;

 private:
  TrainConfig config_;
  CaseDatabase db_;
  EncoderPair encoders_;
  std::unordered_map<std::string, PreparedExample> memo_;
};

struct ForwardResult {
  AdaptedOutput adapted;
  std::vector<bool> query_mask;
  Eigen::VectorXd pooled;
  ClassifierTrace trace;
  Prediction prediction;
};

ForwardResult forward_prepared(const ModelParams& params, const TrainConfig& config,
                               const PreparedExample& example);

/// Full pipeline for one case: prepare, adapt, pool, classify.
ForwardResult forward_example(const ModelParams& params, Pipeline& pipeline,
                              const Case& c);

/// Gradients of the cross-entropy loss, laid out like ModelParams.
ModelParams backward_example(const ModelParams& params, const TrainConfig& config,
                             const ForwardResult& fwd, FallacyLabel gold,
                             double* loss_out = nullptr);

double example_loss(const ModelParams& params, const TrainConfig& config,
                    const PreparedExample& example, FallacyLabel gold);

struct OptimizerState {
  std::vector<Eigen::MatrixXd> first_moment;
  std::vector<Eigen::MatrixXd> second_moment;
  std::uint64_t step = 0;
};

/// Adam with bias correction, or plain SGD, applied in tensors() order.
/// Throws NumericsError naming the first tensor with a non-finite gradient.
void optimizer_step(ModelParams& params, const ModelParams& grads,
                    OptimizerState& state, const TrainConfig& config);

/// Seeded per-epoch shuffling, minibatch mean loss, frozen encoders and
/// retriever. Throws ConfigError on an empty train set and NumericsError if
/// an epoch loss is not finite.
TrainedModel train(const TrainConfig& config, Pipeline& pipeline,
                   const std::vector<Case>& trainset);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  std::size_t entries = 0;
};

/// Central differences of `loss` over every entry of `tensors`, compared with
/// `analytic`. Relative error is |a - n| / max(1e-8, |n|).
GradCheckResult finite_difference_check(const std::function<double()>& loss,
                                        std::span<const NamedTensor> tensors,
                                        std::span<const ConstNamedTensor> analytic,
                                        double epsilon = 1e-5);

/// Checks every adapter and classifier parameter of the example loss.
GradCheckResult finite_difference_check(const ModelParams& params,
                                        const TrainConfig& config,
                                        const PreparedExample& example,
                                        FallacyLabel gold, double epsilon = 1e-5);

/// Random encoded example with lengths in [1, max_len] and at least one
/// unmasked row per side.
PreparedExample random_prepared_example(int dim, int max_len, std::uint64_t seed);

/// Serialized "CBRM" checkpoint.
std::string checkpoint_bytes(const TrainedModel& model);
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);
TrainedModel parse_checkpoint(std::string_view bytes);

}  // namespace cbr
