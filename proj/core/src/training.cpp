#include "cbr/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "cbr/errors.hpp"
#include "cbr/io.hpp"
#include "cbr/rng.hpp"

namespace cbr {

using nlohmann::json;

std::string_view optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view raw) {
  if (raw == "adam") return OptimizerKind::Adam;
  if (raw == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + std::string(raw) + "'");
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (k > max_k) {
    throw ConfigError("k must lie in {0,...," + std::to_string(max_k) + "}, got " + std::to_string(k));
  }
  if (!(db_ratio > 0.0 && db_ratio <= 1.0)) {
    throw ConfigError("db_ratio must lie in (0, 1], got " + std::to_string(db_ratio));
  }
  if (heads <= 0) throw ConfigError("heads must be positive");
  if (dim <= 0 || dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

std::string TrainConfig::to_json() const {
  json j;
  j["k"] = k;
  j["db_ratio"] = db_ratio;
  j["representation"] = std::string(kind_name(representation));
  j["heads"] = heads;
  j["dim"] = dim;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["optimizer"] = std::string(optimizer_name(optimizer));
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["epsilon"] = epsilon;
  j["seed"] = seed;
  j["attention_enabled"] = attention_enabled;
  j["pool"] = std::string(pool_mode_name(pool));
  j["sep_between_cases"] = sep_between_cases;
  j["include_synthetic"] = include_synthetic;
  j["max_k"] = max_k;
  return j.dump();
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  const json j = json::parse(text);
  TrainConfig c;
  c.k = j.value("k", c.k);
  c.db_ratio = j.value("db_ratio", c.db_ratio);
  c.representation = parse_kind(j.value("representation", std::string("text")));
  c.heads = j.value("heads", c.heads);
  c.dim = j.value("dim", c.dim);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.optimizer = parse_optimizer(j.value("optimizer", std::string("adam")));
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  c.attention_enabled = j.value("attention_enabled", c.attention_enabled);
  c.pool = parse_pool_mode(j.value("pool", std::string("mean")));
  c.sep_between_cases = j.value("sep_between_cases", c.sep_between_cases);
  c.include_synthetic = j.value("include_synthetic", c.include_synthetic);
  c.max_k = j.value("max_k", c.max_k);
  return c;
}

// ---------------------------------------------------------------------------
// ModelParams

ModelParams ModelParams::zeros(int dim, int heads) {
  return ModelParams{AdapterParams::zeros(dim, heads), ClassifierParams::zeros(dim, dim)};
}

ModelParams ModelParams::random(int dim, int heads, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p;
  p.adapter = AdapterParams::random(dim, heads, rng);
  p.classifier = ClassifierParams::random(dim, dim, rng);
  return p;
}

namespace {

template <typename Params, typename Out, typename Wrap>
void list_tensors(Params& p, std::vector<Out>& out, Wrap wrap) {
  auto name = [](const char* base, std::size_t h) { return std::string(base) + "[" + std::to_string(h) + "]"; };
  for (std::size_t h = 0; h < p.adapter.w_query.size(); ++h) out.push_back(wrap(name("adapter.w_query", h), p.adapter.w_query[h]));
  for (std::size_t h = 0; h < p.adapter.w_key.size(); ++h) out.push_back(wrap(name("adapter.w_key", h), p.adapter.w_key[h]));
  for (std::size_t h = 0; h < p.adapter.w_value.size(); ++h) out.push_back(wrap(name("adapter.w_value", h), p.adapter.w_value[h]));
  out.push_back(wrap("adapter.w_out", p.adapter.w_out));
  out.push_back(wrap("classifier.w1", p.classifier.w1));
  out.push_back(wrap("classifier.b1", p.classifier.b1));
  out.push_back(wrap("classifier.w2", p.classifier.w2));
  out.push_back(wrap("classifier.b2", p.classifier.b2));
}

}  // namespace

std::vector<NamedTensor> ModelParams::tensors() {
  std::vector<NamedTensor> out;
  list_tensors(*this, out, [](std::string n, Eigen::MatrixXd& m) { return NamedTensor{std::move(n), &m}; });
  return out;
}

std::vector<ConstNamedTensor> ModelParams::tensors() const {
  std::vector<ConstNamedTensor> out;
  list_tensors(*this, out,
               [](std::string n, const Eigen::MatrixXd& m) { return ConstNamedTensor{std::move(n), &m}; });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += static_cast<std::size_t>(t.value->size());
  return n;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(TrainConfig config, CaseDatabase db, EncoderPair encoders)
    : config_(std::move(config)),
      db_(config_.include_synthetic ? std::move(db) : without_synthetic(db)),
      encoders_(std::move(encoders)) {
  if (encoders_.adapter.dim() != config_.dim) {
    throw ConfigError("adapter encoder dim " + std::to_string(encoders_.adapter.dim()) +
                      " does not match model dim " + std::to_string(config_.dim));
  }
  if (!db_.has_index(config_.representation)) db_.build_index(config_.representation, encoders_.retrieval);
}

namespace {

RepresentationKind effective_kind(const Case& c, RepresentationKind kind) {
  return c.has_representation(kind) ? kind : RepresentationKind::Text;
}

TextUnit unit_for(const Case& c, RepresentationKind kind) {
  return TextUnit{c.id + "#" + std::string(kind_name(kind)), represent(c, kind)};
}

}  // namespace

std::vector<RetrievalHit> Pipeline::retrieve(const Case& c, std::size_t k) const {
  const TextUnit query = unit_for(c, effective_kind(c, config_.representation));
  return retrieve_top_k(db_, config_.representation, encoders_.retrieval.sentence_embedding(query), k,
                        std::string_view(c.id));
}

PreparedExample Pipeline::prepare_uncached(const Case& c) const {
  const RepresentationKind kind = effective_kind(c, config_.representation);
  if (kind != config_.representation) {
    warn("case '" + c.id + "' has no " + std::string(kind_name(config_.representation)) +
         " enrichment; using text");
  }
  PreparedExample ex;
  ex.case_id = c.id;
  ex.gold = c.label;
  const TextUnit query = unit_for(c, kind);

  std::vector<RetrievalHit> hits;
  if (config_.k > 0) hits = retrieve(c, config_.k);
  std::vector<TextUnit> similars;
  std::vector<std::string> similar_texts;
  for (const auto& hit : hits) {
    const Case& s = db_.cases()[hit.row];
    similars.push_back(unit_for(s, effective_kind(s, config_.representation)));
    similar_texts.push_back(similars.back().text);
  }
  ex.composed = compose_case_string(query.text, similar_texts, kSepToken, config_.sep_between_cases);
  ex.composed.hits = std::move(hits);

  ex.query_seq = encoders_.adapter.encode_tokens(query);
  ex.key_seq = similars.empty() ? ex.query_seq
                                : encoders_.adapter.encode_composed(query, similars, config_.sep_between_cases);
  return ex;
}

const PreparedExample& Pipeline::prepare(const Case& c) {
  std::string key = c.id;
  key.push_back('\0');
  key += c.text;
  auto it = memo_.find(key);
  if (it != memo_.end()) return it->second;
  return memo_.emplace(std::move(key), prepare_uncached(c)).first->second;
}

// ---------------------------------------------------------------------------
// Forward / backward

ForwardResult forward_prepared(const ModelParams& params, const TrainConfig& config, const PreparedExample& ex) {
  ForwardResult r;
  r.adapted = config.attention_enabled ? attention_forward(ex.query_seq, ex.key_seq, params.adapter)
                                       : bypass_forward(ex.query_seq, ex.key_seq);
  r.query_mask = ex.query_seq.mask;
  r.pooled = pool_adapted(r.adapted.adapted, ex.query_seq.mask, config.pool);
  r.prediction = classify(r.pooled, params.classifier, &r.trace);
  return r;
}

ForwardResult forward_example(const ModelParams& params, Pipeline& pipeline, const Case& c) {
  return forward_prepared(params, pipeline.config(), pipeline.prepare(c));
}

ModelParams backward_example(const ModelParams& params, const TrainConfig& config, const ForwardResult& fwd,
                             FallacyLabel gold, double* loss_out) {
  const LossResult loss = cross_entropy(fwd.prediction, gold);
  if (loss_out != nullptr) *loss_out = loss.loss;
  ClassifierGradients cg = classifier_backward(loss.grad_logits, fwd.trace, params.classifier);
  const Eigen::MatrixXd grad_adapted =
      pool_backward(cg.input, fwd.adapted.adapted.rows(), fwd.query_mask, config.pool);
  AdapterGradients ag = attention_backward(grad_adapted, fwd.adapted, params.adapter);

  ModelParams g;
  g.adapter.heads = params.adapter.heads;
  g.adapter.dim = params.adapter.dim;
  g.adapter.w_query = std::move(ag.w_query);
  g.adapter.w_key = std::move(ag.w_key);
  g.adapter.w_value = std::move(ag.w_value);
  g.adapter.w_out = std::move(ag.w_out);
  g.classifier.w1 = std::move(cg.w1);
  g.classifier.b1 = std::move(cg.b1);
  g.classifier.w2 = std::move(cg.w2);
  g.classifier.b2 = std::move(cg.b2);
  return g;
}

double example_loss(const ModelParams& params, const TrainConfig& config, const PreparedExample& ex,
                    FallacyLabel gold) {
  return cross_entropy(forward_prepared(params, config, ex).prediction, gold).loss;
}

// ---------------------------------------------------------------------------
// Optimizer

void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                    const TrainConfig& config) {
  auto p = params.tensors();
  const auto g = grads.tensors();
  if (p.size() != g.size()) throw ShapeError("gradient tensor count does not match parameters");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].value->rows() != g[i].value->rows() || p[i].value->cols() != g[i].value->cols()) {
      throw ShapeError("gradient shape mismatch for " + p[i].name);
    }
    if (!g[i].value->allFinite()) throw NumericsError("non-finite gradient in " + g[i].name);
  }
  ++state.step;
  if (config.optimizer == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < p.size(); ++i) *p[i].value -= config.learning_rate * *g[i].value;
    return;
  }
  if (state.first_moment.size() != p.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& t : p) {
      state.first_moment.push_back(Eigen::MatrixXd::Zero(t.value->rows(), t.value->cols()));
      state.second_moment.push_back(Eigen::MatrixXd::Zero(t.value->rows(), t.value->cols()));
    }
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& grad = *g[i].value;
    m = config.beta1 * m + (1.0 - config.beta1) * grad;
    v = config.beta2 * v + (1.0 - config.beta2) * grad.cwiseProduct(grad);
    const Eigen::ArrayXXd m_hat = m.array() / c1;
    const Eigen::ArrayXXd v_hat = v.array() / c2;
    p[i].value->array() -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

void accumulate(ModelParams& acc, const ModelParams& g) {
  auto a = acc.tensors();
  const auto b = g.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) *a[i].value += *b[i].value;
}

void scale(ModelParams& p, double factor) {
  for (auto& t : p.tensors()) *t.value *= factor;
}

}  // namespace

TrainedModel train(const TrainConfig& config, Pipeline& pipeline, const std::vector<Case>& trainset) {
  config.validate();
  if (trainset.empty()) throw ConfigError("training set is empty");
  for (const auto& c : trainset) {
    if (!c.label) throw ConfigError("training case '" + c.id + "' has no label");
  }
  if (pipeline.encoders().adapter.dim() != config.dim) {
    throw ConfigError("adapter encoder dim does not match config dim");
  }

  TrainedModel model;
  model.config = config;
  model.retrieval_encoder = pipeline.encoders().retrieval.spec();
  model.adapter_encoder = pipeline.encoders().adapter.spec();
  model.db_fingerprint = pipeline.database().fingerprint();
  model.params = ModelParams::random(config.dim, config.heads, mix_seed(config.seed, 1));

  std::vector<const PreparedExample*> examples;
  examples.reserve(trainset.size());
  for (const auto& c : trainset) examples.push_back(&pipeline.prepare(c));

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(config.seed, 2));
  OptimizerState state;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double total_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ModelParams batch_grad = ModelParams::zeros(config.dim, config.heads);
      for (std::size_t i = start; i < end; ++i) {
        const PreparedExample& ex = *examples[order[i]];
        const ForwardResult fwd = forward_prepared(model.params, config, ex);
        double loss = 0.0;
        accumulate(batch_grad, backward_example(model.params, config, fwd, *ex.gold, &loss));
        total_loss += loss;
        if (fwd.prediction.argmax == *ex.gold) ++correct;
      }
      scale(batch_grad, 1.0 / static_cast<double>(end - start));
      optimizer_step(model.params, batch_grad, state, config);
    }
    EpochStats stats{total_loss / static_cast<double>(order.size()),
                     static_cast<double>(correct) / static_cast<double>(order.size())};
    if (!std::isfinite(stats.mean_loss)) {
      throw NumericsError("training loss became non-finite at epoch " + std::to_string(epoch + 1));
    }
    model.history.push_back(stats);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

// Straight-line forward pass in extended precision. Central differences of
// a double loss carry ~1e-11 of cancellation noise, which is larger than the
// checker's 1e-8 floor times its 1e-4 tolerance.
long double extended_loss(const ModelParams& params, const TrainConfig& config, const PreparedExample& ex,
                          FallacyLabel gold) {
  const LMatrix ec = ex.query_seq.states.cast<long double>();
  const LMatrix es = ex.key_seq.states.cast<long double>();
  const auto tc = ec.rows();
  const auto ts = es.rows();
  const int dim = params.adapter.dim;
  LMatrix adapted(tc, dim);
  if (config.attention_enabled) {
    const int heads = params.adapter.heads;
    const int dh = dim / heads;
    const long double scale = 1.0L / std::sqrt(static_cast<long double>(dh));
    LMatrix concat(tc, dim);
    for (int h = 0; h < heads; ++h) {
      const LMatrix q = ec * params.adapter.w_query[h].cast<long double>();
      const LMatrix k = es * params.adapter.w_key[h].cast<long double>();
      const LMatrix v = es * params.adapter.w_value[h].cast<long double>();
      for (Eigen::Index i = 0; i < tc; ++i) {
        LVector w = LVector::Zero(ts);
        long double top = -std::numeric_limits<long double>::infinity();
        for (Eigen::Index j = 0; j < ts; ++j) {
          if (ex.key_seq.mask[j]) top = std::max(top, q.row(i).dot(k.row(j)) * scale);
        }
        long double z = 0.0L;
        for (Eigen::Index j = 0; j < ts; ++j) {
          if (!ex.key_seq.mask[j]) continue;
          w(j) = std::exp(q.row(i).dot(k.row(j)) * scale - top);
          z += w(j);
        }
        concat.block(i, static_cast<Eigen::Index>(h) * dh, 1, dh) = (w / z).transpose() * v;
      }
    }
    adapted = concat * params.adapter.w_out.cast<long double>();
  } else {
    LVector mean = LVector::Zero(dim);
    long double n = 0.0L;
    for (Eigen::Index j = 0; j < ts; ++j) {
      if (!ex.key_seq.mask[j]) continue;
      mean += es.row(j).transpose();
      n += 1.0L;
    }
    adapted = (mean / n).transpose().replicate(tc, 1);
  }

  LVector pooled = LVector::Zero(dim);
  if (config.pool == PoolMode::First) {
    for (Eigen::Index i = 0; i < tc; ++i) {
      if (ex.query_seq.mask[i]) {
        pooled = adapted.row(i).transpose();
        break;
      }
    }
  } else {
    long double n = 0.0L;
    for (Eigen::Index i = 0; i < tc; ++i) {
      if (!ex.query_seq.mask[i]) continue;
      pooled += adapted.row(i).transpose();
      n += 1.0L;
    }
    pooled /= n;
  }

  const auto& cp = params.classifier;
  LVector pre = cp.w1.cast<long double>().transpose() * pooled + cp.b1.cast<long double>().transpose();
  for (Eigen::Index i = 0; i < pre.size(); ++i) {
    const long double x = pre(i);
    pre(i) = 0.5L * x * (1.0L + std::tanh(0.7978845608028654L * (x + 0.044715L * x * x * x)));
  }
  const LVector logits = cp.w2.cast<long double>().transpose() * pre + cp.b2.cast<long double>().transpose();
  const long double top = logits.maxCoeff();
  const long double lse = top + std::log((logits.array() - top).exp().sum());
  return lse - logits(static_cast<Eigen::Index>(label_index(gold)));
}

template <typename Real>
GradCheckResult check_entries(const std::function<Real()>& loss, std::span<const NamedTensor> tensors,
                              std::span<const ConstNamedTensor> analytic, double epsilon) {
  if (tensors.size() != analytic.size()) throw ShapeError("tensor and gradient lists differ in length");
  GradCheckResult result;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Eigen::MatrixXd& value = *tensors[i].value;
    const Eigen::MatrixXd& grad = *analytic[i].value;
    if (value.rows() != grad.rows() || value.cols() != grad.cols()) {
      throw ShapeError("gradient shape mismatch for " + tensors[i].name);
    }
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        const double original = value(r, c);
        const double up = original + epsilon;
        const double down = original - epsilon;
        value(r, c) = up;
        const Real plus = loss();
        value(r, c) = down;
        const Real minus = loss();
        value(r, c) = original;
        // Divide by the step actually taken after rounding the perturbed values.
        const double numeric = static_cast<double>((plus - minus) / static_cast<Real>(up - down));
        const double err = std::abs(grad(r, c) - numeric) / std::max(1e-8, std::abs(numeric));
        ++result.entries;
        if (result.entries == 1 || err > result.max_relative_error) {
          result.max_relative_error = err;
          result.worst_tensor = tensors[i].name;
          result.worst_row = r;
          result.worst_col = c;
        }
      }
    }
  }
  return result;
}

}  // namespace

GradCheckResult finite_difference_check(const std::function<double()>& loss, std::span<const NamedTensor> tensors,
                                        std::span<const ConstNamedTensor> analytic, double epsilon) {
  return check_entries<double>(loss, tensors, analytic, epsilon);
}

GradCheckResult finite_difference_check(const ModelParams& params, const TrainConfig& config,
                                        const PreparedExample& example, FallacyLabel gold, double epsilon) {
  ModelParams probe = params;
  const ForwardResult fwd = forward_prepared(probe, config, example);
  const ModelParams grads = backward_example(probe, config, fwd, gold);
  const auto tensors = probe.tensors();
  const auto analytic = grads.tensors();
  const std::function<long double()> loss = [&] { return extended_loss(probe, config, example, gold); };
  return check_entries<long double>(loss, tensors, analytic, epsilon);
}

PreparedExample random_prepared_example(int dim, int max_len, std::uint64_t seed) {
  Rng rng(seed);
  auto make_seq = [&](Eigen::Index len) {
    EncodedSequence s;
    s.states.resize(len, dim);
    for (Eigen::Index r = 0; r < len; ++r) {
      for (int c = 0; c < dim; ++c) s.states(r, c) = rng.uniform(-1.0, 1.0);
    }
    s.mask.resize(static_cast<std::size_t>(len));
    for (auto&& m : s.mask) m = rng.uniform01() < 0.8;
    s.mask[static_cast<std::size_t>(rng.uniform_index(static_cast<std::uint64_t>(len)))] = true;
    return s;
  };
  PreparedExample ex;
  ex.case_id = "random-" + std::to_string(seed);
  const auto tq = static_cast<Eigen::Index>(1 + rng.uniform_index(static_cast<std::uint64_t>(max_len)));
  const auto tk = static_cast<Eigen::Index>(1 + rng.uniform_index(static_cast<std::uint64_t>(max_len)));
  ex.query_seq = make_seq(tq);
  ex.key_seq = make_seq(tk);
  ex.gold = label_at(static_cast<std::size_t>(rng.uniform_index(kNumLabels)));
  return ex;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr char kModelMagic[4] = {'C', 'B', 'R', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_tensor(std::string& out, const Eigen::MatrixXd& m) {
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
  }
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view d) : d_(d) {}
  std::string_view take(std::size_t n) {
    if (d_.size() - pos_ < n) throw FormatError("truncated model checkpoint");
    auto s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  void tensor(Eigen::MatrixXd& m, const std::string& name) {
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    if (rows != m.rows() || cols != m.cols()) throw FormatError("checkpoint tensor " + name + " has unexpected shape");
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = std::bit_cast<float>(u32());
    }
  }
  bool done() const { return pos_ == d_.size(); }

 private:
  std::string_view d_;
  std::size_t pos_ = 0;
};

json encoder_to_json(const EncoderSpec& s) {
  return json{{"variant", std::string(variant_name(s.variant))},
              {"dim", s.dim},
              {"buckets", s.buckets},
              {"seed", s.seed},
              {"position_scale", s.position_scale},
              {"embedding_file", s.embedding_file.string()}};
}

EncoderSpec encoder_from_json(const json& j) {
  EncoderSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.dim = j.at("dim").get<int>();
  s.buckets = j.at("buckets").get<std::uint64_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.position_scale = j.at("position_scale").get<double>();
  s.embedding_file = j.at("embedding_file").get<std::string>();
  return s;
}

}  // namespace

std::string checkpoint_bytes(const TrainedModel& model) {
  json meta;
  meta["config"] = json::parse(model.config.to_json());
  meta["retrieval_encoder"] = encoder_to_json(model.retrieval_encoder);
  meta["adapter_encoder"] = encoder_to_json(model.adapter_encoder);
  json history = json::array();
  for (const auto& e : model.history) history.push_back({{"loss", e.mean_loss}, {"accuracy", e.accuracy}});
  meta["history"] = std::move(history);
  meta["provenance"] = json::parse(model.provenance_json);
  const std::string meta_text = meta.dump();

  std::string out(kModelMagic, 4);
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;

  const auto& a = model.params.adapter;
  out += "ADPT";
  put_u32(out, static_cast<std::uint32_t>(a.heads));
  put_u32(out, static_cast<std::uint32_t>(a.dim));
  for (const auto& m : a.w_query) put_tensor(out, m);
  for (const auto& m : a.w_key) put_tensor(out, m);
  for (const auto& m : a.w_value) put_tensor(out, m);
  put_tensor(out, a.w_out);

  const auto& c = model.params.classifier;
  out += "CLSF";
  put_u32(out, static_cast<std::uint32_t>(c.input_dim()));
  put_u32(out, static_cast<std::uint32_t>(c.hidden_dim()));
  put_tensor(out, c.w1);
  put_tensor(out, c.b1);
  put_tensor(out, c.w2);
  put_tensor(out, c.b2);

  out += "DBFP";
  put_u32(out, static_cast<std::uint32_t>(model.db_fingerprint.size()));
  out += model.db_fingerprint;
  return out;
}

TrainedModel parse_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.take(4) != std::string_view(kModelMagic, 4)) throw FormatError("bad model checkpoint magic");
  if (const auto v = r.u32(); v != kModelVersion) throw FormatError("unsupported checkpoint version " + std::to_string(v));
  const std::uint32_t meta_len = r.u32();

  TrainedModel model;
  try {
    const json meta = json::parse(r.take(meta_len));
    model.config = TrainConfig::from_json(meta.at("config").dump());
    model.retrieval_encoder = encoder_from_json(meta.at("retrieval_encoder"));
    model.adapter_encoder = encoder_from_json(meta.at("adapter_encoder"));
    for (const auto& e : meta.at("history")) {
      model.history.push_back(EpochStats{e.at("loss").get<double>(), e.at("accuracy").get<double>()});
    }
    model.provenance_json = meta.value("provenance", json::object()).dump();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint metadata: ") + e.what());
  }

  if (r.take(4) != "ADPT") throw FormatError("missing adapter section");
  const auto heads = static_cast<int>(r.u32());
  const auto dim = static_cast<int>(r.u32());
  if (heads <= 0 || dim <= 0 || dim % heads != 0) throw FormatError("invalid adapter shape in checkpoint");
  ModelParams params = ModelParams::zeros(dim, heads);
  for (auto& m : params.adapter.w_query) r.tensor(m, "w_query");
  for (auto& m : params.adapter.w_key) r.tensor(m, "w_key");
  for (auto& m : params.adapter.w_value) r.tensor(m, "w_value");
  r.tensor(params.adapter.w_out, "w_out");

  if (r.take(4) != "CLSF") throw FormatError("missing classifier section");
  const auto in_dim = static_cast<int>(r.u32());
  const auto hidden = static_cast<int>(r.u32());
  if (in_dim != dim) throw FormatError("classifier input dim does not match adapter dim");
  params.classifier = ClassifierParams::zeros(in_dim, hidden);
  r.tensor(params.classifier.w1, "w1");
  r.tensor(params.classifier.b1, "b1");
  r.tensor(params.classifier.w2, "w2");
  r.tensor(params.classifier.b2, "b2");
  model.params = std::move(params);

  if (r.take(4) != "DBFP") throw FormatError("missing database fingerprint");
  model.db_fingerprint = std::string(r.take(r.u32()));
  if (!r.done()) throw FormatError("trailing bytes in model checkpoint");
  return model;
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  atomic_write(path, checkpoint_bytes(model));
}

TrainedModel load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace cbr
