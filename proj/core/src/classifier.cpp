#include "cbr/classifier.hpp"

#include <cmath>
#include <numbers>

#include "cbr/errors.hpp"
#include "cbr/rng.hpp"

namespace cbr {
namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

ClassifierParams ClassifierParams::zeros(int dim, int hidden) {
  ClassifierParams p;
  p.w1 = Eigen::MatrixXd::Zero(dim, hidden);
  p.b1 = Eigen::MatrixXd::Zero(1, hidden);
  p.w2 = Eigen::MatrixXd::Zero(hidden, static_cast<Eigen::Index>(kNumLabels));
  p.b2 = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(kNumLabels));
  return p;
}

ClassifierParams ClassifierParams::random(int dim, int hidden, Rng& rng) {
  ClassifierParams p;
  const double b1 = 1.0 / std::sqrt(static_cast<double>(dim));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  const auto labels = static_cast<Eigen::Index>(kNumLabels);
  p.w1 = uniform_matrix(dim, hidden, b1, rng);
  p.b1 = uniform_matrix(1, hidden, b1, rng);
  p.w2 = uniform_matrix(hidden, labels, b2, rng);
  p.b2 = uniform_matrix(1, labels, b2, rng);
  return p;
}

Prediction make_prediction(const Eigen::VectorXd& logits) {
  Prediction p;
  p.logits = logits;
  const double max_logit = logits.maxCoeff();
  p.probs = (logits.array() - max_logit).exp();
  p.probs /= p.probs.sum();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  p.argmax = label_at(static_cast<std::size_t>(best));
  return p;
}

std::string_view pool_mode_name(PoolMode mode) { return mode == PoolMode::Mean ? "mean" : "first"; }

PoolMode parse_pool_mode(std::string_view raw) {
  if (raw == "mean") return PoolMode::Mean;
  if (raw == "first") return PoolMode::First;
  throw ConfigError("unknown pool mode '" + std::string(raw) + "'");
}

Eigen::VectorXd pool_adapted(const Eigen::MatrixXd& adapted, const std::vector<bool>& mask, PoolMode mode) {
  if (static_cast<Eigen::Index>(mask.size()) != adapted.rows()) throw ShapeError("pool mask length mismatch");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(adapted.cols());
  std::size_t n = 0;
  for (Eigen::Index r = 0; r < adapted.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    if (mode == PoolMode::First) return adapted.row(r).transpose();
    sum += adapted.row(r).transpose();
    ++n;
  }
  if (n == 0) throw MaskError("every query position is masked");
  return sum / static_cast<double>(n);
}

Eigen::MatrixXd pool_backward(const Eigen::VectorXd& grad_pooled, Eigen::Index rows,
                              const std::vector<bool>& mask, PoolMode mode) {
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(rows, grad_pooled.size());
  std::size_t n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  if (n == 0) throw MaskError("every query position is masked");
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    if (mode == PoolMode::First) {
      grad.row(r) = grad_pooled.transpose();
      break;
    }
    grad.row(r) = grad_pooled.transpose() / static_cast<double>(n);
  }
  return grad;
}

Prediction classify(const Eigen::VectorXd& x, const ClassifierParams& params, ClassifierTrace* trace) {
  if (x.size() != params.w1.rows()) {
    throw DimError("classifier input dim " + std::to_string(x.size()) + " != " + std::to_string(params.w1.rows()));
  }
  if (!x.allFinite()) throw NumericsError("classifier input is not finite");
  const Eigen::VectorXd pre = params.w1.transpose() * x + params.b1.row(0).transpose();
  const Eigen::VectorXd hidden = pre.unaryExpr([](double v) { return gelu(v); });
  const Eigen::VectorXd logits = params.w2.transpose() * hidden + params.b2.row(0).transpose();
  if (!logits.allFinite()) throw NumericsError("classifier logits are not finite");
  if (trace != nullptr) {
    trace->input = x;
    trace->pre_activation = pre;
    trace->hidden = hidden;
  }
  return make_prediction(logits);
}

LossResult cross_entropy(const Prediction& pred, FallacyLabel gold) {
  const auto g = static_cast<Eigen::Index>(label_index(gold));
  const double max_logit = pred.logits.maxCoeff();
  const double lse = max_logit + std::log((pred.logits.array() - max_logit).exp().sum());
  LossResult r;
  r.loss = std::max(0.0, lse - pred.logits(g));
  r.grad_logits = pred.probs;
  r.grad_logits(g) -= 1.0;
  return r;
}

ClassifierGradients classifier_backward(const Eigen::VectorXd& grad_logits, const ClassifierTrace& trace,
                                        const ClassifierParams& params) {
  ClassifierGradients g;
  g.w2 = trace.hidden * grad_logits.transpose();
  g.b2 = grad_logits.transpose();
  const Eigen::VectorXd grad_hidden = params.w2 * grad_logits;
  const Eigen::VectorXd grad_pre =
      grad_hidden.array() * trace.pre_activation.unaryExpr([](double v) { return gelu_derivative(v); }).array();
  g.w1 = trace.input * grad_pre.transpose();
  g.b1 = grad_pre.transpose();
  g.input = params.w1 * grad_pre;
  return g;
}

}  // namespace cbr
