#pragma once

#include <Eigen/Dense>

#include <array>
#include <string_view>
#include <vector>

#include "cbr/labels.hpp"

namespace cbr {

class Rng;

/// gelu, tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3))).
double gelu(double x);
double gelu_derivative(double x);

/// Two dense layers: x -> gelu(x W1 + b1) -> W2 + b2 -> 13 logits.
/// Biases are stored as single-row matrices.
struct ClassifierParams {
  Eigen::MatrixXd w1;  // D x D_h
  Eigen::MatrixXd b1;  // 1 x D_h
  Eigen::MatrixXd w2;  // D_h x 13
  Eigen::MatrixXd b2;  // 1 x 13

  int input_dim() const { return static_cast<int>(w1.rows()); }
  int hidden_dim() const { return static_cast<int>(w1.cols()); }

  static ClassifierParams zeros(int dim, int hidden);
  static ClassifierParams random(int dim, int hidden, Rng& rng);
};

struct Prediction {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
  FallacyLabel argmax = FallacyLabel::AdHominem;
};

/// Numerically stable softmax plus argmax (first maximum in canonical
/// order).
Prediction make_prediction(const Eigen::VectorXd& logits);

enum class PoolMode { Mean, First };

std::string_view pool_mode_name(PoolMode mode);
PoolMode parse_pool_mode(std::string_view raw);

/// Masked mean over rows (Mean), or the first unmasked row (First).
/// Throws MaskError when every row is masked.
Eigen::VectorXd pool_adapted(const Eigen::MatrixXd& adapted,
                             const std::vector<bool>& mask,
                             PoolMode mode = PoolMode::Mean);

/// Scatters dL/dx back onto the rows pooled by pool_adapted.
Eigen::MatrixXd pool_backward(const Eigen::VectorXd& grad_pooled,
                              Eigen::Index rows, const std::vector<bool>& mask,
                              PoolMode mode = PoolMode::Mean);

struct ClassifierTrace {
  Eigen::VectorXd input;
  Eigen::VectorXd pre_activation;
  Eigen::VectorXd hidden;
};

/// Throws NumericsError on non-finite input and DimError on a shape
/// mismatch.
Prediction classify(const Eigen::VectorXd& x, const ClassifierParams& params,
                    ClassifierTrace* trace = nullptr);

struct LossResult {
  double loss = 0.0;
  Eigen::VectorXd grad_logits;  // probs - onehot(gold)
};

LossResult cross_entropy(const Prediction& pred, FallacyLabel gold);

struct ClassifierGradients {
  Eigen::MatrixXd w1, b1, w2, b2;
  Eigen::VectorXd input;
};

ClassifierGradients classifier_backward(const Eigen::VectorXd& grad_logits,
                                        const ClassifierTrace& trace,
                                        const ClassifierParams& params);

}  // namespace cbr
