#pragma once

// Independent reference implementations used as test oracles. They share no
// code with the engine beyond plain data types.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cbr/adapter.hpp"
#include "cbr/classifier.hpp"
#include "cbr/labels.hpp"

namespace cbr::testing {

struct NaiveAttention {
  Eigen::MatrixXd adapted;
  std::vector<Eigen::MatrixXd> weights;
};

/// Per-head triple loop over queries, keys and features.
inline NaiveAttention naive_attention(const Eigen::MatrixXd& ec, const Eigen::MatrixXd& es,
                                      const std::vector<bool>& key_mask, const AdapterParams& p) {
  const int d = p.dim;
  const int dh = d / p.heads;
  const auto tc = ec.rows();
  const auto ts = es.rows();
  NaiveAttention out;
  Eigen::MatrixXd concat = Eigen::MatrixXd::Zero(tc, d);
  for (int h = 0; h < p.heads; ++h) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(tc, ts);
    for (Eigen::Index i = 0; i < tc; ++i) {
      std::vector<double> logits(static_cast<std::size_t>(ts), -std::numeric_limits<double>::infinity());
      double top = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < ts; ++j) {
        if (!key_mask[static_cast<std::size_t>(j)]) continue;
        double s = 0.0;
        for (int a = 0; a < dh; ++a) {
          double q = 0.0;
          double k = 0.0;
          for (int b = 0; b < d; ++b) {
            q += ec(i, b) * p.w_query[h](b, a);
            k += es(j, b) * p.w_key[h](b, a);
          }
          s += q * k;
        }
        logits[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
        top = std::max(top, logits[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (Eigen::Index j = 0; j < ts; ++j) {
        if (key_mask[static_cast<std::size_t>(j)]) z += std::exp(logits[static_cast<std::size_t>(j)] - top);
      }
      for (Eigen::Index j = 0; j < ts; ++j) {
        if (key_mask[static_cast<std::size_t>(j)]) w(i, j) = std::exp(logits[static_cast<std::size_t>(j)] - top) / z;
      }
      for (int a = 0; a < dh; ++a) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < ts; ++j) {
          double v = 0.0;
          for (int b = 0; b < d; ++b) v += es(j, b) * p.w_value[h](b, a);
          acc += w(i, j) * v;
        }
        concat(i, h * dh + a) = acc;
      }
    }
    out.weights.push_back(w);
  }
  out.adapted = Eigen::MatrixXd::Zero(tc, d);
  for (Eigen::Index i = 0; i < tc; ++i) {
    for (int c = 0; c < d; ++c) {
      double acc = 0.0;
      for (int b = 0; b < d; ++b) acc += concat(i, b) * p.w_out(b, c);
      out.adapted(i, c) = acc;
    }
  }
  return out;
}

struct BruteHit {
  std::string id;
  double score;
};

/// Scores every vector, sorts the whole list and keeps the first k.
inline std::vector<BruteHit> brute_force_top_k(const std::vector<Eigen::VectorXd>& vectors,
                                               const std::vector<std::string>& ids, const Eigen::VectorXd& query,
                                               std::size_t k, const std::string& exclude = {}) {
  std::vector<BruteHit> all;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (!exclude.empty() && ids[i] == exclude) continue;
    double s = vectors[i].dot(query) / (vectors[i].norm() * query.norm());
    s = std::clamp(s, -1.0, 1.0);
    all.push_back({ids[i], s});
  }
  std::sort(all.begin(), all.end(), [](const BruteHit& a, const BruteHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

struct ReferenceScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::array<double, kNumLabels> class_f1{};
};

/// Weighted P/R/F1 counted straight from (gold, pred) pairs.
inline ReferenceScores reference_scorer(const std::vector<int>& golds, const std::vector<int>& preds) {
  ReferenceScores out;
  const double n = static_cast<double>(golds.size());
  for (int c = 0; c < static_cast<int>(kNumLabels); ++c) {
    double tp = 0;
    double fp = 0;
    double fn = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      if (preds[i] == c && golds[i] == c) tp += 1;
      if (preds[i] == c && golds[i] != c) fp += 1;
      if (preds[i] != c && golds[i] == c) fn += 1;
    }
    const double support = tp + fn;
    const double p = tp + fp == 0 ? 0.0 : tp / (tp + fp);
    const double r = tp + fn == 0 ? 0.0 : tp / (tp + fn);
    const double f = p + r == 0 ? 0.0 : 2 * p * r / (p + r);
    out.class_f1[static_cast<std::size_t>(c)] = f;
    out.precision += support / n * p;
    out.recall += support / n * r;
    out.f1 += support / n * f;
  }
  return out;
}

/// Straight-line classifier evaluation, element by element.
inline std::vector<double> reference_logits(const Eigen::VectorXd& x, const ClassifierParams& p) {
  const auto hidden = p.w1.cols();
  std::vector<double> h(static_cast<std::size_t>(hidden));
  for (Eigen::Index j = 0; j < hidden; ++j) {
    double acc = p.b1(0, j);
    for (Eigen::Index i = 0; i < x.size(); ++i) acc += x(i) * p.w1(i, j);
    const double c = std::sqrt(2.0 / 3.14159265358979323846);
    h[static_cast<std::size_t>(j)] = 0.5 * acc * (1.0 + std::tanh(c * (acc + 0.044715 * acc * acc * acc)));
  }
  std::vector<double> logits(kNumLabels);
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    double acc = p.b2(0, static_cast<Eigen::Index>(k));
    for (Eigen::Index j = 0; j < hidden; ++j) acc += h[static_cast<std::size_t>(j)] * p.w2(j, static_cast<Eigen::Index>(k));
    logits[k] = acc;
  }
  return logits;
}

/// Fits multinomial logistic regression by full-batch gradient descent and
/// reports whether it classifies every training point correctly.
inline bool logistic_regression_separates(const std::vector<Eigen::VectorXd>& x, const std::vector<int>& y,
                                          int classes, int iterations = 3000, double lr = 0.5) {
  const auto d = x.front().size();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d + 1, classes);
  const double n = static_cast<double>(x.size());
  auto scores = [&](const Eigen::VectorXd& xi) {
    Eigen::VectorXd s = w.topRows(d).transpose() * xi + w.row(d).transpose();
    return s;
  };
  for (int it = 0; it < iterations; ++it) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d + 1, classes);
    for (std::size_t i = 0; i < x.size(); ++i) {
      Eigen::VectorXd s = scores(x[i]);
      Eigen::VectorXd p = (s.array() - s.maxCoeff()).exp();
      p /= p.sum();
      p(y[i]) -= 1.0;
      g.topRows(d) += x[i] * p.transpose();
      g.row(d) += p.transpose();
    }
    w -= lr / n * g;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    Eigen::Index best = 0;
    scores(x[i]).maxCoeff(&best);
    if (best != y[i]) return false;
  }
  return true;
}

}  // namespace cbr::testing
