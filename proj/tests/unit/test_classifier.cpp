#include <gtest/gtest.h>

#include <cmath>

#include "cbr/classifier.hpp"
#include "cbr/errors.hpp"
#include "cbr/rng.hpp"
#include "oracles.hpp"

using namespace cbr;

namespace {

Eigen::VectorXd random_vec(Rng& rng, int n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST(Gelu, ZeroAndShape) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(1.0), 0.8411919906082768, 1e-12);
  EXPECT_NEAR(gelu(-3.0), -0.0036373920817729943, 1e-12);
  for (double x : {-2.0, -0.3, 0.0, 0.8, 3.1}) {
    EXPECT_NEAR(gelu_derivative(x), (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6, 1e-8);
  }
}

TEST(Pool, MeanFirstAndMask) {
  Eigen::MatrixXd a(2, 2);
  a << 1, 0, 0, 1;
  EXPECT_EQ(pool_adapted(a.topRows(1), {true}), Eigen::VectorXd(a.row(0).transpose()));
  const Eigen::VectorXd mean = pool_adapted(a, {true, true});
  EXPECT_DOUBLE_EQ(mean(0), 0.5);
  EXPECT_DOUBLE_EQ(mean(1), 0.5);
  const Eigen::VectorXd masked = pool_adapted(a, {true, false});
  EXPECT_DOUBLE_EQ(masked(0), 1.0);
  EXPECT_DOUBLE_EQ(masked(1), 0.0);
  const Eigen::VectorXd first = pool_adapted(a, {false, true}, PoolMode::First);
  EXPECT_DOUBLE_EQ(first(1), 1.0);
  EXPECT_THROW(pool_adapted(a, {false, false}), MaskError);
}

TEST(Classify, ZeroWeightsGiveUniform) {
  const auto p = ClassifierParams::zeros(8, 8);
  const auto pred = classify(Eigen::VectorXd::Ones(8), p);
  for (Eigen::Index i = 0; i < 13; ++i) EXPECT_NEAR(pred.probs(i), 1.0 / 13.0, 1e-15);
  EXPECT_EQ(pred.argmax, FallacyLabel::AdHominem);
  EXPECT_NEAR(cross_entropy(pred, FallacyLabel::Intentional).loss, std::log(13.0), 1e-12);
  EXPECT_NEAR(std::log(13.0), 2.5649494, 1e-7);
}

TEST(Classify, MatchesStraightLineOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = ClassifierParams::random(12, 12, rng);
    const auto x = random_vec(rng, 12, 2.0);
    const auto pred = classify(x, p);
    const auto ref = cbr::testing::reference_logits(x, p);
    for (std::size_t k = 0; k < 13; ++k) EXPECT_NEAR(pred.logits(static_cast<Eigen::Index>(k)), ref[k], 1e-12);
    EXPECT_NEAR(pred.probs.sum(), 1.0, 1e-9);
  }
}

TEST(Classify, RejectsBadInput) {
  const auto p = ClassifierParams::zeros(4, 4);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  x(2) = std::nan("");
  EXPECT_THROW(classify(x, p), NumericsError);
  EXPECT_THROW(classify(Eigen::VectorXd::Zero(5), p), DimError);
}

TEST(Prediction, ArgmaxTiesUseCanonicalOrder) {
  Eigen::VectorXd logits = Eigen::VectorXd::Zero(13);
  logits(4) = 2.0;
  logits(9) = 2.0;
  EXPECT_EQ(make_prediction(logits).argmax, label_at(4));
}

TEST(CrossEntropy, SaturationAndGradient) {
  Eigen::VectorXd logits = Eigen::VectorXd::Zero(13);
  logits(3) = 50.0;
  const auto sat = cross_entropy(make_prediction(logits), label_at(3));
  EXPECT_LT(sat.loss, 1e-9);
  EXPECT_GE(sat.loss, 0.0);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd z = random_vec(rng, 13, 3.0);
    const FallacyLabel gold = label_at(rng.uniform_index(13));
    const auto r = cross_entropy(make_prediction(z), gold);
    EXPECT_NEAR(r.grad_logits.sum(), 0.0, 1e-12);
    for (Eigen::Index i = 0; i < 13; ++i) {
      Eigen::VectorXd up = z, down = z;
      up(i) += 1e-6;
      down(i) -= 1e-6;
      const double fd = (cross_entropy(make_prediction(up), gold).loss -
                         cross_entropy(make_prediction(down), gold).loss) / 2e-6;
      EXPECT_NEAR(r.grad_logits(i), fd, 1e-6);
    }
  }
}

TEST(CrossEntropy, ShiftInvariance) {
  Rng rng(8);
  const Eigen::VectorXd z = random_vec(rng, 13, 2.0);
  const auto a = make_prediction(z);
  const auto b = make_prediction(z.array() + 123.0);
  EXPECT_LT((a.probs - b.probs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.argmax, b.argmax);
  EXPECT_NEAR(cross_entropy(a, label_at(2)).loss, cross_entropy(b, label_at(2)).loss, 1e-12);
}

TEST(ClassifierBackward, MatchesFiniteDifferences) {
  Rng rng(12);
  auto p = ClassifierParams::random(6, 6, rng);
  const auto x = random_vec(rng, 6);
  const FallacyLabel gold = label_at(5);
  ClassifierTrace trace;
  const auto pred = classify(x, p, &trace);
  const auto g = classifier_backward(cross_entropy(pred, gold).grad_logits, trace, p);
  auto loss = [&] { return cross_entropy(classify(x, p), gold).loss; };
  auto check = [&](Eigen::MatrixXd& w, const Eigen::MatrixXd& gw) {
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double o = w(i);
      w(i) = o + 1e-6;
      const double up = loss();
      w(i) = o - 1e-6;
      const double down = loss();
      w(i) = o;
      EXPECT_NEAR(gw(i), (up - down) / 2e-6, 1e-7);
    }
  };
  check(p.w1, g.w1);
  check(p.b1, g.b1);
  check(p.w2, g.w2);
  check(p.b2, g.b2);
}

TEST(ClassifierInit, UniformWithinFanInBound) {
  Rng rng(1);
  const auto p = ClassifierParams::random(16, 16, rng);
  EXPECT_LE(p.w1.cwiseAbs().maxCoeff(), 0.25);
  EXPECT_LE(p.w2.cwiseAbs().maxCoeff(), 0.25);
  EXPECT_GT(p.w1.cwiseAbs().maxCoeff(), 0.2);
}
