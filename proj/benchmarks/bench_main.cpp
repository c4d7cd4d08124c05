#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "cbr/adapter.hpp"
#include "cbr/corpus.hpp"
#include "cbr/encoders.hpp"
#include "cbr/retriever.hpp"
#include "cbr/rng.hpp"
#include "cbr/training.hpp"

using namespace cbr;

namespace {

EncodedSequence random_sequence(Rng& rng, Eigen::Index rows, int dim) {
  EncodedSequence s;
  s.states.resize(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (int c = 0; c < dim; ++c) s.states(r, c) = rng.uniform(-1.0, 1.0);
  }
  s.mask.assign(static_cast<std::size_t>(rows), true);
  return s;
}

std::string sentence(Rng& rng, std::size_t words) {
  static const std::vector<std::string> vocab{"people", "always", "claim", "that", "the", "government", "never",
                                              "listens", "so", "every", "policy", "must", "fail", "because",
                                              "experts", "said", "it", "once", "before", "nobody"};
  std::string s;
  for (std::size_t i = 0; i < words; ++i) {
    if (i > 0) s += ' ';
    s += vocab[rng.uniform_index(vocab.size())];
  }
  return s;
}

void BM_AttentionForward(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const auto keys = state.range(1);
  Rng rng(1);
  const auto params = AdapterParams::random(dim, 8, rng);
  const auto ec = random_sequence(rng, 32, dim);
  const auto es = random_sequence(rng, keys, dim);
  for (auto _ : state) benchmark::DoNotOptimize(attention_forward(ec, es, params).adapted.data());
}
BENCHMARK(BM_AttentionForward)->Args({64, 64})->Args({64, 256})->Args({256, 256});

void BM_AttentionBackward(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  Rng rng(2);
  const auto params = AdapterParams::random(dim, 8, rng);
  const auto out = attention_forward(random_sequence(rng, 32, dim), random_sequence(rng, 128, dim), params);
  const Eigen::MatrixXd grad = Eigen::MatrixXd::Ones(out.adapted.rows(), out.adapted.cols());
  for (auto _ : state) benchmark::DoNotOptimize(attention_backward(grad, out, params).w_out.data());
}
BENCHMARK(BM_AttentionBackward)->Arg(64)->Arg(256);

void BM_RetrieveTopK(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<Case> cases;
  for (std::size_t i = 0; i < n; ++i) cases.emplace_back("c" + std::to_string(i), sentence(rng, 12), label_at(i % kNumLabels));
  EncoderSpec spec;
  spec.dim = 64;
  const auto encoder = Encoder::hashed(spec);
  CaseDatabase db(cases);
  db.build_index(RepresentationKind::Text, encoder);
  const auto query = encoder.sentence_embedding({"q", sentence(rng, 12)});
  for (auto _ : state) benchmark::DoNotOptimize(retrieve_top_k(db, RepresentationKind::Text, query, 5));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_RetrieveTopK)->Arg(1000)->Arg(10000);

void BM_HashedEncoding(benchmark::State& state) {
  Rng rng(4);
  EncoderSpec spec;
  spec.dim = static_cast<int>(state.range(0));
  const auto encoder = Encoder::hashed(spec);
  const TextUnit unit{"k", sentence(rng, 40)};
  for (auto _ : state) benchmark::DoNotOptimize(encoder.encode_tokens(unit).states.data());
}
BENCHMARK(BM_HashedEncoding)->Arg(64)->Arg(256);

void BM_TrainingStep(benchmark::State& state) {
  const auto example = random_prepared_example(64, 48, 5);
  TrainConfig config;
  auto params = ModelParams::random(config.dim, config.heads, 6);
  OptimizerState opt;
  for (auto _ : state) {
    const auto fwd = forward_prepared(params, config, example);
    const auto grads = backward_example(params, config, fwd, *example.gold);
    optimizer_step(params, grads, opt, config);
  }
}
BENCHMARK(BM_TrainingStep);

}  // namespace

BENCHMARK_MAIN();
