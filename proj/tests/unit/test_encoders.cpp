#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "cbr/encoders.hpp"
#include "cbr/errors.hpp"
#include "cbr/rng.hpp"
#include "fixtures.hpp"

using namespace cbr;
using cbr::testing::TempDir;

namespace {

Encoder make_hashed(int dim = 32, double position_scale = 0.1) {
  EncoderSpec spec;
  spec.dim = dim;
  spec.position_scale = position_scale;
  return Encoder::hashed(spec);
}

std::string random_text(Rng& rng, std::size_t words) {
  static const char* kLetters = "abcdefghijklmnopqrstuvwxyz";
  std::string out;
  for (std::size_t w = 0; w < words; ++w) {
    if (!out.empty()) out += (rng.uniform01() < 0.2) ? ", " : " ";
    const std::size_t len = 1 + rng.uniform_index(8);
    for (std::size_t i = 0; i < len; ++i) out.push_back(kLetters[rng.uniform_index(26)]);
  }
  return out;
}

}  // namespace

TEST(Tokenize, LowercasesSplitsAndKeepsSep) {
  EXPECT_EQ(tokenize("Hello, World!  a<SEP>b"),
            (std::vector<std::string>{"hello", "world", "a", "<SEP>", "b"}));
  EXPECT_TRUE(tokenize(" ,.;").empty());
}

TEST(HashedEncoder, Deterministic) {
  const auto enc = make_hashed();
  const auto a = enc.encode_tokens({"k", "The cat sat on the mat."});
  const auto b = make_hashed().encode_tokens({"k", "The cat sat on the mat."});
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.length(), 6);
  EXPECT_EQ(a.active_count(), 6u);
}

TEST(HashedEncoder, SepRowIsReservedVector) {
  const auto enc = make_hashed();
  const auto seq = enc.encode_tokens({"k", "a <SEP> b"});
  ASSERT_EQ(seq.length(), 3);
  EXPECT_EQ(Eigen::RowVectorXd(seq.states.row(1)), enc.sep_vector());
  EXPECT_NEAR(enc.sep_vector().norm(), 1.0, 1e-12);
}

TEST(HashedEncoder, TokenVectorsHaveUnitNorm) {
  const auto enc = make_hashed(64);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    for (const auto& tok : tokenize(random_text(rng, 6))) {
      EXPECT_NEAR(enc.token_vector(tok).norm(), 1.0, 1e-9) << tok;
    }
  }
}

TEST(HashedEncoder, RowsAreTokenPlusPosition) {
  const auto enc = make_hashed(16);
  const auto seq = enc.encode_tokens({"k", "alpha beta"});
  const Eigen::RowVectorXd expected = enc.token_vector("beta") + enc.position_offset(1);
  EXPECT_LT((seq.states.row(1) - expected).norm(), 1e-15);
}

TEST(HashedEncoder, EmptyTokenStreamFails) {
  EXPECT_THROW(make_hashed().encode_tokens({"k", "  ...  "}), EncodeError);
}

TEST(SentenceEmbedding, UnitNorm) {
  const auto enc = make_hashed(32);
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const auto v = enc.sentence_embedding({"k", random_text(rng, 1 + rng.uniform_index(10))});
    EXPECT_TRUE(v.normalized);
    EXPECT_NEAR(v.values.norm(), 1.0, 1e-9);
  }
}

TEST(SentenceEmbedding, SingleTokenIsItsStateNormalized) {
  const auto enc = make_hashed(16);
  const auto seq = enc.encode_tokens({"k", "word"});
  const auto v = enc.sentence_embedding({"k", "word"});
  const Eigen::VectorXd expected = seq.states.row(0).transpose() / seq.states.row(0).norm();
  EXPECT_LT((v.values - expected).norm(), 1e-12);
}

TEST(SentenceEmbedding, PermutationInvariantUnderMeanPooling) {
  const auto plain = make_hashed(16, 0.0);
  const auto a = plain.sentence_embedding({"k", "red blue"});
  const auto b = plain.sentence_embedding({"k", "blue red"});
  EXPECT_LT((a.values - b.values).norm(), 1e-12);
  const auto positioned = make_hashed(16, 0.5);
  const auto c = positioned.sentence_embedding({"k", "red blue"});
  const auto d = positioned.sentence_embedding({"k", "blue red"});
  EXPECT_LT((c.values - d.values).norm(), 1e-12);
  EXPECT_GT((a.values - c.values).norm(), 1e-6);
}

TEST(EmbeddingFile, RoundTrip) {
  TempDir dir;
  EmbeddingStore store;
  store.dim = 4;
  for (int i = 0; i < 3; ++i) {
    StoredEmbedding e;
    e.tokens = Eigen::MatrixXf::Random(2 + i, 4);
    if (i != 1) e.sentence = Eigen::VectorXf::Random(4);
    const std::string id = "case" + std::to_string(i) + "#text";
    store.records.emplace(id, e);
    store.order.push_back(id);
  }
  write_embedding_file(dir / "e.bin", store);
  const auto loaded = load_embedding_file(dir / "e.bin", 4u);
  EXPECT_EQ(loaded.records.size(), 3u);
  EXPECT_EQ(loaded.order, store.order);
  for (const auto& id : store.order) {
    EXPECT_EQ(loaded.records.at(id).tokens, store.records.at(id).tokens);
    EXPECT_EQ(loaded.records.at(id).sentence.has_value(), store.records.at(id).sentence.has_value());
  }
  EXPECT_THROW(load_embedding_file(dir / "e.bin", 8u), FormatError);
}

TEST(EmbeddingFile, EmptyStoreIsValid) {
  TempDir dir;
  EmbeddingStore store;
  store.dim = 8;
  write_embedding_file(dir / "e.bin", store);
  EXPECT_TRUE(load_embedding_file(dir / "e.bin").records.empty());
}

namespace {

std::string header(const char* magic, std::uint32_t version, std::uint32_t dim, std::uint64_t count) {
  std::string out(magic, 4);
  auto put = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put(version, 4);
  put(dim, 4);
  put(count, 8);
  return out;
}

std::string record(const std::string& id, std::uint32_t tokens, std::uint32_t dim) {
  std::string out;
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put32(static_cast<std::uint32_t>(id.size()));
  out += id;
  put32(tokens);
  out.append(static_cast<std::size_t>(tokens) * dim * 4, '\0');
  out.push_back('\0');
  return out;
}

}  // namespace

TEST(EmbeddingFile, StructuralErrors) {
  TempDir dir;
  auto check = [&](const std::string& bytes) {
    cbr::testing::write_text(dir / "bad.bin", bytes);
    EXPECT_THROW(load_embedding_file(dir / "bad.bin"), FormatError);
  };
  check(header("CBRX", 1, 2, 0));
  check(header("CBRE", 2, 2, 0));
  check(header("CBRE", 1, 2, 1));
  check(header("CBRE", 1, 2, 1) + record("a", 1, 2).substr(0, 9));
  check(header("CBRE", 1, 2, 2) + record("a", 1, 2) + record("a", 1, 2));
  check(header("CBRE", 1, 2, 1) + record("a", 1, 2) + "x");
}

TEST(FileBackedEncoder, ReturnsStoredMatrixAndSentence) {
  auto store = std::make_shared<EmbeddingStore>();
  store->dim = 3;
  StoredEmbedding e;
  e.tokens = Eigen::MatrixXf::Random(4, 3);
  e.sentence = Eigen::VectorXf::Constant(3, 2.0f);
  store->records.emplace("x#text", e);
  store->order.push_back("x#text");
  const auto enc = Encoder::file_backed(store);
  const auto seq = enc.encode_tokens({"x#text", "ignored"});
  EXPECT_EQ(seq.states, e.tokens.cast<double>());
  const auto s = enc.sentence_embedding({"x#text", ""});
  EXPECT_NEAR(s.values(0), 1.0 / std::sqrt(3.0), 1e-7);
  EXPECT_THROW(enc.encode_tokens({"missing#text", ""}), MissingEmbeddingError);

  const TextUnit query{"x#text", ""};
  const std::vector<TextUnit> sims{{"x#text", ""}};
  const auto composed = enc.encode_composed(query, sims, false);
  ASSERT_EQ(composed.length(), 9);
  EXPECT_EQ(Eigen::RowVectorXd(composed.states.row(4)), enc.sep_vector());
}
