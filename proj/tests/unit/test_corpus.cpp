#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cbr/corpus.hpp"
#include "cbr/errors.hpp"
#include "cbr/rng.hpp"
#include "fixtures.hpp"

using namespace cbr;
using cbr::testing::TempDir;
using cbr::testing::write_text;

TEST(Case, TextEnrichmentMirrorsText) {
  Case c("a", "Some argument.", FallacyLabel::Equivocation);
  EXPECT_EQ(c.enrichments.at(RepresentationKind::Text), "Some argument.");
  EXPECT_EQ(represent(c, RepresentationKind::Text), "Some argument.");
  EXPECT_THROW(represent(c, RepresentationKind::Goals), MissingRepresentationError);
  c.set_enrichment(RepresentationKind::Goals, "To persuade.");
  const std::string r = represent(c, RepresentationKind::Goals);
  EXPECT_EQ(r.rfind(c.text, 0), 0u);
  EXPECT_EQ(r, "Some argument. To persuade.");
}

TEST(LoadDataset, CsvQuotedRowAndLabelNormalization) {
  TempDir dir;
  write_text(dir / "d.csv", "text,label\n\"ALL teenagers are irresponsible.\",faulty generalization\n");
  const auto cases = load_cases(dir / "d.csv", DatasetFormat::Csv, "train");
  ASSERT_EQ(cases.size(), 1u);
  EXPECT_EQ(cases[0].text, "ALL teenagers are irresponsible.");
  EXPECT_EQ(cases[0].label, FallacyLabel::FaultyGeneralization);
  EXPECT_EQ(cases[0].id, "train-0");
}

TEST(LoadDataset, CsvEmbeddedQuotesCommasAndNewlines) {
  TempDir dir;
  write_text(dir / "d.csv",
             "\xEF\xBB\xBFlabel,text\r\nad hominem,\"He said \"\"no\"\", then, left\nquickly\"\r\n");
  const auto cases = load_cases(dir / "d.csv", DatasetFormat::Csv, "test");
  ASSERT_EQ(cases.size(), 1u);
  EXPECT_EQ(cases[0].text, "He said \"no\", then, left\nquickly");
  EXPECT_EQ(cases[0].label, FallacyLabel::AdHominem);
}

TEST(LoadDataset, JsonlMinimalRow) {
  TempDir dir;
  write_text(dir / "d.jsonl", "{\"text\":\"x\",\"label\":\"equivocation\"}\n");
  const auto cases = load_cases(dir / "d.jsonl", DatasetFormat::Jsonl, "train");
  ASSERT_EQ(cases.size(), 1u);
  EXPECT_EQ(cases[0].enrichments.at(RepresentationKind::Text), "x");
  EXPECT_EQ(cases[0].label, FallacyLabel::Equivocation);
}

TEST(LoadDataset, UnknownLabelNamesRow) {
  TempDir dir;
  write_text(dir / "d.jsonl",
             "{\"text\":\"x\",\"label\":\"equivocation\"}\n{\"text\":\"y\",\"label\":\"sarcasm\"}\n");
  try {
    load_cases(dir / "d.jsonl", DatasetFormat::Jsonl, "train");
    FAIL() << "expected LabelParseError";
  } catch (const LabelParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("sarcasm"), std::string::npos);
  }
}

TEST(LoadDataset, EmptyTextIsRowError) {
  TempDir dir;
  write_text(dir / "d.csv", "text,label\n\"  \",equivocation\n");
  EXPECT_THROW(load_cases(dir / "d.csv", DatasetFormat::Csv, "train"), RowError);
}

TEST(LoadDataset, DirectoryWithSplitsAndDisjointIds) {
  TempDir dir;
  write_text(dir / "train.jsonl", "{\"id\":\"a\",\"text\":\"x\",\"label\":\"equivocation\"}\n");
  write_text(dir / "test.jsonl", "{\"id\":\"b\",\"text\":\"y\",\"label\":\"intentional\"}\n");
  const auto corpus = load_dataset(dir.path(), DatasetFormat::Jsonl);
  EXPECT_EQ(corpus.train.size(), 1u);
  EXPECT_EQ(corpus.test.size(), 1u);
  write_text(dir / "test.jsonl", "{\"id\":\"a\",\"text\":\"y\",\"label\":\"intentional\"}\n");
  EXPECT_THROW(load_dataset(dir.path(), DatasetFormat::Jsonl), RowError);
}

TEST(LoadDataset, JsonlRoundTripIsByteStable) {
  TempDir dir;
  const auto cases = cbr::testing::toy_corpus(4, 3);
  save_jsonl(cases, dir / "a.jsonl");
  const auto loaded = load_cases(dir / "a.jsonl", DatasetFormat::Jsonl, "train");
  EXPECT_EQ(loaded, cases);
  save_jsonl(loaded, dir / "b.jsonl");
  EXPECT_EQ(to_jsonl(loaded), to_jsonl(cases));
}

TEST(LoadDataset, EnrichmentsSurviveRoundTrip) {
  TempDir dir;
  Case c("a", "x", FallacyLabel::Intentional);
  c.set_enrichment(RepresentationKind::Structure, "x of y");
  save_jsonl({c}, dir / "a.jsonl");
  const auto loaded = load_cases(dir / "a.jsonl", DatasetFormat::Jsonl, "train");
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0], c);
}

namespace {

LabeledCorpus counts_corpus(const LabelCounts& counts) {
  LabeledCorpus corpus;
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    for (std::size_t i = 0; i < counts[l]; ++i) {
      corpus.train.emplace_back("c" + std::to_string(l) + "-" + std::to_string(i),
                                "People say the movie was good and the food was great " + std::to_string(i),
                                label_at(l));
    }
  }
  return corpus;
}

SynonymLexicon small_lexicon() {
  return {{"people", {"folks", "persons"}},
          {"movie", {"film", "picture"}},
          {"good", {"fine", "decent"}},
          {"great", {"excellent", "superb"}},
          {"food", {"meal", "cuisine"}}};
}

}  // namespace

TEST(BalanceClasses, AdPopulumReachesTarget) {
  LabelCounts counts{};
  counts.fill(5);
  counts[label_index(FallacyLabel::AdPopulum)] = 144;
  counts[label_index(FallacyLabel::FaultyGeneralization)] = 281;
  const auto corpus = counts_corpus(counts);
  const auto balanced = balance_classes(corpus, 281, small_lexicon(), 11);
  const auto after = balanced.train_counts();
  for (std::size_t l = 0; l < kNumLabels; ++l) EXPECT_EQ(after[l], std::max<std::size_t>(281, counts[l]));

  std::size_t synthetic_ad_populum = 0;
  for (const auto& c : balanced.train) {
    if (c.label == FallacyLabel::AdPopulum && is_synthetic(c)) ++synthetic_ad_populum;
  }
  EXPECT_EQ(synthetic_ad_populum, 137u);
}

TEST(BalanceClasses, SyntheticCasesKeepSourceLabelAndSubstitute) {
  LabelCounts counts{};
  counts.fill(3);
  const auto corpus = counts_corpus(counts);
  const auto balanced = balance_classes(corpus, 10, small_lexicon(), 5);
  std::size_t changed = 0;
  for (const auto& c : balanced.train) {
    if (!is_synthetic(c)) continue;
    const std::string source_id = c.id.substr(0, c.id.rfind("-aug"));
    const auto it = std::find_if(corpus.train.begin(), corpus.train.end(),
                                 [&](const Case& s) { return s.id == source_id; });
    ASSERT_NE(it, corpus.train.end()) << c.id;
    EXPECT_EQ(c.label, it->label);
    if (c.text != it->text) ++changed;
  }
  EXPECT_GT(changed, 0u);
}

TEST(BalanceClasses, AlreadyAtTargetIsUnchanged) {
  LabelCounts counts{};
  counts.fill(4);
  const auto corpus = counts_corpus(counts);
  const auto balanced = balance_classes(corpus, 4, small_lexicon(), 1);
  EXPECT_EQ(balanced.train, corpus.train);
}

TEST(BalanceClasses, DeterministicAndTestUntouched) {
  LabelCounts counts{};
  counts.fill(3);
  auto corpus = counts_corpus(counts);
  corpus.test.emplace_back("t", "held out", FallacyLabel::Intentional);
  const auto a = balance_classes(corpus, 9, small_lexicon(), 21);
  const auto b = balance_classes(corpus, 9, small_lexicon(), 21);
  EXPECT_EQ(to_jsonl(a.train), to_jsonl(b.train));
  EXPECT_EQ(a.test, corpus.test);
}

TEST(BalanceClasses, EmptyClassCannotBeAmplified) {
  LabelCounts counts{};
  counts.fill(2);
  counts[3] = 0;
  EXPECT_THROW(balance_classes(counts_corpus(counts), 5, small_lexicon(), 1), AugmentationError);
}

TEST(Subsample, RatioOneIsIdentity) {
  CaseDatabase db(cbr::testing::toy_corpus(7, 2));
  const auto sub = subsample_database(db, 1.0, 9);
  EXPECT_EQ(sub.cases(), db.cases());
}

TEST(Subsample, ExactArithmeticOnBalancedDatabase) {
  LabelCounts counts{};
  counts.fill(100);
  CaseDatabase db(counts_corpus(counts).train);
  const auto sub = subsample_database(db, 0.1, 4);
  EXPECT_EQ(sub.size(), 130u);
  for (auto n : count_labels(sub.cases())) EXPECT_EQ(n, 10u);
}

TEST(Subsample, Table5CountsRecount) {
  const auto counts = cbr::testing::logic_train_counts();
  CaseDatabase db(counts_corpus(counts).train);
  const auto sub = subsample_database(db, 0.4, 17);
  LabelCounts recount{};
  for (const auto& c : sub.cases()) ++recount[label_index(*c.label)];
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    const auto expected = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.4 * counts[l])));
    EXPECT_EQ(recount[l], expected) << label_name(label_at(l));
  }
}

TEST(Subsample, MinimumOnePerClassAndRangeChecks) {
  CaseDatabase db(cbr::testing::toy_corpus(3, 1));
  const auto sub = subsample_database(db, 0.01, 1);
  EXPECT_EQ(sub.size(), 3u);
  EXPECT_THROW(subsample_database(db, 0.0, 1), ConfigError);
  EXPECT_THROW(subsample_database(db, 1.5, 1), ConfigError);
}

TEST(Subsample, MonotoneInRatio) {
  CaseDatabase db(cbr::testing::toy_corpus(40, 8));
  const double ratios[] = {0.1, 0.4, 0.7, 1.0};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::set<std::string> previous;
    for (double r : ratios) {
      std::set<std::string> ids;
      const auto sub = subsample_database(db, r, seed);
      for (const auto& c : sub.cases()) ids.insert(c.id);
      EXPECT_TRUE(std::includes(ids.begin(), ids.end(), previous.begin(), previous.end()));
      previous = ids;
    }
  }
}

TEST(Subsample, IndexRowsFollowCases) {
  const auto enc = cbr::testing::hashed_encoders(16);
  CaseDatabase db(cbr::testing::toy_corpus(10, 4));
  db.build_index(RepresentationKind::Text, enc.retrieval);
  const auto sub = subsample_database(db, 0.4, 3);
  ASSERT_TRUE(sub.has_index(RepresentationKind::Text));
  const auto& index = sub.index(RepresentationKind::Text);
  ASSERT_EQ(index.size(), sub.size());
  for (std::size_t i = 0; i < sub.size(); ++i) {
    const auto& c = sub.cases()[i];
    const auto expected = enc.retrieval.sentence_embedding({c.id + "#text", c.text});
    EXPECT_EQ(index[i].values, expected.values);
  }
}

TEST(CaseDatabaseTest, RejectsUnlabeledAndDuplicates) {
  EXPECT_THROW(CaseDatabase({Case("a", "x", std::nullopt)}), ConfigError);
  EXPECT_THROW(CaseDatabase({Case("a", "x", FallacyLabel::AdHominem), Case("a", "y", FallacyLabel::AdHominem)}),
               ConfigError);
}

TEST(CaseDatabaseTest, MissingIndexAndSyntheticFilter) {
  CaseDatabase db({Case("a", "x", FallacyLabel::AdHominem), Case("a-aug1", "y", FallacyLabel::AdHominem)});
  EXPECT_THROW(db.index(RepresentationKind::Goals), IndexMissingError);
  const auto real = without_synthetic(db);
  ASSERT_EQ(real.size(), 1u);
  EXPECT_EQ(real.cases()[0].id, "a");
}
