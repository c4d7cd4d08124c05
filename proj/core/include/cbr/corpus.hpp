#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cbr/labels.hpp"

namespace cbr {

struct EmbeddingVector;
class Encoder;

/// One argument. enrichments[Text] always mirrors text.
struct Case {
  std::string id;
  std::string text;
  std::optional<FallacyLabel> label;
  std::map<RepresentationKind, std::string> enrichments;

  Case() = default;
  Case(std::string id_, std::string text_, std::optional<FallacyLabel> label_);

  bool has_representation(RepresentationKind kind) const;

  /// Sets an enrichment. Setting Text also replaces the case text.
  void set_enrichment(RepresentationKind kind, std::string value);

  friend bool operator==(const Case&, const Case&) = default;
};

/// R(case, r): the case text, followed by one space and the enrichment for
/// kind. Text returns the bare text. Throws MissingRepresentationError when
/// the enrichment is absent.
std::string represent(const Case& c, RepresentationKind kind);

/// Synthetic cases produced by balance_classes carry an "-augN" id suffix.
bool is_synthetic(const Case& c);

using LabelCounts = std::array<std::size_t, kNumLabels>;

LabelCounts count_labels(const std::vector<Case>& cases);

struct LabeledCorpus {
  std::vector<Case> train;
  std::vector<Case> test;

  LabelCounts train_counts() const { return count_labels(train); }
  LabelCounts test_counts() const { return count_labels(test); }
};

enum class DatasetFormat { Csv, Jsonl };

DatasetFormat parse_format(std::string_view raw);

/// Format inferred from the file extension (.csv / .jsonl / .json).
DatasetFormat format_from_path(const std::filesystem::path& path);

/// Reads one split. Rows without an id get "<split>-<row_index>" (0-based
/// data row index). Labels are optional in JSONL only when
/// allow_unlabeled is set.
std::vector<Case> load_cases(const std::filesystem::path& path,
                             DatasetFormat format, std::string_view split,
                             bool allow_unlabeled = false);

/// Loads train and test splits. When path is a directory it must contain
/// train.<ext> and test.<ext>; when it is a file, it becomes the train split
/// and test is empty.
LabeledCorpus load_dataset(const std::filesystem::path& path,
                           DatasetFormat format);

/// One JSON object per line with keys in sorted order; enrichments other
/// than Text are written under "enrichments".
std::string to_jsonl(const std::vector<Case>& cases);
void save_jsonl(const std::vector<Case>& cases, const std::filesystem::path& path);

/// token -> list of substitutes. Lookup is lowercase.
using SynonymLexicon = std::unordered_map<std::string, std::vector<std::string>>;

SynonymLexicon load_lexicon(const std::filesystem::path& path);

/// Brings each train class up to max(target, original count) with seeded
/// synonym substitution. Test split is untouched.
LabeledCorpus balance_classes(const LabeledCorpus& corpus, std::size_t target,
                              const SynonymLexicon& lexicon, std::uint64_t seed);

/// Retrievable store of labeled cases with per-kind embedding indices.
class CaseDatabase {
 public:
  CaseDatabase() = default;

  /// Throws ConfigError if any case is unlabeled or ids repeat.
  explicit CaseDatabase(std::vector<Case> cases, double ratio = 1.0,
                        std::uint64_t seed = 0);

  const std::vector<Case>& cases() const { return cases_; }
  std::size_t size() const { return cases_.size(); }
  double ratio() const { return ratio_; }
  std::uint64_t seed() const { return seed_; }

  /// Embeds represent(case, kind) for every case with the retrieval encoder.
  /// Cases lacking the enrichment fall back to their text with a warning.
  void build_index(RepresentationKind kind, const Encoder& encoder);

  bool has_index(RepresentationKind kind) const;
  const std::vector<EmbeddingVector>& index(RepresentationKind kind) const;

  /// Hash over case contents, ratio and seed. Independent of indices.
  std::string fingerprint() const;

  /// Hash over the stored index vectors for kind.
  std::string index_hash(RepresentationKind kind) const;

  const Case* find(std::string_view id) const;

 private:
  friend CaseDatabase subsample_database(const CaseDatabase&, double, std::uint64_t);
  friend CaseDatabase without_synthetic(const CaseDatabase&);

  std::vector<Case> cases_;
  std::map<RepresentationKind, std::vector<EmbeddingVector>> index_;
  double ratio_ = 1.0;
  std::uint64_t seed_ = 0;
};

/// Per-class stratified sample keeping round(ratio * n_c) cases (at least
/// one). Selection for a class is a prefix of one seeded permutation, so the
/// kept set only grows with ratio. Index rows are filtered alongside.
CaseDatabase subsample_database(const CaseDatabase& db, double ratio,
                                std::uint64_t seed);

/// Drops augmentation cases (and their index rows).
CaseDatabase without_synthetic(const CaseDatabase& db);

}  // namespace cbr
