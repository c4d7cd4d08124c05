#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cbr/corpus.hpp"
#include "cbr/encoders.hpp"

namespace cbr {

struct RetrievalHit {
  std::string case_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based
  std::size_t row = 0;   // row in the database
};

struct ComposedInput {
  std::string query_text;
  std::string similars_text;
  std::vector<RetrievalHit> hits;
};

/// dot(a,b) / (|a||b|), clamped to [-1, 1].
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

/// Exhaustive scan over the index for kind. Returns min(k, |db|) hits
/// (fewer when exclude_id removes a row), ordered by descending score with
/// ascending case id on ties.
std::vector<RetrievalHit> retrieve_top_k(const CaseDatabase& db,
                                         RepresentationKind kind,
                                         const EmbeddingVector& query,
                                         std::size_t k,
                                         std::optional<std::string_view> exclude_id = std::nullopt);

/// "C <SEP> S1 S2 ... Sk", or "C <SEP> S1 <SEP> S2 ..." with
/// sep_between_cases. No similars yields the bare query.
ComposedInput compose_case_string(const std::string& query_repr,
                                  const std::vector<std::string>& similar_reprs,
                                  std::string_view sep = kSepToken,
                                  bool sep_between_cases = false);

}  // namespace cbr
