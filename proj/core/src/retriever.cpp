#include "cbr/retriever.hpp"

#include <algorithm>
#include <cmath>

#include "cbr/errors.hpp"

namespace cbr {

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.values.size() != b.values.size()) {
    throw DimError("cosine of vectors with dims " + std::to_string(a.values.size()) + " and " +
                   std::to_string(b.values.size()));
  }
  const double na = a.values.norm();
  const double nb = b.values.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateVectorError("cosine of a zero vector");
  return std::clamp(a.values.dot(b.values) / (na * nb), -1.0, 1.0);
}

std::vector<RetrievalHit> retrieve_top_k(const CaseDatabase& db, RepresentationKind kind,
                                         const EmbeddingVector& query, std::size_t k,
                                         std::optional<std::string_view> exclude_id) {
  const auto& index = db.index(kind);
  if (k == 0) return {};
  std::vector<RetrievalHit> scored;
  scored.reserve(index.size());
  for (std::size_t row = 0; row < index.size(); ++row) {
    const auto& id = db.cases()[row].id;
    if (exclude_id && id == *exclude_id) continue;
    scored.push_back(RetrievalHit{id, cosine_similarity(query, index[row]), 0, row});
  }
  auto better = [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.case_id < b.case_id;
  };
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
  scored.resize(n);
  for (std::size_t i = 0; i < n; ++i) scored[i].rank = i + 1;
  return scored;
}

ComposedInput compose_case_string(const std::string& query_repr,
                                  const std::vector<std::string>& similar_reprs,
                                  std::string_view sep, bool sep_between_cases) {
  ComposedInput out;
  out.query_text = query_repr;
  out.similars_text = query_repr;
  for (std::size_t i = 0; i < similar_reprs.size(); ++i) {
    if (i == 0 || sep_between_cases) {
      out.similars_text += ' ';
      out.similars_text += sep;
    }
    out.similars_text += ' ';
    out.similars_text += similar_reprs[i];
  }
  return out;
}

}  // namespace cbr
