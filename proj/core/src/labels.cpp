#include "cbr/labels.hpp"

#include <algorithm>
#include <cctype>

#include "cbr/errors.hpp"

namespace cbr {
namespace {

constexpr std::array<std::string_view, kNumLabels> kLabelNames = {
    "ad_hominem",           "ad_populum",         "appeal_to_emotion",
    "circular_reasoning",   "equivocation",       "fallacy_of_credibility",
    "fallacy_of_extension", "fallacy_of_logic",   "fallacy_of_relevance",
    "false_causality",      "false_dilemma",      "faulty_generalization",
    "intentional",
};

constexpr std::array<std::string_view, 5> kKindNames = {
    "text", "counterarguments", "goals", "explanations", "structure"};

// Lowercase; runs of space, '-' and '_' collapse to one '_'; leading and
// trailing separators, quotes and periods are dropped.
std::string fold(std::string_view raw) {
  std::string out;
  bool pending_sep = false;
  for (unsigned char c : raw) {
    if (std::isspace(c) || c == '-' || c == '_') {
      pending_sep = !out.empty();
      continue;
    }
    if (pending_sep) {
      out.push_back('_');
      pending_sep = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  auto strip = [](char c) { return c == '"' || c == '\'' || c == '.' || c == ','; };
  while (!out.empty() && strip(out.back())) out.pop_back();
  std::size_t start = 0;
  while (start < out.size() && strip(out[start])) ++start;
  return out.substr(start);
}

}  // namespace

std::string_view label_name(FallacyLabel label) { return kLabelNames.at(label_index(label)); }

std::string label_display_name(FallacyLabel label) {
  std::string s(label_name(label));
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

std::optional<FallacyLabel> try_parse_fallacy_label(std::string_view raw) {
  const std::string folded = fold(raw);
  for (std::size_t i = 0; i < kNumLabels; ++i) {
    if (folded == kLabelNames[i]) return kAllLabels[i];
  }
  return std::nullopt;
}

FallacyLabel parse_fallacy_label(std::string_view raw) {
  if (auto label = try_parse_fallacy_label(raw)) return *label;
  throw LabelParseError("unknown fallacy label '" + std::string(raw) + "'");
}

std::string_view kind_name(RepresentationKind kind) {
  return kKindNames.at(static_cast<std::size_t>(kind));
}

RepresentationKind parse_kind(std::string_view raw) {
  const std::string folded = fold(raw);
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (folded == kKindNames[i]) return kAllKinds[i];
  }
  // Singular and abbreviated spellings used in tables and configs.
  if (folded == "counterargument" || folded == "counterarg") return RepresentationKind::Counterarguments;
  if (folded == "goal") return RepresentationKind::Goals;
  if (folded == "explanation") return RepresentationKind::Explanations;
  throw ConfigError("unknown representation kind '" + std::string(raw) + "'");
}

}  // namespace cbr
