#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace cbr {

/// The thirteen fallacy classes, in canonical order. The canonical order
/// breaks argmax ties and fixes row/column order of confusion matrices.
enum class FallacyLabel : std::uint8_t {
  AdHominem,
  AdPopulum,
  AppealToEmotion,
  CircularReasoning,
  Equivocation,
  FallacyOfCredibility,
  FallacyOfExtension,
  FallacyOfLogic,
  FallacyOfRelevance,
  FalseCausality,
  FalseDilemma,
  FaultyGeneralization,
  Intentional,
};

inline constexpr std::size_t kNumLabels = 13;

inline constexpr std::array<FallacyLabel, kNumLabels> kAllLabels = {
    FallacyLabel::AdHominem,           FallacyLabel::AdPopulum,
    FallacyLabel::AppealToEmotion,     FallacyLabel::CircularReasoning,
    FallacyLabel::Equivocation,        FallacyLabel::FallacyOfCredibility,
    FallacyLabel::FallacyOfExtension,  FallacyLabel::FallacyOfLogic,
    FallacyLabel::FallacyOfRelevance,  FallacyLabel::FalseCausality,
    FallacyLabel::FalseDilemma,        FallacyLabel::FaultyGeneralization,
    FallacyLabel::Intentional,
};

constexpr std::size_t label_index(FallacyLabel label) {
  return static_cast<std::size_t>(label);
}

constexpr FallacyLabel label_at(std::size_t index) { return kAllLabels.at(index); }

/// Snake-case identifier, e.g. "faulty_generalization".
std::string_view label_name(FallacyLabel label);

/// Space-separated display form, e.g. "faulty generalization".
std::string label_display_name(FallacyLabel label);

/// Lowercases, trims, and folds spaces/hyphens/underscores before matching
/// against the canonical names. Throws LabelParseError on no match.
FallacyLabel parse_fallacy_label(std::string_view raw);

/// Non-throwing variant of parse_fallacy_label.
std::optional<FallacyLabel> try_parse_fallacy_label(std::string_view raw);

/// Case representations. Text is always present; the others are optional
/// enrichments appended to the text.
enum class RepresentationKind : std::uint8_t {
  Text,
  Counterarguments,
  Goals,
  Explanations,
  Structure,
};

inline constexpr std::array<RepresentationKind, 5> kAllKinds = {
    RepresentationKind::Text, RepresentationKind::Counterarguments,
    RepresentationKind::Goals, RepresentationKind::Explanations,
    RepresentationKind::Structure};

std::string_view kind_name(RepresentationKind kind);
RepresentationKind parse_kind(std::string_view raw);

}  // namespace cbr
