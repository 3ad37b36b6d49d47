#include "aman/attributes.hpp"

namespace aman {

namespace {
constexpr std::array<std::string_view, kNumAttributes> kNames = {
    "ColorAndLighting", "Composition", "DepthAndFocus", "ImpressionAndSubject", "UseOfCamera"};
constexpr std::array<std::string_view, kNumAttributes> kLabels = {
    "Color and Lighting", "Composition", "Depth and Focus", "Impression and Subject",
    "Use of Camera"};
constexpr std::array<std::string_view, kNumSourceAttributes> kSourceNames = {
    "ColorLighting",     "Composition",    "DepthOfField", "Focus",
    "GeneralImpression", "SubjectOfPhoto", "UseOfCamera"};
}  // namespace

Attribute merge(SourceAttribute a) {
  switch (a) {
    case SourceAttribute::kColorLighting: return Attribute::kColorAndLighting;
    case SourceAttribute::kComposition: return Attribute::kComposition;
    case SourceAttribute::kDepthOfField:
    case SourceAttribute::kFocus: return Attribute::kDepthAndFocus;
    case SourceAttribute::kGeneralImpression:
    case SourceAttribute::kSubjectOfPhoto: return Attribute::kImpressionAndSubject;
    case SourceAttribute::kUseOfCamera: return Attribute::kUseOfCamera;
  }
  return Attribute::kColorAndLighting;
}

std::string_view name(Attribute a) { return kNames[index(a)]; }
std::string_view name(SourceAttribute a) { return kSourceNames[index(a)]; }
std::string_view label(Attribute a) { return kLabels[index(a)]; }

std::optional<Attribute> parse_attribute(std::string_view s) {
  for (auto a : kAllAttributes) {
    if (s == kNames[index(a)] || s == kLabels[index(a)]) return a;
  }
  return std::nullopt;
}

std::optional<SourceAttribute> parse_source_attribute(std::string_view s) {
  for (auto a : kAllSourceAttributes) {
    if (s == kSourceNames[index(a)]) return a;
  }
  return std::nullopt;
}

}  // namespace aman
