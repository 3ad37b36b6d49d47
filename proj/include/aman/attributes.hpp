#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace aman {

/// The five aesthetic attributes the model scores and captions.
enum class Attribute : std::size_t {
  kColorAndLighting = 0,
  kComposition,
  kDepthAndFocus,
  kImpressionAndSubject,
  kUseOfCamera,
};

inline constexpr std::size_t kNumAttributes = 5;
inline constexpr std::array<Attribute, kNumAttributes> kAllAttributes = {
    Attribute::kColorAndLighting, Attribute::kComposition, Attribute::kDepthAndFocus,
    Attribute::kImpressionAndSubject, Attribute::kUseOfCamera};

/// The seven attributes of a fully-annotated source corpus, before merging.
enum class SourceAttribute : std::size_t {
  kColorLighting = 0,
  kComposition,
  kDepthOfField,
  kFocus,
  kGeneralImpression,
  kSubjectOfPhoto,
  kUseOfCamera,
};

inline constexpr std::size_t kNumSourceAttributes = 7;
inline constexpr std::array<SourceAttribute, kNumSourceAttributes> kAllSourceAttributes = {
    SourceAttribute::kColorLighting,     SourceAttribute::kComposition,
    SourceAttribute::kDepthOfField,      SourceAttribute::kFocus,
    SourceAttribute::kGeneralImpression, SourceAttribute::kSubjectOfPhoto,
    SourceAttribute::kUseOfCamera};

// DepthOfField+Focus -> DepthAndFocus, GeneralImpression+SubjectOfPhoto ->
// ImpressionAndSubject, the rest map to their namesakes.
Attribute merge(SourceAttribute a);

inline std::size_t index(Attribute a) { return static_cast<std::size_t>(a); }
inline std::size_t index(SourceAttribute a) { return static_cast<std::size_t>(a); }

std::string_view name(Attribute a);
std::string_view name(SourceAttribute a);
// Human-readable label, e.g. "Color and Lighting".
std::string_view label(Attribute a);

std::optional<Attribute> parse_attribute(std::string_view s);
std::optional<SourceAttribute> parse_source_attribute(std::string_view s);

template <class T>
using PerAttribute = std::array<T, kNumAttributes>;

}  // namespace aman
