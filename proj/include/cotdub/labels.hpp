#pragma once

// Closed label vocabularies for the scene / speaker-attribute conclusion.

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cotdub {

enum class SceneType { dialogue, monologue, narration };
enum class Gender { male, female, unknown };
enum class Age { child, adult, elder, unknown };
enum class Emotion { neutral, happy, sad, angry, fearful, surprised, unknown };

inline constexpr std::array<std::string_view, 3> kSceneNames{"dialogue", "monologue", "narration"};
inline constexpr std::array<std::string_view, 3> kGenderNames{"male", "female", "unknown"};
inline constexpr std::array<std::string_view, 4> kAgeNames{"child", "adult", "elder", "unknown"};
inline constexpr std::array<std::string_view, 7> kEmotionNames{"neutral", "happy",   "sad",    "angry",
                                                               "fearful", "surprised", "unknown"};

/// The four conclusion axes, in serialization order.
enum class LabelAxis { scene, gender, age, emotion };

inline constexpr std::array<LabelAxis, 4> kAllAxes{LabelAxis::scene, LabelAxis::gender, LabelAxis::age,
                                                   LabelAxis::emotion};

constexpr std::size_t axis_size(LabelAxis axis) {
  switch (axis) {
    case LabelAxis::scene: return kSceneNames.size();
    case LabelAxis::gender: return kGenderNames.size();
    case LabelAxis::age: return kAgeNames.size();
    case LabelAxis::emotion: return kEmotionNames.size();
  }
  return 0;
}

constexpr std::string_view axis_key(LabelAxis axis) {
  switch (axis) {
    case LabelAxis::scene: return "scene";
    case LabelAxis::gender: return "gender";
    case LabelAxis::age: return "age";
    case LabelAxis::emotion: return "emotion";
  }
  return "";
}

inline std::string_view label_name(LabelAxis axis, std::size_t index) {
  switch (axis) {
    case LabelAxis::scene: return kSceneNames.at(index);
    case LabelAxis::gender: return kGenderNames.at(index);
    case LabelAxis::age: return kAgeNames.at(index);
    case LabelAxis::emotion: return kEmotionNames.at(index);
  }
  throw std::out_of_range("label_name: bad axis");
}

inline std::optional<std::size_t> find_label(LabelAxis axis, std::string_view name) {
  for (std::size_t i = 0; i < axis_size(axis); ++i) {
    if (label_name(axis, i) == name) return i;
  }
  return std::nullopt;
}

inline std::string_view to_string(SceneType v) { return kSceneNames[static_cast<std::size_t>(v)]; }
inline std::string_view to_string(Gender v) { return kGenderNames[static_cast<std::size_t>(v)]; }
inline std::string_view to_string(Age v) { return kAgeNames[static_cast<std::size_t>(v)]; }
inline std::string_view to_string(Emotion v) { return kEmotionNames[static_cast<std::size_t>(v)]; }

struct SpeakerAttributes {
  Gender gender = Gender::unknown;
  Age age = Age::unknown;
  Emotion emotion = Emotion::unknown;

  friend bool operator==(const SpeakerAttributes&, const SpeakerAttributes&) = default;
};

/// Typed answer carried by the CONCLUSION section of a trace.
struct Conclusion {
  SceneType scene = SceneType::dialogue;
  SpeakerAttributes attributes;

  /// Label index along one axis.
  std::size_t index(LabelAxis axis) const {
    switch (axis) {
      case LabelAxis::scene: return static_cast<std::size_t>(scene);
      case LabelAxis::gender: return static_cast<std::size_t>(attributes.gender);
      case LabelAxis::age: return static_cast<std::size_t>(attributes.age);
      case LabelAxis::emotion: return static_cast<std::size_t>(attributes.emotion);
    }
    return 0;
  }

  void set(LabelAxis axis, std::size_t value) {
    if (value >= axis_size(axis)) throw std::out_of_range("Conclusion::set: label index outside vocabulary");
    switch (axis) {
      case LabelAxis::scene: scene = static_cast<SceneType>(value); break;
      case LabelAxis::gender: attributes.gender = static_cast<Gender>(value); break;
      case LabelAxis::age: attributes.age = static_cast<Age>(value); break;
      case LabelAxis::emotion: attributes.emotion = static_cast<Emotion>(value); break;
    }
  }

  friend bool operator==(const Conclusion&, const Conclusion&) = default;
};

/// Parses a label by axis key ("scene", "gender", ...); throws std::invalid_argument when
/// the label is outside the vocabulary.
inline std::size_t parse_label(LabelAxis axis, std::string_view name) {
  auto idx = find_label(axis, name);
  if (!idx) {
    throw std::invalid_argument("label '" + std::string(name) + "' is not in the " + std::string(axis_key(axis)) +
                                " vocabulary");
  }
  return *idx;
}

}  // namespace cotdub
