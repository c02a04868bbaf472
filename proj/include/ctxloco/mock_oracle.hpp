#pragma once

#include <algorithm>
#include <cctype>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxloco/terrain.hpp"

namespace ctxloco {

namespace detail {

inline std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// Phrase match at word starts: every pattern word must be a prefix of the
// corresponding text word ("grass" matches "grassland").
inline bool phrase_at(std::span<const std::string> words, std::size_t pos,
                      std::span<const std::string_view> pattern) {
  if (pos + pattern.size() > words.size()) return false;
  for (std::size_t k = 0; k < pattern.size(); ++k) {
    if (!words[pos + k].starts_with(pattern[k])) return false;
  }
  return true;
}

struct LevelSet {
  Property property;
  PropertyLevel level;
};

struct NounRule {
  std::vector<std::string_view> pattern;
  std::vector<LevelSet> effects;
};

inline const std::vector<NounRule>& noun_rules() {
  using P = Property;
  using L = PropertyLevel;
  static const std::vector<NounRule> rules{
      {{"grass"}, {{P::Stiffness, L::Low}}},
      {{"ice"}, {{P::Friction, L::VeryLow}, {P::Restitution, L::Low}}},
      {{"icy"}, {{P::Friction, L::VeryLow}, {P::Restitution, L::Low}}},
      {{"snow"}, {{P::Friction, L::VeryLow}, {P::Restitution, L::Low}}},
      {{"sand"}, {{P::Stiffness, L::VeryLow}, {P::Damping, L::VeryHigh}}},
      {{"beach"}, {{P::Stiffness, L::VeryLow}, {P::Damping, L::VeryHigh}}},
      {{"concrete"}, {{P::Stiffness, L::VeryHigh}, {P::Friction, L::High}}},
      {{"asphalt"}, {{P::Stiffness, L::VeryHigh}, {P::Friction, L::High}}},
      {{"running", "track"},
       {{P::Friction, L::VeryHigh}, {P::Restitution, L::High}, {P::Stiffness, L::High}}},
      {{"rubber"}, {{P::Friction, L::VeryHigh}, {P::Restitution, L::High}, {P::Stiffness, L::High}}},
      {{"mountain", "road"}, {{P::Stiffness, L::VeryHigh}, {P::Friction, L::High}}},
      {{"rock"}, {{P::Stiffness, L::VeryHigh}, {P::Friction, L::High}}},
  };
  return rules;
}

inline constexpr std::string_view kWetWords[] = {"rain", "drizzle", "wet", "moist"};
inline constexpr std::string_view kDryWords[] = {"sun", "dry"};

inline bool any_word_prefix(std::span<const std::string> words,
                            std::span<const std::string_view> prefixes) {
  return std::any_of(words.begin(), words.end(), [&](const std::string& w) {
    return std::any_of(prefixes.begin(), prefixes.end(),
                       [&](std::string_view p) { return w.starts_with(p); });
  });
}

inline std::optional<Property> property_word(std::string_view w) {
  for (auto p : kAllProperties) {
    const auto name = property_name(p);
    if (w == name || (w.size() == name.size() + 1 && w.starts_with(name) && w.back() == 's')) {
      return p;
    }
  }
  return std::nullopt;
}

// Modifier immediately preceding a property word.
inline std::optional<PropertyLevel> modifier_before(std::span<const std::string> words,
                                                    std::size_t i) {
  if (i == 0) return std::nullopt;
  const std::string& w1 = words[i - 1];
  const bool very = i >= 2 && words[i - 2] == "very";
  if (w1 == "low") return very ? PropertyLevel::VeryLow : PropertyLevel::Low;
  if (w1 == "high") return very ? PropertyLevel::VeryHigh : PropertyLevel::High;
  if (w1 == "medium") return PropertyLevel::Medium;
  if (w1 == "no") return PropertyLevel::VeryLow;
  return std::nullopt;
}

}  // namespace detail

/// Deterministic rule-based translation of a terrain description.
///
/// Unmentioned properties stay Medium. Terrain nouns are applied in the order
/// they appear, then weather shifts (wet: friction down / damping up; sunny or
/// dry: friction up; snowy: friction very low), then explicit
/// "<modifier> <property>" phrases, which win over everything else.
inline PropertyLevels mock_translate(std::string_view description) {
  const auto words = detail::tokenize_words(description);
  PropertyLevels levels;

  for (std::size_t i = 0; i < words.size(); ++i) {
    for (const auto& rule : detail::noun_rules()) {
      if (detail::phrase_at(words, i, rule.pattern)) {
        for (const auto& e : rule.effects) levels[e.property] = e.level;
      }
    }
  }

  if (detail::any_word_prefix(words, detail::kWetWords)) {
    levels.friction = pred(levels.friction);
    levels.damping = succ(levels.damping);
  }
  if (detail::any_word_prefix(words, detail::kDryWords)) {
    levels.friction = succ(levels.friction);
  }
  if (std::find(words.begin(), words.end(), "snowy") != words.end()) {
    levels.friction = PropertyLevel::VeryLow;
  }

  for (std::size_t i = 0; i < words.size(); ++i) {
    if (auto p = detail::property_word(words[i])) {
      if (auto l = detail::modifier_before(words, i)) levels[*p] = *l;
    }
  }
  return levels;
}

}  // namespace ctxloco
