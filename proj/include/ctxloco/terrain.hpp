#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

#include "ctxloco/errors.hpp"
#include "ctxloco/rng.hpp"

namespace ctxloco {

struct Range {
  double lo;
  double hi;

  constexpr double width() const { return hi - lo; }
  constexpr double midpoint() const { return 0.5 * (lo + hi); }
  constexpr bool contains(double v) const { return v >= lo && v <= hi; }
};

namespace ranges {
inline constexpr Range kRestitution{0.0, 0.2};
inline constexpr Range kLateralFriction{0.0, 1.0};
inline constexpr Range kRollingFriction{2.0e4, 1.6e5};
inline constexpr Range kStiffness{0.0, 1.0};
inline constexpr Range kDamping{0.0, 0.5};
}  // namespace ranges

/// Physical terrain properties, constant over an episode.
class TerrainParams {
 public:
  /// Throws ArgumentError when any field leaves its admissible range.
  static TerrainParams make(double restitution, double lateral_friction, double rolling_friction,
                            double stiffness, double damping) {
    check("restitution", restitution, ranges::kRestitution);
    check("lateral_friction", lateral_friction, ranges::kLateralFriction);
    check("rolling_friction", rolling_friction, ranges::kRollingFriction);
    check("stiffness", stiffness, ranges::kStiffness);
    check("damping", damping, ranges::kDamping);
    return TerrainParams(restitution, lateral_friction, rolling_friction, stiffness, damping);
  }

  /// All properties at the middle of their ranges.
  static TerrainParams nominal() {
    return TerrainParams(ranges::kRestitution.midpoint(), ranges::kLateralFriction.midpoint(),
                         ranges::kRollingFriction.midpoint(), ranges::kStiffness.midpoint(),
                         ranges::kDamping.midpoint());
  }

  double restitution() const { return restitution_; }
  double lateral_friction() const { return lateral_friction_; }
  double rolling_friction() const { return rolling_friction_; }
  double stiffness() const { return stiffness_; }
  double damping() const { return damping_; }

  TerrainParams with_lateral_friction(double v) const {
    return make(restitution_, v, rolling_friction_, stiffness_, damping_);
  }
  TerrainParams with_damping(double v) const {
    return make(restitution_, lateral_friction_, rolling_friction_, stiffness_, v);
  }
  TerrainParams with_stiffness(double v) const {
    return make(restitution_, lateral_friction_, rolling_friction_, v, damping_);
  }
  TerrainParams with_restitution(double v) const {
    return make(v, lateral_friction_, rolling_friction_, stiffness_, damping_);
  }

  bool operator==(const TerrainParams&) const = default;

 private:
  TerrainParams(double e, double mu, double roll, double k, double c)
      : restitution_(e), lateral_friction_(mu), rolling_friction_(roll), stiffness_(k), damping_(c) {}

  static void check(const char* name, double v, Range r) {
    if (!std::isfinite(v) || !r.contains(v)) {
      throw ArgumentError(std::string(name) + " = " + std::to_string(v) + " outside [" +
                          std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
    }
  }

  double restitution_;
  double lateral_friction_;
  double rolling_friction_;
  double stiffness_;
  double damping_;
};

enum class PropertyLevel : std::uint8_t { VeryLow = 0, Low = 1, Medium = 2, High = 3, VeryHigh = 4 };

inline constexpr int kNumLevels = 5;
inline constexpr std::array<PropertyLevel, kNumLevels> kAllLevels{
    PropertyLevel::VeryLow, PropertyLevel::Low, PropertyLevel::Medium, PropertyLevel::High,
    PropertyLevel::VeryHigh};

constexpr int ordinal(PropertyLevel l) { return static_cast<int>(l); }

constexpr PropertyLevel level_from_ordinal(int i) {
  return static_cast<PropertyLevel>(i < 0 ? 0 : (i > 4 ? 4 : i));
}

/// Saturating successor / predecessor.
constexpr PropertyLevel succ(PropertyLevel l) { return level_from_ordinal(ordinal(l) + 1); }
constexpr PropertyLevel pred(PropertyLevel l) { return level_from_ordinal(ordinal(l) - 1); }

/// "VERY_LOW" ... "VERY_HIGH".
constexpr std::string_view level_token(PropertyLevel l) {
  constexpr std::array<std::string_view, kNumLevels> tokens{"VERY_LOW", "LOW", "MEDIUM", "HIGH",
                                                            "VERY_HIGH"};
  return tokens[ordinal(l)];
}

/// "very low" ... "very high", as used in descriptions.
constexpr std::string_view level_words(PropertyLevel l) {
  constexpr std::array<std::string_view, kNumLevels> words{"very low", "low", "medium", "high",
                                                           "very high"};
  return words[ordinal(l)];
}

/// Case-insensitive token lookup.
inline std::optional<PropertyLevel> parse_level_token(std::string_view s) {
  std::string up;
  up.reserve(s.size());
  for (char c : s) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (auto l : kAllLevels) {
    if (up == level_token(l)) return l;
  }
  return std::nullopt;
}

/// The qualitative properties, in embedding block order.
enum class Property : std::uint8_t { Restitution = 0, Friction = 1, Stiffness = 2, Damping = 3 };

inline constexpr int kNumProperties = 4;
inline constexpr std::array<Property, kNumProperties> kAllProperties{
    Property::Restitution, Property::Friction, Property::Stiffness, Property::Damping};

constexpr std::string_view property_name(Property p) {
  constexpr std::array<std::string_view, kNumProperties> names{"restitution", "friction",
                                                               "stiffness", "damping"};
  return names[static_cast<int>(p)];
}

struct PropertyLevels {
  PropertyLevel restitution = PropertyLevel::Medium;
  PropertyLevel friction = PropertyLevel::Medium;
  PropertyLevel stiffness = PropertyLevel::Medium;
  PropertyLevel damping = PropertyLevel::Medium;

  PropertyLevel& operator[](Property p) {
    switch (p) {
      case Property::Restitution: return restitution;
      case Property::Friction: return friction;
      case Property::Stiffness: return stiffness;
      case Property::Damping: break;
    }
    return damping;
  }
  PropertyLevel operator[](Property p) const { return const_cast<PropertyLevels&>(*this)[p]; }

  bool operator==(const PropertyLevels&) const = default;

  /// Field-wise partial order.
  bool all_le(const PropertyLevels& o) const {
    return restitution <= o.restitution && friction <= o.friction && stiffness <= o.stiffness &&
           damping <= o.damping;
  }
};

/// Enumerates all 5^4 level combinations in lexicographic order.
template <typename Fn>
void for_each_levels(Fn&& fn) {
  for (auto e : kAllLevels)
    for (auto mu : kAllLevels)
      for (auto k : kAllLevels)
        for (auto c : kAllLevels) fn(PropertyLevels{e, mu, k, c});
}

namespace detail {

inline PropertyLevel bin(double v, Range r) {
  // Half-open bins [lo + i w, lo + (i+1) w), top bin closed.
  const int i = static_cast<int>(std::floor((v - r.lo) * kNumLevels / r.width()));
  return level_from_ordinal(i);
}

inline double bin_midpoint(PropertyLevel l, Range r) {
  return r.lo + (ordinal(l) + 0.5) * r.width() / kNumLevels;
}

}  // namespace detail

/// Draws every field uniformly from its range, consuming the stream in the
/// order restitution, lateral friction, rolling friction, stiffness, damping.
inline TerrainParams sample_terrain(Rng& rng) {
  const double e = rng.uniform(ranges::kRestitution.lo, ranges::kRestitution.hi);
  const double mu = rng.uniform(ranges::kLateralFriction.lo, ranges::kLateralFriction.hi);
  const double roll = rng.uniform(ranges::kRollingFriction.lo, ranges::kRollingFriction.hi);
  const double k = rng.uniform(ranges::kStiffness.lo, ranges::kStiffness.hi);
  const double c = rng.uniform(ranges::kDamping.lo, ranges::kDamping.hi);
  return TerrainParams::make(e, mu, roll, k, c);
}

inline PropertyLevels quantize(const TerrainParams& p) {
  return PropertyLevels{
      detail::bin(p.restitution(), ranges::kRestitution),
      detail::bin(p.lateral_friction(), ranges::kLateralFriction),
      detail::bin(p.stiffness(), ranges::kStiffness),
      detail::bin(p.damping(), ranges::kDamping),
  };
}

/// Level of the rolling-friction value on its own range (used by the
/// five-block embedding layout).
inline PropertyLevel rolling_level(const TerrainParams& p) {
  return detail::bin(p.rolling_friction(), ranges::kRollingFriction);
}

/// Bin midpoints; rolling friction follows the friction level.
inline TerrainParams levels_to_params(const PropertyLevels& l) {
  return TerrainParams::make(detail::bin_midpoint(l.restitution, ranges::kRestitution),
                             detail::bin_midpoint(l.friction, ranges::kLateralFriction),
                             detail::bin_midpoint(l.friction, ranges::kRollingFriction),
                             detail::bin_midpoint(l.stiffness, ranges::kStiffness),
                             detail::bin_midpoint(l.damping, ranges::kDamping));
}

inline std::string describe_low_level(const PropertyLevels& l) {
  std::string s = "This environment has ";
  s += level_words(l.restitution);
  s += " restitution when collision, ";
  s += level_words(l.friction);
  s += " friction, ";
  s += level_words(l.stiffness);
  s += " stiffness level, and ";
  s += level_words(l.damping);
  s += " damping.";
  return s;
}

// JSON

inline void to_json(nlohmann::json& j, PropertyLevel l) { j = std::string(level_token(l)); }

inline void from_json(const nlohmann::json& j, PropertyLevel& l) {
  auto parsed = parse_level_token(j.get<std::string>());
  if (!parsed) throw ArgumentError("unknown level token: " + j.get<std::string>());
  l = *parsed;
}

inline void to_json(nlohmann::json& j, const PropertyLevels& l) {
  j = nlohmann::json{{"restitution", l.restitution},
                     {"friction", l.friction},
                     {"stiffness", l.stiffness},
                     {"damping", l.damping}};
}

inline void from_json(const nlohmann::json& j, PropertyLevels& l) {
  l.restitution = j.at("restitution").get<PropertyLevel>();
  l.friction = j.at("friction").get<PropertyLevel>();
  l.stiffness = j.at("stiffness").get<PropertyLevel>();
  l.damping = j.at("damping").get<PropertyLevel>();
}

inline void to_json(nlohmann::json& j, const TerrainParams& p) {
  j = nlohmann::json{{"restitution", p.restitution()},
                     {"lateral_friction", p.lateral_friction()},
                     {"rolling_friction", p.rolling_friction()},
                     {"stiffness", p.stiffness()},
                     {"damping", p.damping()}};
}

inline TerrainParams terrain_from_json(const nlohmann::json& j) {
  return TerrainParams::make(j.at("restitution").get<double>(),
                             j.at("lateral_friction").get<double>(),
                             j.at("rolling_friction").get<double>(),
                             j.at("stiffness").get<double>(), j.at("damping").get<double>());
}

}  // namespace ctxloco
