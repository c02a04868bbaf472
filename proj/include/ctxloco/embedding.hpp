#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ctxloco/errors.hpp"
#include "ctxloco/terrain.hpp"

namespace ctxloco {

enum class ContextMode : std::uint8_t { NoContext, Indexing, Embedding };

inline constexpr std::array<ContextMode, 3> kAllModes{ContextMode::NoContext, ContextMode::Indexing,
                                                      ContextMode::Embedding};

constexpr std::string_view mode_name(ContextMode m) {
  switch (m) {
    case ContextMode::NoContext: return "no_context";
    case ContextMode::Indexing: return "indexing";
    case ContextMode::Embedding: break;
  }
  return "embedding";
}

inline ContextMode parse_mode(std::string_view s) {
  std::string t;
  for (char c : s) t.push_back(c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "no_context" || t == "nocontext" || t == "none") return ContextMode::NoContext;
  if (t == "indexing" || t == "index") return ContextMode::Indexing;
  if (t == "embedding" || t == "emb") return ContextMode::Embedding;
  throw ArgumentError("unknown method: " + std::string(s));
}

/// Block layout of the Embedding vector. The default is four blocks
/// (restitution, friction, stiffness, damping); the five-block variant appends
/// a rolling-friction block.
enum class BlockLayout : std::uint8_t { FourProperty, FiveProperty };

constexpr int embedding_dim(BlockLayout layout) {
  return kNumLevels * (layout == BlockLayout::FourProperty ? 4 : 5);
}

inline std::vector<std::string> block_order(BlockLayout layout) {
  std::vector<std::string> order{"restitution", "friction", "stiffness", "damping"};
  if (layout == BlockLayout::FiveProperty) order.emplace_back("rolling_friction");
  return order;
}

struct ContextEmbedding {
  ContextMode mode = ContextMode::NoContext;
  std::vector<double> values;

  int dim() const { return static_cast<int>(values.size()); }
  bool operator==(const ContextEmbedding&) const = default;
};

inline std::array<double, kNumLevels> onehot(PropertyLevel level) {
  std::array<double, kNumLevels> v{};
  v[ordinal(level)] = 1.0;
  return v;
}

/// Concatenated one-hot blocks in the order restitution, friction, stiffness,
/// damping. With the five-block layout the rolling-friction level follows the
/// friction level unless given.
inline ContextEmbedding embed(const PropertyLevels& levels,
                              BlockLayout layout = BlockLayout::FourProperty,
                              std::optional<PropertyLevel> rolling = std::nullopt) {
  ContextEmbedding z{ContextMode::Embedding, {}};
  z.values.reserve(embedding_dim(layout));
  for (auto p : kAllProperties) {
    const auto block = onehot(levels[p]);
    z.values.insert(z.values.end(), block.begin(), block.end());
  }
  if (layout == BlockLayout::FiveProperty) {
    const auto block = onehot(rolling.value_or(levels.friction));
    z.values.insert(z.values.end(), block.begin(), block.end());
  }
  return z;
}

/// Scenario one-hot during training; all-zero padding during evaluation.
inline ContextEmbedding index_embedding(int scenario_index, int n_scenarios, bool is_training) {
  if (n_scenarios <= 0) throw ArgumentError("n_scenarios must be positive");
  ContextEmbedding z{ContextMode::Indexing, std::vector<double>(static_cast<std::size_t>(n_scenarios), 0.0)};
  if (is_training) {
    if (scenario_index < 0 || scenario_index >= n_scenarios) {
      throw ArgumentError("scenario index " + std::to_string(scenario_index) + " outside [0, " +
                          std::to_string(n_scenarios) + ")");
    }
    z.values[static_cast<std::size_t>(scenario_index)] = 1.0;
  }
  return z;
}

inline ContextEmbedding no_context() { return ContextEmbedding{ContextMode::NoContext, {}}; }

/// Inverse of embed for the four-block layout; throws if a block is not one-hot.
inline PropertyLevels levels_from_embedding(const ContextEmbedding& z) {
  if (z.dim() < embedding_dim(BlockLayout::FourProperty)) {
    throw ArgumentError("embedding too short to hold four property blocks");
  }
  PropertyLevels out;
  for (auto p : kAllProperties) {
    const auto first = z.values.begin() + static_cast<int>(p) * kNumLevels;
    const auto hot = std::count(first, first + kNumLevels, 1.0);
    const auto cold = std::count(first, first + kNumLevels, 0.0);
    if (hot != 1 || cold != kNumLevels - 1) throw ArgumentError("embedding block is not one-hot");
    out[p] = level_from_ordinal(static_cast<int>(std::find(first, first + kNumLevels, 1.0) - first));
  }
  return out;
}

/// Serialized as an integer array.
inline nlohmann::json embedding_json(const ContextEmbedding& z) {
  auto arr = nlohmann::json::array();
  for (double v : z.values) arr.push_back(static_cast<int>(v));
  return arr;
}

}  // namespace ctxloco
