#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxloco/ars.hpp"
#include "ctxloco/embedding.hpp"
#include "ctxloco/errors.hpp"
#include "ctxloco/linear_policy.hpp"
#include "ctxloco/surrogate_env.hpp"
#include "ctxloco/terrain.hpp"
#include "ctxloco/training.hpp"
#include "ctxloco/translator.hpp"

namespace ctxloco {

enum class CaseLevel { Low, High };

struct EvalCase {
  char id;
  std::string name;
  std::string description;
  CaseLevel kind;
  PropertyLevels ground_truth_levels;

  TerrainParams ground_truth_params() const { return levels_to_params(ground_truth_levels); }
};

/// The ten evaluation cases: A-E give low-level property descriptions, F-J
/// describe surroundings and weather. Names of A-E follow the results prose. Ground-truth levels are the rule
/// oracle's reading of each description, fixed here.
inline const std::vector<EvalCase>& builtin_cases() {
  using L = PropertyLevel;
  static const std::vector<EvalCase> cases{
      {'A', "Normal Terrain",
       "This environment has no restitution when collision, very high friction, and no damping.",
       CaseLevel::Low, {L::VeryLow, L::VeryHigh, L::Medium, L::VeryLow}},
      {'B', "Low Friction",
       "This environment has no restitution when collision, very low friction, and no damping.",
       CaseLevel::Low, {L::VeryLow, L::VeryLow, L::Medium, L::VeryLow}},
      {'C', "High Damping",
       "This environment has high restitution when collision, very high friction, and very high damping.",
       CaseLevel::Low, {L::High, L::VeryHigh, L::Medium, L::VeryHigh}},
      {'D', "Medium Restitution, Very High Damping",
       "This environment has medium restitution when collision, low friction, and very high damping.",
       CaseLevel::Low, {L::Medium, L::Low, L::Medium, L::VeryHigh}},
      {'E', "High Restitution and Damping, Low Stiffness",
       "This environment has high restitution when collision, very high friction, and low stiffness.",
       CaseLevel::Low, {L::High, L::VeryHigh, L::Low, L::Medium}},
      {'F', "Moist Grassland", "The spot is walking on a grassland under a drizzle.", CaseLevel::High,
       {L::Medium, L::Low, L::Low, L::High}},
      {'G', "Snowy Mountain Road", "The spot is walking on a mountain road covered by ice. It's snowy now.",
       CaseLevel::High, {L::Low, L::VeryLow, L::VeryHigh, L::Medium}},
      {'H', "Sunny Beach", "The spot is walking on the beach near the sea under the sun.", CaseLevel::High,
       {L::Medium, L::High, L::VeryLow, L::VeryHigh}},
      {'I', "Rainy Concrete Road", "The spot is walking on a concrete road under heavy rain.",
       CaseLevel::High, {L::Medium, L::Medium, L::VeryHigh, L::High}},
      {'J', "Sunny Running Tracks", "The spot is walking on running tracks on a sunny day.",
       CaseLevel::High, {L::High, L::VeryHigh, L::High, L::Medium}},
  };
  return cases;
}

/// "all", "low", "high", or a comma-separated list of case ids.
inline std::vector<EvalCase> select_cases(const std::string& spec) {
  const auto& all = builtin_cases();
  if (spec == "all") return all;
  std::vector<EvalCase> out;
  if (spec == "low" || spec == "high") {
    const auto kind = spec == "low" ? CaseLevel::Low : CaseLevel::High;
    for (const auto& c : all) {
      if (c.kind == kind) out.push_back(c);
    }
    return out;
  }
  for (char ch : spec) {
    if (ch == ',' || ch == ' ') continue;
    const char id = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    auto it = std::find_if(all.begin(), all.end(), [&](const EvalCase& c) { return c.id == id; });
    if (it == all.end()) throw ConfigError(std::string("unknown case id: ") + ch);
    out.push_back(*it);
  }
  if (out.empty()) throw ConfigError("no evaluation cases selected");
  return out;
}

struct CellStats {
  ContextMode method = ContextMode::NoContext;
  char case_id = '?';
  std::string case_name;
  double mean = 0;
  double stddev = 0;
  std::vector<double> episodes;
  std::string backend;
  std::optional<PropertyLevels> translated_levels;
  ContextEmbedding context;
  std::string error;

  bool ok() const { return error.empty(); }
};

struct EvalOptions {
  int n_episodes = 16;
  std::uint64_t seed = 0;
  EnvConfig env;  // env.max_steps is the evaluation episode length
  InputProbe probe;
};

/// Context fed to a policy during evaluation.
inline ContextEmbedding eval_context(const LinearPolicy& policy, const EvalCase& c, Translator& translator,
                                     std::optional<PropertyLevels>* translated = nullptr) {
  switch (policy.embedding_mode) {
    case ContextMode::NoContext: return no_context();
    case ContextMode::Indexing: return index_embedding(0, policy.embedding_dim, false);
    case ContextMode::Embedding: break;
  }
  const auto result = translator.translate(c.description);
  if (translated) *translated = result.levels;
  return embed(result.levels, LinearPolicy::layout_for(policy.embedding_dim));
}

/// Mean / population std over n_episodes with seeds seed, seed+1, ...
inline CellStats evaluate(const LinearPolicy& policy, const EvalCase& c, Translator& translator,
                          const EvalOptions& options) {
  CellStats cell;
  cell.method = policy.embedding_mode;
  cell.case_id = c.id;
  cell.case_name = c.name;
  if (policy.embedding_mode == ContextMode::Embedding) cell.backend = translator.backend_identity();
  try {
    cell.context = eval_context(policy, c, translator, &cell.translated_levels);
  } catch (const std::exception& e) {
    cell.error = e.what();
    return cell;
  }
  const auto terrain = c.ground_truth_params();
  SurrogateEnv env(terrain, options.env);
  double sum = 0;
  for (int e = 0; e < options.n_episodes; ++e) {
    const auto r = run_episode(policy, policy.weights, env, terrain, options.seed + static_cast<std::uint64_t>(e),
                               cell.context, false, options.probe);
    cell.episodes.push_back(r.reward);
    sum += r.reward;
  }
  cell.mean = cell.episodes.empty() ? 0.0 : sum / static_cast<double>(cell.episodes.size());
  double ss = 0;
  for (double v : cell.episodes) ss += (v - cell.mean) * (v - cell.mean);
  cell.stddev = cell.episodes.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(cell.episodes.size()));
  return cell;
}

struct EvalReport {
  std::vector<CellStats> cells;  // method-major, case order within a method
  std::map<ContextMode, std::string> policy_hashes;
  std::string translator_backend;
  std::uint64_t seed = 0;
  int n_episodes = 0;
  nlohmann::json config = nlohmann::json::object();

  const CellStats* find(ContextMode m, char id) const {
    for (const auto& c : cells) {
      if (c.method == m && c.case_id == id) return &c;
    }
    return nullptr;
  }

  /// Mean over the successful cells of one method.
  double grand_mean(ContextMode m) const {
    double s = 0;
    int n = 0;
    for (const auto& c : cells) {
      if (c.method == m && c.ok()) {
        s += c.mean;
        ++n;
      }
    }
    return n ? s / n : 0.0;
  }
};

/// Evaluates every method's policy on every selected case.
inline EvalReport run_study(const std::map<ContextMode, LinearPolicy>& policies, Translator& translator,
                            const std::vector<EvalCase>& cases, const EvalOptions& options, int jobs = 1) {
  for (auto m : kAllModes) {
    if (!policies.contains(m)) throw ConfigError("missing policy for method " + std::string(mode_name(m)));
  }
  EvalReport report;
  report.seed = options.seed;
  report.n_episodes = options.n_episodes;
  report.translator_backend = translator.backend_identity();
  report.config = nlohmann::json{{"env", options.env}, {"n_episodes", options.n_episodes}};
  for (const auto& [m, p] : policies) report.policy_hashes[m] = policy_hash(p);

  const int n_cases = static_cast<int>(cases.size());
  report.cells.resize(kAllModes.size() * cases.size());
  detail::parallel_for(static_cast<int>(report.cells.size()), jobs, [&](int i) {
    const auto m = kAllModes[static_cast<std::size_t>(i / n_cases)];
    report.cells[static_cast<std::size_t>(i)] =
        evaluate(policies.at(m), cases[static_cast<std::size_t>(i % n_cases)], translator, options);
  });
  return report;
}

inline std::string format_number(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_report_csv(std::ostream& os, const EvalReport& r) {
  os << "method,case_id,case_name,mean_reward,std_reward\n";
  for (const auto& c : r.cells) {
    os << mode_name(c.method) << ',' << c.case_id << ",\"" << c.case_name << "\","
       << (c.ok() ? format_number(c.mean) : "nan") << ',' << (c.ok() ? format_number(c.stddev) : "nan")
       << '\n';
  }
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json cell{{"method", mode_name(c.method)},
                        {"case_id", std::string(1, c.case_id)},
                        {"case_name", c.case_name},
                        {"mean_reward", c.mean},
                        {"std_reward", c.stddev},
                        {"episodes", c.episodes},
                        {"backend", c.backend},
                        {"embedding", embedding_json(c.context)}};
    if (c.translated_levels) cell["levels"] = *c.translated_levels;
    if (!c.ok()) cell["error"] = c.error;
    cells.push_back(std::move(cell));
  }
  nlohmann::json hashes = nlohmann::json::object();
  for (const auto& [m, h] : r.policy_hashes) hashes[std::string(mode_name(m))] = h;
  return nlohmann::json{{"seed", r.seed},
                        {"n_episodes", r.n_episodes},
                        {"translator_backend", r.translator_backend},
                        {"policy_hashes", hashes},
                        {"config", r.config},
                        {"cells", cells}};
}

inline void save_report(const std::filesystem::path& dir, const EvalReport& r) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream csv(dir / "report.csv", std::ios::trunc);
  std::ofstream json(dir / "report.json", std::ios::trunc);
  if (!csv || !json) throw IoError("cannot write report files in " + dir.string());
  write_report_csv(csv, r);
  json << report_json(r).dump(2) << '\n';
}

}  // namespace ctxloco
