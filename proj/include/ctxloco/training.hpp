#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ctxloco/ars.hpp"
#include "ctxloco/embedding.hpp"
#include "ctxloco/linear_policy.hpp"
#include "ctxloco/mock_oracle.hpp"
#include "ctxloco/rng.hpp"
#include "ctxloco/surrogate_env.hpp"
#include "ctxloco/terrain.hpp"

namespace ctxloco {

/// Called with the full policy input vector before every action.
using InputProbe = std::function<void(const Vector&)>;

/// Runs one episode to termination and returns the summed reward.
inline Rollout run_episode(const LinearPolicy& policy, const Matrix& weights, SurrogateEnv& env,
                           const TerrainParams& terrain, std::uint64_t seed,
                           const ContextEmbedding& context, bool collect_stats = false,
                           const InputProbe& probe = {}) {
  if (policy.obs_dim() != kObsDim || policy.action_dim() != kActionDim) {
    throw ArgumentError("policy shape does not match the surrogate (16 observations, 8 actions)");
  }
  if (context.dim() != policy.embedding_dim) {
    throw ArgumentError("context has " + std::to_string(context.dim()) + " entries, policy expects " +
                        std::to_string(policy.embedding_dim));
  }
  Rollout out;
  if (collect_stats) out.obs_stats = RunningStat(kObsDim);
  Observation o = env.reset(terrain, seed);
  bool done = false;
  while (!done) {
    if (collect_stats) out.obs_stats.push(o);
    const Vector in = policy.input(o, context);
    if (probe) probe(in);
    Vector a = weights * in;
    Action act;
    for (int i = 0; i < kActionDim; ++i) act.u[i] = std::clamp(a[i], -1.0, 1.0);
    const auto r = env.step(act);
    out.reward += r.reward;
    ++out.steps;
    o = r.observation;
    done = r.done;
  }
  return out;
}

/// Episodic reward of a policy on one terrain.
inline double episode_reward(const LinearPolicy& policy, const TerrainParams& terrain, std::uint64_t seed,
                             const ContextEmbedding& context, const EnvConfig& env_config = {}) {
  SurrogateEnv env(terrain, env_config);
  return run_episode(policy, policy.weights, env, terrain, seed, context).reward;
}

/// Context a policy of the given method sees for a training terrain. The
/// Embedding method goes through the language path: quantize, describe,
/// translate back, embed.
inline ContextEmbedding training_context(ContextMode mode, const TerrainParams& terrain, int scenario,
                                         int n_scenarios) {
  switch (mode) {
    case ContextMode::NoContext: return no_context();
    case ContextMode::Indexing: return index_embedding(scenario, n_scenarios, true);
    case ContextMode::Embedding: break;
  }
  return embed(mock_translate(describe_low_level(quantize(terrain))));
}

/// The training scenarios drawn from the run seed.
inline std::vector<TerrainParams> training_terrains(std::uint64_t seed, int n) {
  Rng rng(derive_seed(seed, 0x5445525241494eULL));
  std::vector<TerrainParams> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(sample_terrain(rng));
  return out;
}

/// Domain-randomized surrogate training problem.
class SurrogateTask {
 public:
  SurrogateTask(ContextMode mode, std::vector<TerrainParams> terrains, EnvConfig env_config)
      : mode_(mode), terrains_(std::move(terrains)), env_config_(env_config) {
    if (terrains_.empty()) throw ConfigError("at least one training terrain is required");
    for (int i = 0; i < num_scenarios(); ++i) {
      contexts_.push_back(training_context(mode_, terrains_[static_cast<std::size_t>(i)], i, num_scenarios()));
    }
  }

  int num_scenarios() const { return static_cast<int>(terrains_.size()); }

  LinearPolicy initial_policy() const {
    return LinearPolicy::zeros(kActionDim, kObsDim, mode_, contexts_.front().dim());
  }

  Rollout rollout(const LinearPolicy& policy, const Matrix& weights, int scenario, std::uint64_t seed) const {
    SurrogateEnv env(terrains_[static_cast<std::size_t>(scenario)], env_config_);
    return run_episode(policy, weights, env, terrains_[static_cast<std::size_t>(scenario)], seed,
                       contexts_[static_cast<std::size_t>(scenario)], true);
  }

  const std::vector<TerrainParams>& terrains() const { return terrains_; }
  const std::vector<ContextEmbedding>& contexts() const { return contexts_; }

 private:
  ContextMode mode_;
  std::vector<TerrainParams> terrains_;
  EnvConfig env_config_;
  std::vector<ContextEmbedding> contexts_;
};

/// Trains one method on the surrogate. Episodes are capped at
/// config.episode_cap steps.
inline TrainResult train(ContextMode mode, const ArsConfig& config, EnvConfig env_config = {}) {
  config.validate();
  env_config.max_steps = config.episode_cap;
  SurrogateTask task(mode, training_terrains(config.seed, config.n_train_scenarios), env_config);
  auto result = ars_train(task, config);
  result.policy.config = nlohmann::json{{"ars", config}, {"env", env_config}, {"method", mode_name(mode)}};
  return result;
}

}  // namespace ctxloco
