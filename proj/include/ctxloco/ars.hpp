#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "ctxloco/embedding.hpp"
#include "ctxloco/errors.hpp"
#include "ctxloco/linear_policy.hpp"
#include "ctxloco/rng.hpp"

namespace ctxloco {

/// Augmented Random Search hyperparameters.
struct ArsConfig {
  double step_size = 0.03;
  int n_directions = 16;
  double noise = 0.05;
  int top_b = 8;
  std::int64_t max_env_steps = 2'000'000;
  int episode_cap = 5000;
  int n_train_scenarios = 8;
  std::uint64_t seed = 0;
  double gamma = 1.0;  // recorded only; returns are undiscounted
  int jobs = 1;

  void validate() const {
    if (n_directions < 1) throw ConfigError("n_directions must be >= 1");
    if (top_b < 1 || top_b > n_directions) throw ConfigError("top_b must lie in [1, n_directions]");
    if (!(noise > 0.0)) throw ConfigError("noise must be positive");
    if (!(step_size > 0.0)) throw ConfigError("step_size must be positive");
    if (episode_cap < 1) throw ConfigError("episode_cap must be >= 1");
    if (n_train_scenarios < 1) throw ConfigError("n_train_scenarios must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
  }

  /// Worst-case env steps of one iteration (2N full-length rollouts).
  std::int64_t iteration_cost() const {
    return 2LL * n_directions * static_cast<std::int64_t>(episode_cap);
  }
};

inline void to_json(nlohmann::json& j, const ArsConfig& c) {
  j = nlohmann::json{{"step_size", c.step_size},         {"n_directions", c.n_directions},
                     {"noise", c.noise},                 {"top_b", c.top_b},
                     {"max_env_steps", c.max_env_steps}, {"episode_cap", c.episode_cap},
                     {"n_train_scenarios", c.n_train_scenarios}, {"seed", c.seed},
                     {"gamma", c.gamma}};
}

inline void from_json(const nlohmann::json& j, ArsConfig& c) {
  c.step_size = j.value("step_size", c.step_size);
  c.n_directions = j.value("n_directions", c.n_directions);
  c.noise = j.value("noise", c.noise);
  c.top_b = j.value("top_b", c.top_b);
  c.max_env_steps = j.value("max_env_steps", c.max_env_steps);
  c.episode_cap = j.value("episode_cap", c.episode_cap);
  c.n_train_scenarios = j.value("n_train_scenarios", c.n_train_scenarios);
  c.seed = j.value("seed", c.seed);
  c.gamma = j.value("gamma", c.gamma);
  c.jobs = j.value("jobs", c.jobs);
}

struct DirectionRewards {
  double plus = 0;
  double minus = 0;
};

struct UpdateStats {
  double sigma_r = 0;
  bool applied = false;
};

/// One ARS step: keep the top_b directions ranked by max(r+, r-), scale by
/// the population std of their 2*top_b rewards, and move along
/// sum (r+ - r-) delta. A zero std leaves the weights unchanged.
inline Matrix ars_update(const Matrix& weights, std::span<const Matrix> deltas,
                         std::span<const DirectionRewards> rewards, const ArsConfig& config,
                         UpdateStats* stats = nullptr) {
  if (deltas.size() != rewards.size() || deltas.empty()) {
    throw ArgumentError("ars_update needs one reward pair per direction");
  }
  const int n = static_cast<int>(deltas.size());
  const int b = std::min(config.top_b, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
    return std::max(rewards[a].plus, rewards[a].minus) > std::max(rewards[c].plus, rewards[c].minus);
  });

  double sum = 0, sum_sq = 0;
  for (int i = 0; i < b; ++i) {
    const auto& r = rewards[order[i]];
    sum += r.plus + r.minus;
  }
  const double mean = sum / (2.0 * b);
  for (int i = 0; i < b; ++i) {
    const auto& r = rewards[order[i]];
    sum_sq += (r.plus - mean) * (r.plus - mean) + (r.minus - mean) * (r.minus - mean);
  }
  const double sigma = std::sqrt(sum_sq / (2.0 * b));
  if (stats) *stats = {sigma, false};
  if (!(sigma > 0.0)) return weights;

  Matrix step = Matrix::Zero(weights.rows(), weights.cols());
  for (int i = 0; i < b; ++i) {
    const int k = order[i];
    step += (rewards[k].plus - rewards[k].minus) * deltas[k];
  }
  if (stats) stats->applied = true;
  return weights + (config.step_size / (b * sigma)) * step;
}

struct Rollout {
  double reward = 0;
  std::int64_t steps = 0;
  RunningStat obs_stats;
};

/// A training problem: runs one episode of a policy (normalization taken
/// from `policy`, weights from `weights`) on scenario `scenario` with the given
/// episode seed.
template <typename T>
concept RolloutTask = requires(const T& t, const LinearPolicy& p, const Matrix& w, int scenario,
                               std::uint64_t seed) {
  { t.rollout(p, w, scenario, seed) } -> std::same_as<Rollout>;
  { t.num_scenarios() } -> std::convertible_to<int>;
  { t.initial_policy() } -> std::same_as<LinearPolicy>;
};

struct IterationRecord {
  int iteration = 0;
  double mean_reward = 0;
  double max_reward = 0;
  std::int64_t env_steps = 0;
  double sigma_r = 0;
};

struct TrainResult {
  LinearPolicy policy;
  std::vector<IterationRecord> curve;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `jobs` threads.
template <typename Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::jthread> workers;
  const int count = std::min(jobs, n);
  workers.reserve(static_cast<std::size_t>(count));
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < count; ++w) {
    workers.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  workers.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// ARS training loop. Iterations run while a full worst-case iteration still
/// fits in the step budget. Rollouts of one iteration are independent and results
/// are aggregated by direction index, so `jobs` does not change the outcome.
template <RolloutTask Task>
TrainResult ars_train(const Task& task, const ArsConfig& config) {
  config.validate();
  if (config.max_env_steps < config.iteration_cost()) {
    throw ConfigError("budget < one iteration: max_env_steps " + std::to_string(config.max_env_steps) +
                      " < " + std::to_string(config.iteration_cost()));
  }
  TrainResult result{task.initial_policy(), {}};
  LinearPolicy& policy = result.policy;
  RunningStat obs_stats(policy.obs_dim());
  Rng noise_rng(derive_seed(config.seed, 0x4152530000000001ULL));

  const int n = config.n_directions;
  const int scenarios = task.num_scenarios();
  std::int64_t steps = 0;
  std::vector<Matrix> deltas(static_cast<std::size_t>(n));
  std::vector<DirectionRewards> rewards(static_cast<std::size_t>(n));
  std::vector<Rollout> plus(static_cast<std::size_t>(n)), minus(static_cast<std::size_t>(n));

  for (int iter = 0; steps + config.iteration_cost() <= config.max_env_steps; ++iter) {
    for (auto& d : deltas) {
      d.resize(policy.weights.rows(), policy.weights.cols());
      for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = noise_rng.normal();
    }

    detail::parallel_for(2 * n, config.jobs, [&](int job) {
      const int k = job / 2;
      const bool positive = job % 2 == 0;
      const std::uint64_t episode_seed = derive_seed(config.seed, static_cast<std::uint64_t>(iter) + 1,
                                                     static_cast<std::uint64_t>(k));
      const Matrix w = positive ? Matrix(policy.weights + config.noise * deltas[k])
                                : Matrix(policy.weights - config.noise * deltas[k]);
      (positive ? plus : minus)[k] = task.rollout(policy, w, k % scenarios, episode_seed);
    });

    IterationRecord rec;
    rec.iteration = iter;
    rec.max_reward = -std::numeric_limits<double>::infinity();
    double total = 0;
    for (int k = 0; k < n; ++k) {
      rewards[k] = {plus[k].reward, minus[k].reward};
      total += plus[k].reward + minus[k].reward;
      rec.max_reward = std::max({rec.max_reward, plus[k].reward, minus[k].reward});
      steps += plus[k].steps + minus[k].steps;
      obs_stats.merge(plus[k].obs_stats);
      obs_stats.merge(minus[k].obs_stats);
    }
    rec.mean_reward = total / (2.0 * n);
    rec.env_steps = steps;

    UpdateStats us;
    policy.weights = ars_update(policy.weights, deltas, rewards, config, &us);
    rec.sigma_r = us.sigma_r;
    if (policy.obs_dim() > 0) {
      policy.obs_mean = obs_stats.mean();
      policy.obs_var = obs_stats.variance();
    }
    result.curve.push_back(rec);
  }

  policy.seed = config.seed;
  policy.env_steps = steps;
  return result;
}

inline void write_curve_csv(std::ostream& os, std::span<const IterationRecord> curve) {
  os << "iteration,env_steps,mean_reward,max_reward,sigma_r\n";
  char buf[160];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.9g,%.9g,%.9g\n", r.iteration,
                  static_cast<long long>(r.env_steps), r.mean_reward, r.max_reward, r.sigma_r);
    os << buf;
  }
}

inline void save_curve_csv(const std::filesystem::path& path, std::span<const IterationRecord> curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write curve file " + path.string());
  write_curve_csv(out, curve);
}

}  // namespace ctxloco
