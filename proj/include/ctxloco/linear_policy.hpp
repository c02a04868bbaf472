#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "ctxloco/embedding.hpp"
#include "ctxloco/errors.hpp"
#include "ctxloco/translator.hpp"

namespace ctxloco {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Per-entry running mean / variance (Welford), mergeable in a fixed order.
class RunningStat {
 public:
  RunningStat() = default;
  explicit RunningStat(int dim) : mean_(Vector::Zero(dim)), m2_(Vector::Zero(dim)) {}

  void push(std::span<const double> x) {
    ++count_;
    for (int i = 0; i < dim(); ++i) {
      const double d = x[static_cast<std::size_t>(i)] - mean_[i];
      mean_[i] += d / static_cast<double>(count_);
      m2_[i] += d * (x[static_cast<std::size_t>(i)] - mean_[i]);
    }
  }

  /// Chan et al. pairwise combination.
  void merge(const RunningStat& o) {
    if (o.count_ == 0) return;
    if (count_ == 0) {
      *this = o;
      return;
    }
    const double n1 = static_cast<double>(count_), n2 = static_cast<double>(o.count_);
    const double n = n1 + n2;
    const Vector delta = o.mean_ - mean_;
    mean_ += delta * (n2 / n);
    m2_ += o.m2_ + delta.cwiseProduct(delta) * (n1 * n2 / n);
    count_ += o.count_;
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  std::int64_t count() const { return count_; }
  const Vector& mean() const { return mean_; }
  /// Population variance; ones until two samples have been seen.
  Vector variance() const {
    if (count_ < 2) return Vector::Ones(dim());
    return m2_ / static_cast<double>(count_);
  }

 private:
  std::int64_t count_ = 0;
  Vector mean_;
  Vector m2_;
};

/// Linear map from [normalized observation, context embedding] to a clipped action.
struct LinearPolicy {
  static constexpr int kFormatVersion = 1;

  Matrix weights;  // action_dim x (obs_dim + embedding_dim)
  Vector obs_mean;
  Vector obs_var;
  ContextMode embedding_mode = ContextMode::NoContext;
  int embedding_dim = 0;
  std::vector<std::string> block_order;
  std::uint64_t seed = 0;
  std::int64_t env_steps = 0;
  nlohmann::json config = nlohmann::json::object();

  static LinearPolicy zeros(int action_dim, int obs_dim, ContextMode mode, int embedding_dim) {
    LinearPolicy p;
    p.weights = Matrix::Zero(action_dim, obs_dim + embedding_dim);
    p.obs_mean = Vector::Zero(obs_dim);
    p.obs_var = Vector::Ones(obs_dim);
    p.embedding_mode = mode;
    p.embedding_dim = embedding_dim;
    if (mode == ContextMode::Embedding) p.block_order = ctxloco::block_order(layout_for(embedding_dim));
    return p;
  }

  int action_dim() const { return static_cast<int>(weights.rows()); }
  int input_dim() const { return static_cast<int>(weights.cols()); }
  int obs_dim() const { return static_cast<int>(obs_mean.size()); }

  /// Normalized observation followed by the raw embedding.
  Vector input(std::span<const double> observation, const ContextEmbedding& z) const {
    if (static_cast<int>(observation.size()) != obs_dim()) {
      throw ArgumentError("observation has " + std::to_string(observation.size()) +
                          " entries, policy expects " + std::to_string(obs_dim()));
    }
    if (z.dim() != embedding_dim) {
      throw ArgumentError("embedding has " + std::to_string(z.dim()) + " entries, policy expects " +
                          std::to_string(embedding_dim));
    }
    Vector in(input_dim());
    for (int i = 0; i < obs_dim(); ++i) {
      in[i] = (observation[static_cast<std::size_t>(i)] - obs_mean[i]) / std::sqrt(obs_var[i] + 1e-8);
    }
    for (int i = 0; i < embedding_dim; ++i) in[obs_dim() + i] = z.values[static_cast<std::size_t>(i)];
    return in;
  }

  Vector act(std::span<const double> observation, const ContextEmbedding& z) const {
    return act_with(weights, observation, z);
  }

  /// Same normalization, different weight matrix (used for perturbed rollouts).
  Vector act_with(const Matrix& w, std::span<const double> observation, const ContextEmbedding& z) const {
    Vector a = w * input(observation, z);
    return a.cwiseMax(-1.0).cwiseMin(1.0);
  }

  static BlockLayout layout_for(int dim) {
    return dim == ctxloco::embedding_dim(BlockLayout::FiveProperty) ? BlockLayout::FiveProperty
                                                                     : BlockLayout::FourProperty;
  }
};

inline nlohmann::json policy_to_json(const LinearPolicy& p) {
  std::vector<double> flat(p.weights.data(), p.weights.data() + p.weights.size());
  return nlohmann::json{
      {"format_version", LinearPolicy::kFormatVersion},
      {"input_dim", p.input_dim()},
      {"action_dim", p.action_dim()},
      {"matrix", flat},
      {"obs_mean", std::vector<double>(p.obs_mean.data(), p.obs_mean.data() + p.obs_mean.size())},
      {"obs_var", std::vector<double>(p.obs_var.data(), p.obs_var.data() + p.obs_var.size())},
      {"embedding_mode", std::string(mode_name(p.embedding_mode))},
      {"embedding_dim", p.embedding_dim},
      {"block_order", p.block_order},
      {"seed", p.seed},
      {"env_steps", p.env_steps},
      {"config", p.config},
  };
}

inline LinearPolicy policy_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != LinearPolicy::kFormatVersion) {
    throw ConfigError("unsupported policy format_version " + j.at("format_version").dump());
  }
  LinearPolicy p;
  const int rows = j.at("action_dim").get<int>();
  const int cols = j.at("input_dim").get<int>();
  const auto flat = j.at("matrix").get<std::vector<double>>();
  if (rows <= 0 || cols < 0 || flat.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    throw ConfigError("policy matrix size does not match action_dim x input_dim");
  }
  p.weights = Eigen::Map<const Matrix>(flat.data(), rows, cols);
  const auto mean = j.at("obs_mean").get<std::vector<double>>();
  const auto var = j.at("obs_var").get<std::vector<double>>();
  if (mean.size() != var.size()) throw ConfigError("obs_mean and obs_var lengths differ");
  p.obs_mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  p.obs_var = Eigen::Map<const Vector>(var.data(), static_cast<Eigen::Index>(var.size()));
  if ((p.obs_var.array() < 0.0).any()) throw ConfigError("obs_var has negative entries");
  p.embedding_mode = parse_mode(j.at("embedding_mode").get<std::string>());
  p.embedding_dim = j.at("embedding_dim").get<int>();
  if (p.obs_dim() + p.embedding_dim != cols) {
    throw ConfigError("input_dim != observation dim + embedding_dim");
  }
  p.block_order = j.value("block_order", std::vector<std::string>{});
  if (p.embedding_mode == ContextMode::Embedding && 
      p.block_order != block_order(LinearPolicy::layout_for(p.embedding_dim))) {
    throw ConfigError("policy block_order does not match this build's embedding layout");
  }
  p.seed = j.value("seed", std::uint64_t{0});
  p.env_steps = j.value("env_steps", std::int64_t{0});
  p.config = j.value("config", nlohmann::json::object());
  return p;
}

inline void save_policy(const LinearPolicy& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write policy file " + path.string());
  out << policy_to_json(p).dump(2) << '\n';
  if (!out) throw IoError("failed writing policy file " + path.string());
}

inline LinearPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open policy file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed policy file " + path.string() + ": " + e.what());
  }
  return policy_from_json(j);
}

/// Content hash of the serialized policy.
inline std::string policy_hash(const LinearPolicy& p) { return fnv1a_hex(policy_to_json(p).dump()); }

}  // namespace ctxloco
