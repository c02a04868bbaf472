#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "json.hpp"

#include "ctxloco/ars.hpp"
#include "ctxloco/embedding.hpp"
#include "ctxloco/errors.hpp"
#include "ctxloco/llm_backend.hpp"
#include "ctxloco/surrogate_env.hpp"
#include "ctxloco/translator.hpp"

namespace ctxloco {

struct TranslatorSettings {
  std::string backend = "mock";  // "mock" or "llm"
  BackendConfig llm;
  std::filesystem::path cache_file;  // empty: in-memory cache
};

struct EvalSettings {
  std::string cases = "all";
  int episodes = 16;
  std::uint64_t seed = 0;
  int max_steps = 5000;
};

struct ServeSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path static_dir = "web";
  std::filesystem::path journal_dir;
  bool turbo = false;
  int decimation = 5;
  std::size_t max_sessions = 16;
};

/// Everything one experiment needs; read from a JSON file, then overridden by flags.
struct RunConfig {
  static constexpr int kFormatVersion = 1;

  ArsConfig ars;
  EnvConfig env;
  ContextMode method = ContextMode::Embedding;
  TranslatorSettings translator;
  EvalSettings eval;
  ServeSettings serve;
  std::filesystem::path policy_out = "policy.json";
  std::filesystem::path policies_dir = "policies";
  std::filesystem::path report_dir = "report";
};

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const int version = j.value("format_version", RunConfig::kFormatVersion);
    if (version != RunConfig::kFormatVersion) {
      throw ConfigError("unsupported config format_version " + std::to_string(version));
    }
    if (j.contains("ars")) c.ars = j.at("ars").get<ArsConfig>();
    if (j.contains("env")) c.env = j.at("env").get<EnvConfig>();
    if (j.contains("method")) c.method = parse_mode(j.at("method").get<std::string>());
    if (j.contains("translator")) {
      const auto& t = j.at("translator");
      c.translator.backend = t.value("backend", c.translator.backend);
      if (t.contains("llm")) c.translator.llm = t.at("llm").get<BackendConfig>();
      c.translator.cache_file = t.value("cache_file", std::string{});
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval.cases = e.value("cases", c.eval.cases);
      c.eval.episodes = e.value("episodes", c.eval.episodes);
      c.eval.seed = e.value("seed", c.eval.seed);
      c.eval.max_steps = e.value("max_steps", c.eval.max_steps);
    }
    if (j.contains("serve")) {
      const auto& s = j.at("serve");
      c.serve.host = s.value("host", c.serve.host);
      c.serve.port = s.value("port", c.serve.port);
      c.serve.static_dir = s.value("static_dir", c.serve.static_dir.string());
      c.serve.journal_dir = s.value("journal_dir", std::string{});
      c.serve.turbo = s.value("turbo", c.serve.turbo);
      c.serve.decimation = s.value("decimation", c.serve.decimation);
      c.serve.max_sessions = s.value("max_sessions", c.serve.max_sessions);
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.policy_out = p.value("policy_out", c.policy_out.string());
      c.policies_dir = p.value("policies_dir", c.policies_dir.string());
      c.report_dir = p.value("report_dir", c.report_dir.string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return run_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed config file " + path.string() + ": " + e.what());
  }
}

/// Builds the configured translator. In llm mode the API key is checked
/// here so callers fail before doing any work.
inline std::shared_ptr<Translator> make_translator(const TranslatorSettings& s) {
  auto cache = s.cache_file.empty() ? std::make_shared<TranslationCache>()
                                    : std::make_shared<TranslationCache>(s.cache_file);
  if (s.backend == "mock") return std::make_shared<Translator>(std::make_shared<MockOracleBackend>(), cache);
  if (s.backend == "llm") {
    auto backend = std::make_shared<ChatCompletionBackend>(s.llm);
    backend->check_credentials();
    return std::make_shared<Translator>(backend, cache, s.llm.max_retries);
  }
  throw ConfigError("unknown translator backend: " + s.backend + " (expected mock or llm)");
}

}  // namespace ctxloco
