// Command-line entry point: train, eval, translate, serve, demo.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "ctxloco/eval.hpp"
#include "ctxloco/run_config.hpp"
#include "ctxloco/session.hpp"
#include "ctxloco/training.hpp"

namespace fs = std::filesystem;
using namespace ctxloco;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kIo = 3, kBackend = 4 };

struct Flags {
  std::string config;
  int jobs = 1;
  // train
  std::string method;
  std::int64_t steps = -1;
  std::int64_t seed = -1;
  int episode_cap = -1;
  std::string out;
  std::string curve;
  // eval
  std::string policies;
  std::string cases;
  std::string translator;
  int episodes = -1;
  int max_steps = -1;
  std::string report;
  std::string cache;
  // translate
  std::string description;
  // serve
  std::string host;
  int port = -1;
  std::string static_dir;
  std::string journal_dir;
  bool turbo = false;
};

RunConfig base_config(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.method.empty()) c.method = parse_mode(f.method);
  if (f.steps >= 0) c.ars.max_env_steps = f.steps;
  if (f.seed >= 0) {
    c.ars.seed = static_cast<std::uint64_t>(f.seed);
    c.eval.seed = static_cast<std::uint64_t>(f.seed);
  }
  if (f.episode_cap > 0) c.ars.episode_cap = f.episode_cap;
  c.ars.jobs = f.jobs;
  if (!f.out.empty()) c.policy_out = f.out;
  if (!f.policies.empty()) c.policies_dir = f.policies;
  if (!f.cases.empty()) c.eval.cases = f.cases;
  if (!f.translator.empty()) c.translator.backend = f.translator;
  if (f.episodes > 0) c.eval.episodes = f.episodes;
  if (f.max_steps > 0) c.eval.max_steps = f.max_steps;
  if (!f.report.empty()) c.report_dir = f.report;
  if (!f.cache.empty()) c.translator.cache_file = f.cache;
  if (!f.host.empty()) c.serve.host = f.host;
  if (f.port >= 0) c.serve.port = f.port;
  if (!f.static_dir.empty()) c.serve.static_dir = f.static_dir;
  if (!f.journal_dir.empty()) c.serve.journal_dir = f.journal_dir;
  if (f.turbo) c.serve.turbo = true;
  return c;
}

fs::path default_curve_path(const fs::path& policy_out, ContextMode m) {
  return policy_out.parent_path() / "curves" / (std::string(mode_name(m)) + ".csv");
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
  }
}

TrainResult train_and_save(const RunConfig& c, ContextMode m, const fs::path& policy_out,
                           const fs::path& curve_out) {
  auto result = train(m, c.ars, c.env);
  ensure_parent(policy_out);
  ensure_parent(curve_out);
  save_policy(result.policy, policy_out);
  save_curve_csv(curve_out, result.curve);
  return result;
}

void print_train_summary(ContextMode m, const TrainResult& r, const fs::path& out) {
  const double final_mean = r.curve.empty() ? 0.0 : r.curve.back().mean_reward;
  std::printf("%s: %zu iterations, %lld env steps, final mean reward %.6f -> %s\n", std::string(mode_name(m)).c_str(), r.curve.size(),
              static_cast<long long>(r.policy.env_steps), final_mean, out.string().c_str());
}

int cmd_train(const Flags& f) {
  const auto c = base_config(f);
  const fs::path curve = f.curve.empty() ? default_curve_path(c.policy_out, c.method) : fs::path(f.curve);
  const auto r = train_and_save(c, c.method, c.policy_out, curve);
  print_train_summary(c.method, r, c.policy_out);
  return kOk;
}

std::map<ContextMode, LinearPolicy> load_policy_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("policy directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<ContextMode, LinearPolicy> out;
  for (const auto& file : files) {
    auto p = load_policy(file);
    const auto m = p.embedding_mode;
    if (out.contains(m)) {
      throw ConfigError("two policies for method " + std::string(mode_name(m)) + " in " + dir.string());
    }
    out.emplace(m, std::move(p));
  }
  return out;
}

void print_grid(const EvalReport& r) {
  std::printf("%-4s %-48s", "case", "name");
  for (auto m : kAllModes) std::printf(" %24s", std::string(mode_name(m)).c_str());
  std::printf("\n");
  std::vector<char> ids;
  for (const auto& c : r.cells) {
    if (std::find(ids.begin(), ids.end(), c.case_id) == ids.end()) ids.push_back(c.case_id);
  }
  for (char id : ids) {
    const auto* first = r.find(kAllModes[0], id);
    std::printf("%-4c %-48s", id, first ? first->case_name.c_str() : "");
    for (auto m : kAllModes) {
      const auto* cell = r.find(m, id);
      if (cell && cell->ok()) {
        std::printf(" %13.3f +- %8.3f", cell->mean, cell->stddev);
      } else {
        std::printf(" %24s", "error");
      }
    }
    std::printf("\n");
  }
  std::printf("%-53s", "grand mean");
  for (auto m : kAllModes) std::printf(" %24.3f", r.grand_mean(m));
  std::printf("\n");
}

EvalReport run_eval(const RunConfig& c, Translator& translator,
                    const std::map<ContextMode, LinearPolicy>& policies, int jobs) {
  const auto cases = select_cases(c.eval.cases);
  EvalOptions o;
  o.n_episodes = c.eval.episodes;
  o.seed = c.eval.seed;
  o.env = c.env;
  o.env.max_steps = c.eval.max_steps;
  auto report = run_study(policies, translator, cases, o, jobs);
  save_report(c.report_dir, report);
  return report;
}

int cmd_eval(const Flags& f) {
  const auto c = base_config(f);
  const auto policies = load_policy_dir(c.policies_dir);
  // Built before any rollout so llm mode without a key fails fast.
  auto translator = make_translator(c.translator);
  const auto report = run_eval(c, *translator, policies, f.jobs);
  print_grid(report);
  std::printf("report written to %s\n", c.report_dir.string().c_str());
  for (const auto& cell : report.cells) {
    if (!cell.ok()) {
      std::fprintf(stderr, "cell %s/%c failed: %s\n", std::string(mode_name(cell.method)).c_str(), cell.case_id,
                   cell.error.c_str());
    }
  }
  return kOk;
}

int cmd_translate(const Flags& f) {
  auto c = base_config(f);
  if (f.description.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ArgumentError("description must not be empty");
  }
  auto translator = make_translator(c.translator);
  const auto r = translator->translate(f.description);
  const nlohmann::json out{{"description", f.description},
                           {"backend", r.backend},
                           {"levels", r.levels},
                           {"embedding", embedding_json(embed(r.levels))}};
  std::cout << out.dump(2) << '\n';
  return kOk;
}

SessionService* g_service = nullptr;

int cmd_serve(const Flags& f) {
  const auto c = base_config(f);
  auto registry = PolicyRegistry::from_directory(c.policies_dir);
  if (registry.empty()) throw ConfigError("no policies in " + c.policies_dir.string());
  ServiceConfig sc;
  sc.env = c.env;
  sc.turbo = c.serve.turbo;
  sc.decimation = c.serve.decimation;
  sc.max_sessions = c.serve.max_sessions;
  sc.journal_dir = c.serve.journal_dir;
  sc.static_dir = c.serve.static_dir;
  SessionService service(std::move(registry), make_translator(c.translator), sc);
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::printf("serving on http://%s:%d\n", c.serve.host.c_str(), c.serve.port);
  std::fflush(stdout);
  if (!service.listen(c.serve.host, c.serve.port)) {
    g_service = nullptr;
    throw IoError("cannot listen on " + c.serve.host + ":" + std::to_string(c.serve.port));
  }
  g_service = nullptr;
  return kOk;
}

int cmd_demo(const Flags& f) {
  Flags g = f;
  if (g.steps < 0) g.steps = 200'000;
  if (g.episode_cap <= 0) g.episode_cap = 100;
  auto c = base_config(g);
  const fs::path root = f.out.empty() ? fs::path("demo") : fs::path(f.out);
  c.policies_dir = root / "policies";
  c.report_dir = root / "report";
  auto translator = make_translator(c.translator);
  std::map<ContextMode, LinearPolicy> policies;
  for (auto m : kAllModes) {
    const auto out = c.policies_dir / (std::string(mode_name(m)) + ".json");
    const auto r = train_and_save(c, m, out, root / "curves" / (std::string(mode_name(m)) + ".csv"));
    print_train_summary(m, r, out);
    policies.emplace(m, r.policy);
  }
  const auto report = run_eval(c, *translator, policies, f.jobs);
  print_grid(report);
  std::printf("report written to %s\n", c.report_dir.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware locomotion: train and evaluate linear ARS policies on a terrain surrogate"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON run config (flags override its values)");
    sub->add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto add_translator = [&](CLI::App* sub, const char* name) {
    sub->add_option(name, f.translator, "Translator backend")->check(CLI::IsMember({"mock", "llm"}));
    sub->add_option("--cache", f.cache, "Translation cache file");
  };

  auto* train_cmd = app.add_subcommand("train", "Train one method with ARS");
  add_common(train_cmd);
  train_cmd->add_option("--method", f.method, "no_context | indexing | embedding");
  train_cmd->add_option("--steps", f.steps, "Environment step budget");
  train_cmd->add_option("--seed", f.seed, "Run seed")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--episode-cap", f.episode_cap, "Training episode length cap");
  train_cmd->add_option("--out", f.out, "Policy output file");
  train_cmd->add_option("--curve", f.curve, "Curve CSV (default: <out dir>/curves/<method>.csv)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate all three methods on the case study");
  add_common(eval_cmd);
  eval_cmd->add_option("--policies", f.policies, "Directory with one policy file per method");
  eval_cmd->add_option("--cases", f.cases, "all | low | high | comma-separated ids");
  add_translator(eval_cmd, "--translator");
  eval_cmd->add_option("--episodes", f.episodes, "Episodes per cell")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", f.seed, "Study seed")->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--max-steps", f.max_steps, "Evaluation episode length")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", f.report, "Report directory");

  auto* translate_cmd = app.add_subcommand("translate", "Translate a terrain description to levels");
  add_common(translate_cmd);
  translate_cmd->add_option("--description", f.description, "Terrain description")->required();
  add_translator(translate_cmd, "--backend");

  auto* serve_cmd = app.add_subcommand("serve", "Run the live session service");
  add_common(serve_cmd);
  serve_cmd->add_option("--policies", f.policies, "Directory of policy files");
  serve_cmd->add_option("--host", f.host, "Bind address");
  serve_cmd->add_option("--port", f.port, "Port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--static", f.static_dir, "Web console assets");
  serve_cmd->add_option("--journal-dir", f.journal_dir, "Write session journals here");
  serve_cmd->add_flag("--turbo", f.turbo, "Step sessions without wall-clock pacing");
  add_translator(serve_cmd, "--translator");

  auto* demo_cmd = app.add_subcommand("demo", "Train all methods at desk scale and evaluate them");
  add_common(demo_cmd);
  demo_cmd->add_option("--steps", f.steps, "Step budget per method (default 200000)");
  demo_cmd->add_option("--episode-cap", f.episode_cap, "Training episode cap (default 100)");
  demo_cmd->add_option("--seed", f.seed, "Seed")->check(CLI::NonNegativeNumber);
  demo_cmd->add_option("--episodes", f.episodes, "Evaluation episodes per cell")->check(CLI::PositiveNumber);
  demo_cmd->add_option("--out", f.out, "Output directory (default demo)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(f);
    if (*eval_cmd) return cmd_eval(f);
    if (*translate_cmd) return cmd_translate(f);
    if (*serve_cmd) return cmd_serve(f);
    if (*demo_cmd) return cmd_demo(f);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const BackendError& e) {
    std::fprintf(stderr, "backend error: %s\n", e.what());
    return kBackend;
  } catch (const TranslationError& e) {
    std::fprintf(stderr, "translation error: %s\n", e.what());
    return kBackend;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "translation error: %s\n", e.what());
    return kBackend;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kUsage;
}
