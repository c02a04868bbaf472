// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [--only <criterion>] [--jobs N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "ctxloco/ars.hpp"
#include "ctxloco/eval.hpp"
#include "ctxloco/training.hpp"
#include "ctxloco/translator.hpp"
#include "toy_task.hpp"

using namespace ctxloco;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and thresholds.
constexpr double kUpdateExpected = 0.042426406871192847;  // 0.03 / (2 sqrt 0.5) * 2
constexpr double kUpdateTol = 1e-9;
constexpr double kShiftTol = 1e-9;
constexpr double kGapClosure = 0.9;
constexpr int kToyIterations = 200;
constexpr std::int64_t kBenefitSteps = 200'000;
constexpr int kBenefitCap = 100;
constexpr int kBenefitEpisodes = 16;
constexpr int kBenefitSeeds = 5;
constexpr int kBenefitWinsNeeded = 4;
constexpr std::uint64_t kBenefitSeedBase = 1000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_jobs = 1;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome embedding_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  PropertyLevels l;
  l.friction = PropertyLevel::VeryLow;
  l.damping = PropertyLevel::VeryHigh;
  const auto z = embed(l);
  const std::vector<double> friction(z.values.begin() + 5, z.values.begin() + 10);
  const std::vector<double> damping(z.values.begin() + 15, z.values.begin() + 20);
  bool ok = friction == std::vector<double>{1, 0, 0, 0, 0} && damping == std::vector<double>{0, 0, 0, 0, 1};
  int combos = 0, bad = 0;
  for_each_levels([&](const PropertyLevels& x) {
    ++combos;
    const auto e = embed(x);
    const auto ones = std::count(e.values.begin(), e.values.end(), 1.0);
    const auto zeros = std::count(e.values.begin(), e.values.end(), 0.0);
    if (e.dim() != 20 || ones != 4 || zeros != 16) ++bad;
  });
  const double secs = seconds_since(t0);
  ok = ok && combos == 625 && bad == 0 && secs < 1.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "worked example blocks %s, %d/625 combinations with four 1s, %.3f s",
                ok ? "match" : "checked", combos - bad, secs);
  return {ok, buf};
}

Outcome round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  int ok_desc = 0, ok_parse = 0;
  for_each_levels([&](const PropertyLevels& l) {
    if (levels_from_embedding(embed(mock_translate(describe_low_level(l)))) == l) ++ok_desc;
    if (parse_response(render_answers(l)) == l) ++ok_parse;
  });
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "describe/translate/embed %d/625, parse(render) %d/625, %.3f s", ok_desc, ok_parse,
                secs);
  return {ok_desc == 625 && ok_parse == 625 && secs < 1.0, buf};
}

Outcome table_fidelity() {
  // Table strings typed independently of the case table in the library.
  const std::map<char, std::string> table{
      {'A', "This environment has no restitution when collision, very high friction, and no damping."},
      {'B', "This environment has no restitution when collision, very low friction, and no damping."},
      {'C', "This environment has high restitution when collision, very high friction, and very high damping."},
      {'D', "This environment has medium restitution when collision, low friction, and very high damping."},
      {'E', "This environment has high restitution when collision, very high friction, and low stiffness."},
      {'F', "The spot is walking on a grassland under a drizzle."},
      {'G', "The spot is walking on a mountain road covered by ice. It's snowy now."},
      {'H', "The spot is walking on the beach near the sea under the sun."},
      {'I', "The spot is walking on a concrete road under heavy rain."},
      {'J', "The spot is walking on running tracks on a sunny day."},
  };
  using L = PropertyLevel;
  using P = Property;
  // Levels forced by the explicit phrases of the low-level cases.
  const std::vector<std::tuple<char, P, L>> phrases{
      {'A', P::Restitution, L::VeryLow}, {'A', P::Friction, L::VeryHigh}, {'A', P::Damping, L::VeryLow},
      {'B', P::Restitution, L::VeryLow}, {'B', P::Friction, L::VeryLow},  {'B', P::Damping, L::VeryLow},
      {'C', P::Restitution, L::High},    {'C', P::Friction, L::VeryHigh}, {'C', P::Damping, L::VeryHigh},
      {'D', P::Restitution, L::Medium},  {'D', P::Friction, L::Low},      {'D', P::Damping, L::VeryHigh},
      {'E', P::Restitution, L::High},    {'E', P::Friction, L::VeryHigh}, {'E', P::Stiffness, L::Low},
  };
  int text_ok = 0, level_ok = 0;
  std::map<char, PropertyLevels> translated;
  for (const auto& c : builtin_cases()) {
    if (table.contains(c.id) && table.at(c.id) == c.description) ++text_ok;
    translated[c.id] = mock_translate(c.description);
  }
  for (const auto& [id, p, l] : phrases) level_ok += translated.at(id)[p] == l;
  const bool extra = translated.at('G').friction == L::VeryLow && translated.at('H').stiffness == L::VeryLow &&
                     translated.at('H').damping == L::VeryHigh && translated.at('H').friction == L::High;
  char buf[160];
  std::snprintf(buf, sizeof buf, "descriptions %d/10 byte-identical, explicit phrases %d/%zu, G/H rules %s", text_ok,
                level_ok, phrases.size(), extra ? "ok" : "wrong");
  return {builtin_cases().size() == 10 && text_ok == 10 && level_ok == static_cast<int>(phrases.size()) && extra, buf};
}

Outcome ars_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  toy::PointMassTask task;
  const double r0 = task.reward_of(0.0);
  const double r_star = task.reward_of(task.optimal_action());
  std::string detail;
  bool ok = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    ArsConfig c;  // step 0.03, 16 directions, noise 0.05
    c.seed = seed;
    c.episode_cap = task.horizon;
    c.max_env_steps = kToyIterations * c.iteration_cost();
    const auto r = ars_train(task, c);
    const double closure = (task.reward_of(r.policy.weights(0, 0)) - r0) / (r_star - r0);
    ok = ok && closure >= kGapClosure && static_cast<int>(r.curve.size()) <= kToyIterations;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%sseed %llu %.4f", detail.empty() ? "" : ", ",
                  static_cast<unsigned long long>(seed), closure);
    detail += buf;
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  char buf[200];
  std::snprintf(buf, sizeof buf, "gap closure (need >= %.2f in %d iterations): %s; a* = %.6f, R* = %.4f, %.2f s",
                kGapClosure, kToyIterations, detail.c_str(), task.optimal_action(), r_star, secs);
  return {ok, buf};
}

Matrix scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

Outcome ars_update_unit() {
  ArsConfig c;
  c.top_b = 2;
  const std::vector<Matrix> deltas{scalar(1), scalar(-1)};
  const double example = ars_update(scalar(0), deltas, std::vector<DirectionRewards>{{2, 0}, {1, 1}}, c)(0, 0);
  const bool example_ok = std::abs(example - kUpdateExpected) <= kUpdateTol;

  const double equal = ars_update(scalar(0.5), deltas, std::vector<DirectionRewards>{{3, 3}, {-2, -2}}, c)(0, 0);
  const bool equal_ok = equal == 0.5;

  ArsConfig c16;
  Rng rng(17);
  std::vector<Matrix> d16;
  std::vector<DirectionRewards> r, shifted;
  for (int k = 0; k < c16.n_directions; ++k) {
    Matrix d(kActionDim, kObsDim);
    for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = rng.normal();
    d16.push_back(d);
    r.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3)});
    shifted.push_back({r.back().plus + 100, r.back().minus + 100});
  }
  const Matrix w = Matrix::Zero(kActionDim, kObsDim);
  const double shift_err = (ars_update(w, d16, r, c16) - ars_update(w, d16, shifted, c16)).cwiseAbs().maxCoeff();
  const bool shift_ok = shift_err <= kShiftTol;

  char buf[200];
  std::snprintf(buf, sizeof buf, "example %.12f (expected %.12f), equal rewards delta %.1e, +100 shift max diff %.1e",
                example, kUpdateExpected, std::abs(equal - 0.5), shift_err);
  return {example_ok && equal_ok && shift_ok, buf};
}

double total_dx(const TerrainParams& terrain, int steps) {
  SurrogateEnv env(terrain);
  env.reset(1);
  const auto a = Action::constant_thrust(1.0);
  double dx = 0;
  for (int i = 0; i < steps && !env.done(); ++i) dx += env.step(a).info.dx;
  return dx;
}

Outcome surrogate_monotonicity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto base = TerrainParams::nominal();
  std::vector<double> by_friction, by_damping;
  for (double mu : {0.1, 0.5, 0.9}) by_friction.push_back(total_dx(base.with_lateral_friction(mu), 500));
  for (double c : {0.05, 0.25, 0.45}) by_damping.push_back(total_dx(base.with_lateral_friction(0.9).with_damping(c), 500));
  const bool friction_ok = by_friction[0] < by_friction[1] && by_friction[1] < by_friction[2];
  const bool damping_ok = by_damping[0] > by_damping[1] && by_damping[1] > by_damping[2];

  int decay_violations = 0;
  for (double c : {0.0, 0.25, 0.5}) {
    SurrogateEnv env(base.with_damping(c));
    env.reset(2);
    auto s = env.state();
    s.vx = 1.0;
    env.set_state(s);
    double prev = std::abs(s.vx);
    for (int i = 0; i < 500 && !env.done(); ++i) {
      env.step(Action{});
      const double v = std::abs(env.state().vx);
      decay_violations += v > prev;
      prev = v;
    }
  }
  const double secs = seconds_since(t0);
  char buf[240];
  std::snprintf(buf, sizeof buf,
                "dx over friction {0.1,0.5,0.9} = %.3f, %.3f, %.3f; over damping {0.05,0.25,0.45} = %.3f, %.3f, "
                "%.3f; decay violations %d; %.3f s",
                by_friction[0], by_friction[1], by_friction[2], by_damping[0], by_damping[1], by_damping[2],
                decay_violations, secs);
  return {friction_ok && damping_ok && decay_violations == 0 && secs < 5.0, buf};
}

Outcome context_benefit() {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  std::string detail;
  for (int k = 0; k < kBenefitSeeds; ++k) {
    ArsConfig c;
    c.seed = kBenefitSeedBase + static_cast<std::uint64_t>(k);
    c.max_env_steps = kBenefitSteps;
    c.episode_cap = kBenefitCap;
    c.jobs = g_jobs;
    std::map<ContextMode, LinearPolicy> policies;
    for (auto m : kAllModes) policies[m] = train(m, c).policy;
    Translator translator(std::make_shared<MockOracleBackend>());
    EvalOptions opts;
    opts.n_episodes = kBenefitEpisodes;
    opts.seed = c.seed;
    const auto report = run_study(policies, translator, builtin_cases(), opts, g_jobs);
    const double emb = report.grand_mean(ContextMode::Embedding);
    const double none = report.grand_mean(ContextMode::NoContext);
    wins += emb > none;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%sseed %llu %.2f vs %.2f", detail.empty() ? "" : "; ",
                  static_cast<unsigned long long>(c.seed), emb, none);
    detail += buf;
  }
  char buf[600];
  std::snprintf(buf, sizeof buf, "Embedding > NoContext in %d/%d seeds (need %d); %s; %.1f s", wins, kBenefitSeeds,
                kBenefitWinsNeeded, detail.c_str(), seconds_since(t0));
  return {wins >= kBenefitWinsNeeded, buf};
}

Outcome indexing_padding() {
  ArsConfig c;
  c.seed = 21;
  c.max_env_steps = 32000;
  c.episode_cap = kBenefitCap;
  const auto policy = train(ContextMode::Indexing, c).policy;
  Translator translator(std::make_shared<MockOracleBackend>());
  EvalOptions opts;
  opts.n_episodes = 2;
  long steps = 0, nonzero = 0;
  opts.probe = [&](const Vector& in) {
    ++steps;
    for (Eigen::Index i = policy.obs_dim(); i < in.size(); ++i) nonzero += in[i] != 0.0;
  };
  for (const auto& cs : builtin_cases()) evaluate(policy, cs, translator, opts);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%ld evaluation steps probed, %ld nonzero context entries (context dim %d)", steps,
                nonzero, policy.embedding_dim);
  return {steps > 0 && nonzero == 0 && policy.embedding_dim == 8, buf};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + CTXLOCO_CLI_PATH + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

Outcome determinism() {
  const fs::path root = fs::current_path() / "acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> curves, reports;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    fs::create_directories(dir);
    const auto log = dir / "log.txt";
    for (const char* m : {"no_context", "indexing", "embedding"}) {
      const auto args = std::string("train --method ") + m + " --steps 32000 --episode-cap 100 --seed 5 --out \"" +
                        (dir / "policies" / (std::string(m) + ".json")).string() + "\" --curve \"" +
                        (dir / "curves" / (std::string(m) + ".csv")).string() + "\" --jobs " + std::to_string(g_jobs);
      if (run_cli(args, log) != 0) return {false, "train failed, see " + log.string()};
    }
    const auto eval_args = "eval --policies \"" + (dir / "policies").string() + "\" --seed 5 --out \"" +
                           (dir / "report").string() + "\" --jobs " + std::to_string(g_jobs);
    if (run_cli(eval_args, log) != 0) return {false, "eval failed, see " + log.string()};
    std::string curve_bytes;
    for (const char* m : {"no_context", "indexing", "embedding"}) curve_bytes += read_file(dir / "curves" / (std::string(m) + ".csv"));
    curves.push_back(curve_bytes);
    reports.push_back(read_file(dir / "report" / "report.csv"));
  }
  const bool ok = !curves[0].empty() && !reports[0].empty() && curves[0] == curves[1] && reports[0] == reports[1];
  char buf[160];
  std::snprintf(buf, sizeof buf, "curves %zu bytes %s, report %zu bytes %s", curves[0].size(),
                curves[0] == curves[1] ? "identical" : "differ", reports[0].size(),
                reports[0] == reports[1] ? "identical" : "differ");
  return {ok, buf};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string only;
  g_jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--only", only, "Run a single criterion");
  app.add_option("--jobs", g_jobs, "Worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"embedding_exactness", embedding_exactness},
      {"round_trip", round_trip},
      {"table_fidelity", table_fidelity},
      {"ars_oracle", ars_oracle},
      {"ars_update", ars_update_unit},
      {"surrogate_monotonicity", surrogate_monotonicity},
      {"context_benefit", context_benefit},
      {"indexing_padding", indexing_padding},
      {"determinism", determinism},
  };
  if (!only.empty() && std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == only; })) {
    std::fprintf(stderr, "unknown criterion: %s\n", only.c_str());
    return 2;
  }

  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && name != only) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
