#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <istream>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that clashes
// with Eigen parameter names.
#include <Eigen/Dense>

#include "httplib.h"
#include "json.hpp"

#include "ctxloco/embedding.hpp"
#include "ctxloco/errors.hpp"
#include "ctxloco/linear_policy.hpp"
#include "ctxloco/rng.hpp"
#include "ctxloco/surrogate_env.hpp"
#include "ctxloco/terrain.hpp"
#include "ctxloco/translator.hpp"

namespace ctxloco {

enum class SessionStatus { Running, Paused, Done };

inline const char* status_name(SessionStatus s) {
  switch (s) {
    case SessionStatus::Running: return "running";
    case SessionStatus::Paused: return "paused";
    case SessionStatus::Done: return "done";
  }
  return "unknown";
}

struct StateEvent {
  int t = 0;
  double x = 0, y = 0, h = 0;
  double reward_cumulative = 0;
  std::array<double, kNumLegs> contacts{};
  bool done = false;
};

/// Deterministic core of a live session: one env, one policy, a swappable
/// context embedding. Everything the service does to a session goes through
/// these calls, so a journal of them replays exactly.
class SessionSim {
 public:
  SessionSim(std::shared_ptr<const LinearPolicy> policy, TerrainParams terrain, ContextEmbedding context,
             EnvConfig env_config)
      : policy_(std::move(policy)), env_(terrain, env_config), context_(std::move(context)) {
    if (!policy_) throw ArgumentError("session needs a policy");
    if (context_.dim() != policy_->embedding_dim) {
      throw ArgumentError("context has " + std::to_string(context_.dim()) + " entries, policy expects " +
                          std::to_string(policy_->embedding_dim));
    }
  }

  void reset(std::uint64_t seed) {
    seed_ = seed;
    obs_ = env_.reset(seed);
    cumulative_ = 0;
  }

  StateEvent step() {
    if (env_.done()) throw StateError("episode finished; reset the session");
    const Vector a = policy_->act(obs_, context_);
    Action act;
    for (int i = 0; i < kActionDim; ++i) act.u[i] = a[i];
    const auto r = env_.step(act);
    obs_ = r.observation;
    cumulative_ += r.reward;
    return snapshot();
  }

  StateEvent snapshot() const {
    const auto& s = env_.state();
    return StateEvent{s.step_index, s.x, s.y, s.h, cumulative_, env_.contacts(), env_.done()};
  }

  void set_context(ContextEmbedding z, std::string description) {
    if (z.dim() != policy_->embedding_dim) throw ArgumentError("context dimension does not match the policy");
    context_ = std::move(z);
    description_ = std::move(description);
  }

  void set_terrain(const TerrainParams& p) { env_.set_terrain(p); }

  int t() const { return env_.state().step_index; }
  bool done() const { return env_.done(); }
  double cumulative() const { return cumulative_; }
  std::uint64_t seed() const { return seed_; }
  const ContextEmbedding& context() const { return context_; }
  const std::string& description() const { return description_; }
  const TerrainParams& terrain() const { return env_.terrain(); }
  const LinearPolicy& policy() const { return *policy_; }

 private:
  std::shared_ptr<const LinearPolicy> policy_;
  SurrogateEnv env_;
  ContextEmbedding context_;
  std::string description_;
  Observation obs_{};
  double cumulative_ = 0;
  std::uint64_t seed_ = 0;
};

inline nlohmann::json step_event_json(const StateEvent& e, const ContextEmbedding& z,
                                      const std::string& description, SessionStatus status) {
  return nlohmann::json{{"type", "step"},
                        {"t", e.t},
                        {"x", e.x},
                        {"y", e.y},
                        {"h", e.h},
                        {"reward_cumulative", e.reward_cumulative},
                        {"contacts", e.contacts},
                        {"embedding", embedding_json(z)},
                        {"last_description", description},
                        {"status", status_name(status)}};
}

struct ReplayResult {
  int t = 0;
  double reward_cumulative = 0;
  bool done = false;
};

/// Re-runs a session journal offline. Records are applied when the step
/// counter reaches their `step` field.
inline ReplayResult replay_journal(std::istream& in, std::shared_ptr<const LinearPolicy> policy) {
  std::optional<SessionSim> sim;
  auto advance_to = [&](int step) {
    while (sim->t() < step) {
      if (sim->done()) throw ConfigError("journal refers to step " + std::to_string(step) + " past episode end");
      sim->step();
    }
  };
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto type = j.at("type").get<std::string>();
    if (type == "start") {
      const auto env = j.at("env").get<EnvConfig>();
      const auto values = j.at("embedding").get<std::vector<double>>();
      sim.emplace(policy, terrain_from_json(j.at("terrain")),
                  ContextEmbedding{policy->embedding_mode, values}, env);
      sim->reset(j.at("seed").get<std::uint64_t>());
      continue;
    }
    if (!sim) throw ConfigError("journal does not begin with a start record");
    advance_to(j.at("step").get<int>());
    if (type == "context") {
      sim->set_context(ContextEmbedding{policy->embedding_mode, j.at("embedding").get<std::vector<double>>()},
                       j.value("description", std::string{}));
      if (j.contains("terrain")) sim->set_terrain(terrain_from_json(j.at("terrain")));
    } else if (type == "reset") {
      sim->reset(j.at("seed").get<std::uint64_t>());
    }
  }
  if (!sim) throw ConfigError("empty journal");
  return ReplayResult{sim->t(), sim->cumulative(), sim->done()};
}

/// Fan-out buffer of serialized events. Readers track the last sequence
/// number they consumed.
class EventBuffer {
 public:
  explicit EventBuffer(std::size_t capacity = 4096) : capacity_(capacity) {}

  void publish(std::string payload) {
    {
      std::lock_guard lock(mu_);
      events_.emplace_back(++last_seq_, std::move(payload));
      while (events_.size() > capacity_) events_.pop_front();
    }
    cv_.notify_all();
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  std::uint64_t last_seq() const {
    std::lock_guard lock(mu_);
    return last_seq_;
  }

  /// Events after `after`, waiting up to `timeout` for at least one. Returns
  /// false once the buffer is closed and drained.
  bool wait(std::uint64_t& after, std::chrono::milliseconds timeout, std::vector<std::string>& out) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || last_seq_ > after; });
    for (const auto& [seq, payload] : events_) {
      if (seq > after) out.push_back(payload);
    }
    const bool more = !(closed_ && last_seq_ <= after);
    after = last_seq_;
    return more;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<std::uint64_t, std::string>> events_;
  std::uint64_t last_seq_ = 0;
  std::size_t capacity_;
  bool closed_ = false;
};

struct ServiceConfig {
  int decimation = 5;
  std::chrono::milliseconds heartbeat{5000};
  double steps_per_second = 50.0;
  bool turbo = false;
  std::size_t max_sessions = 16;
  EnvConfig env;
  std::filesystem::path journal_dir;  // empty: journals kept in memory only
  std::filesystem::path static_dir;   // empty or missing: no static mount
};

/// Error with an HTTP status and a machine-readable code.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

/// One live session: a SessionSim driven by its own stepping thread.
class Session {
 public:
  Session(std::string id, std::string policy_id, std::shared_ptr<const LinearPolicy> policy,
          TerrainParams terrain, ContextEmbedding context, std::string description, std::uint64_t seed,
          const ServiceConfig& config, bool turbo)
      : id_(std::move(id)),
        policy_id_(std::move(policy_id)),
        config_(config),
        turbo_(turbo),
        sim_(std::move(policy), terrain, std::move(context), config.env) {
    sim_.set_context(sim_.context(), std::move(description));
    base_seed_ = seed;
    sim_.reset(episode_seed());
    if (!config_.journal_dir.empty()) {
      std::filesystem::create_directories(config_.journal_dir);
      journal_file_.open(config_.journal_dir / (id_ + ".jsonl"), std::ios::trunc);
      if (!journal_file_) throw IoError("cannot open session journal in " + config_.journal_dir.string());
    }
    journal(nlohmann::json{{"type", "start"},
                           {"seed", sim_.seed()},
                           {"terrain", sim_.terrain()},
                           {"embedding", sim_.context().values},
                           {"description", sim_.description()},
                           {"policy", policy_id_},
                           {"policy_hash", policy_hash(sim_.policy())},
                           {"env", config_.env}});
    worker_ = std::jthread([this](std::stop_token st) { run(st); });
  }

  ~Session() { shutdown(); }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  void shutdown() {
    if (worker_.joinable()) {
      worker_.request_stop();
      cv_.notify_all();
      worker_.join();
    }
    events_.close();
  }

  const std::string& id() const { return id_; }
  EventBuffer& events() { return events_; }

  nlohmann::json snapshot() {
    auto lock = acquire();
    return snapshot_locked();
  }

  /// Swaps the context between two steps. Returns the switch record.
  nlohmann::json apply_context(const ContextEmbedding& z, const std::string& description,
                               const PropertyLevels& levels, bool retarget) {
    auto lock = acquire();
    const bool changed = z.values != sim_.context().values;
    sim_.set_context(z, description);
    nlohmann::json rec{{"type", "context"},
                       {"step", sim_.t()},
                       {"description", description},
                       {"embedding", z.values}};
    if (retarget) {
      sim_.set_terrain(levels_to_params(levels));
      rec["terrain"] = sim_.terrain();
    }
    journal(rec);
    nlohmann::json ev{{"type", "context"},
                      {"t", sim_.t()},
                      {"applies_from_step", sim_.t() + 1},
                      {"description", description},
                      {"levels", levels},
                      {"embedding", embedding_json(z)},
                      {"changed", changed},
                      {"retarget_terrain", retarget}};
    events_.publish(ev.dump());
    return ev;
  }

  nlohmann::json control(const std::string& verb) {
    auto lock = acquire();
    if (verb == "pause") {
      if (status_ == SessionStatus::Done) throw ServiceError(409, "invalid_transition", "session is done");
      status_ = SessionStatus::Paused;
    } else if (verb == "resume") {
      if (status_ == SessionStatus::Done) {
        throw ServiceError(409, "invalid_transition", "cannot resume a finished session; reset it first");
      }
      status_ = SessionStatus::Running;
    } else if (verb == "reset") {
      const int at = sim_.t();
      ++episode_;
      sim_.reset(episode_seed());
      journal(nlohmann::json{{"type", "reset"}, {"step", at}, {"seed", sim_.seed()}});
      if (status_ == SessionStatus::Done) status_ = SessionStatus::Paused;
      events_.publish(nlohmann::json{{"type", "reset"}, {"t", 0}, {"status", status_name(status_)}}.dump());
    } else {
      throw ServiceError(400, "bad_request", "unknown control verb: " + verb);
    }
    publish_status();
    cv_.notify_all();
    return snapshot_locked();
  }

  std::vector<std::string> journal_lines() {
    auto lock = acquire();
    return journal_;
  }

 private:
  std::unique_lock<std::mutex> acquire() {
    ++waiters_;
    std::unique_lock lock(mu_);
    --waiters_;
    return lock;
  }

  std::uint64_t episode_seed() const { return derive_seed(base_seed_, 0x53455353ULL, episode_); }

  nlohmann::json snapshot_locked() const {
    const auto e = sim_.snapshot();
    auto j = step_event_json(e, sim_.context(), sim_.description(), status_);
    j.erase("type");
    j["id"] = id_;
    j["policy"] = policy_id_;
    j["method"] = mode_name(sim_.policy().embedding_mode);
    j["terrain"] = sim_.terrain();
    j["seed"] = sim_.seed();
    return j;
  }

  void publish_status() {
    events_.publish(nlohmann::json{{"type", "status"}, {"t", sim_.t()}, {"status", status_name(status_)}}.dump());
  }

  void journal(const nlohmann::json& rec) {
    journal_.push_back(rec.dump());
    if (journal_file_.is_open()) journal_file_ << journal_.back() << '\n' << std::flush;
  }

  void run(std::stop_token st) {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(1.0 / std::max(1e-3, config_.steps_per_second)));
    auto next = clock::now();
    bool was_running = false;
    while (!st.stop_requested()) {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return st.stop_requested() || status_ == SessionStatus::Running; });
      if (st.stop_requested()) break;
      if (!was_running) next = clock::now();
      was_running = true;

      const auto e = sim_.step();
      if (e.done || e.t % std::max(1, config_.decimation) == 0) {
        events_.publish(step_event_json(e, sim_.context(), sim_.description(), status_).dump());
      }
      if (e.done) {
        status_ = SessionStatus::Done;
        was_running = false;
        journal(nlohmann::json{{"type", "done"}, {"step", e.t}, {"reward_cumulative", e.reward_cumulative}});
        publish_status();
      }
      lock.unlock();

      if (turbo_) {
        while (waiters_.load() > 0) std::this_thread::yield();
      } else {
        next += period;
        std::unique_lock pace(mu_);
        cv_.wait_until(pace, next, [&] { return st.stop_requested() || status_ != SessionStatus::Running; });
        if (status_ != SessionStatus::Running) was_running = false;
      }
    }
  }

  std::string id_;
  std::string policy_id_;
  ServiceConfig config_;
  bool turbo_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::atomic<int> waiters_{0};
  SessionSim sim_;
  SessionStatus status_ = SessionStatus::Paused;
  std::uint64_t base_seed_ = 0;
  std::uint64_t episode_ = 0;
  std::vector<std::string> journal_;
  std::ofstream journal_file_;
  EventBuffer events_;
  std::jthread worker_;
};

/// Named policies available to sessions.
class PolicyRegistry {
 public:
  void add(const std::string& id, LinearPolicy p) {
    policies_[id] = std::make_shared<const LinearPolicy>(std::move(p));
  }

  /// Loads every *.json policy file in `dir`; the file stem is the id.
  static PolicyRegistry from_directory(const std::filesystem::path& dir) {
    PolicyRegistry r;
    if (!std::filesystem::is_directory(dir)) throw ConfigError("policy directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) r.add(f.stem().string(), load_policy(f));
    return r;
  }

  std::shared_ptr<const LinearPolicy> find(const std::string& id) const {
    auto it = policies_.find(id);
    return it == policies_.end() ? nullptr : it->second;
  }

  nlohmann::json list() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [id, p] : policies_) {
      out.push_back({{"id", id},
                     {"method", mode_name(p->embedding_mode)},
                     {"input_dim", p->input_dim()},
                     {"embedding_dim", p->embedding_dim},
                     {"hash", policy_hash(*p)}});
    }
    return out;
  }

  bool empty() const { return policies_.empty(); }

 private:
  std::map<std::string, std::shared_ptr<const LinearPolicy>> policies_;
};

/// In-memory session table plus the HTTP surface over it.
class SessionService {
 public:
  SessionService(PolicyRegistry policies, std::shared_ptr<Translator> translator, ServiceConfig config = {})
      : policies_(std::move(policies)), translator_(std::move(translator)), config_(std::move(config)) {
    if (!translator_) throw ArgumentError("session service needs a translator");
  }

  ~SessionService() { stop(); }

  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  nlohmann::json policies() const { return policies_.list(); }

  /// Body: {policy, description? | terrain? | levels?, seed?, turbo?, autostart?}.
  nlohmann::json create(const nlohmann::json& body) {
    const auto policy_id = body.at("policy").get<std::string>();
    auto policy = policies_.find(policy_id);
    if (!policy) throw ServiceError(404, "not_found", "unknown policy: " + policy_id);

    std::string description = body.value("description", std::string{});
    std::optional<PropertyLevels> levels;
    TerrainParams terrain = TerrainParams::nominal();
    if (!description.empty()) {
      levels = translate(description).levels;
      terrain = levels_to_params(*levels);
    } else if (body.contains("terrain")) {
      terrain = terrain_from_json(body.at("terrain"));
      levels = quantize(terrain);
    } else if (body.contains("levels")) {
      levels = body.at("levels").get<PropertyLevels>();
      terrain = levels_to_params(*levels);
    }

    ContextEmbedding z = no_context();
    switch (policy->embedding_mode) {
      case ContextMode::NoContext: break;
      case ContextMode::Indexing: z = index_embedding(0, policy->embedding_dim, false); break;
      case ContextMode::Embedding:
        z = embed(levels.value_or(quantize(terrain)), LinearPolicy::layout_for(policy->embedding_dim));
        break;
    }

    const auto id = new_id();
    auto session = std::make_shared<Session>(id, policy_id, policy, terrain, z, description,
                                             body.value("seed", std::uint64_t{0}), config_,
                                             body.value("turbo", config_.turbo));
    std::shared_ptr<Session> evicted;
    {
      std::lock_guard lock(mu_);
      if (sessions_.size() >= config_.max_sessions && !lru_.empty()) {
        evicted = sessions_.at(lru_.back());
        sessions_.erase(lru_.back());
        lru_.pop_back();
      }
      sessions_[id] = session;
      lru_.push_front(id);
    }
    if (evicted) evicted->shutdown();
    if (body.value("autostart", false)) session->control("resume");

    auto out = session->snapshot();
    if (levels) out["levels"] = *levels;
    return out;
  }

  nlohmann::json snapshot(const std::string& id) { return get(id)->snapshot(); }

  /// Body: {description, retarget_terrain?}.
  nlohmann::json apply_context(const std::string& id, const nlohmann::json& body) {
    auto s = get(id);
    const auto snap = s->snapshot();
    const auto policy = policies_.find(snap.at("policy").get<std::string>());
    if (policy->embedding_mode != ContextMode::Embedding) {
      throw ServiceError(409, "no_language_context", "policy consumes no language context");
    }
    const auto description = body.at("description").get<std::string>();
    const auto result = translate(description);
    const auto z = embed(result.levels, LinearPolicy::layout_for(policy->embedding_dim));
    auto ev = s->apply_context(z, description, result.levels, body.value("retarget_terrain", false));
    ev["backend"] = result.backend;
    ev["cached"] = result.cached;
    return ev;
  }

  nlohmann::json control(const std::string& id, const std::string& verb) {
    if (verb == "delete") {
      std::shared_ptr<Session> s;
      {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown session: " + id);
        s = it->second;
        sessions_.erase(it);
        lru_.remove(id);
      }
      s->shutdown();
      return nlohmann::json{{"id", id}, {"status", "deleted"}};
    }
    return get(id)->control(verb);
  }

  std::vector<std::string> journal(const std::string& id) { return get(id)->journal_lines(); }

  std::shared_ptr<Session> get(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown session: " + id);
    lru_.remove(id);
    lru_.push_front(id);
    return it->second;
  }

  std::size_t session_count() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

  /// Registers the API routes (and the static mount) on `server`.
  void mount(httplib::Server& server) {
    server.Get("/v1/policies", [this](const httplib::Request&, httplib::Response& res) {
      handle(res, [&] { send(res, 200, policies()); });
    });
    server.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { send(res, 201, create(parse_body(req))); });
    });
    server.Get(R"(/v1/sessions/([A-Za-z0-9]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { send(res, 200, snapshot(req.matches[1])); });
    });
    server.Post(R"(/v1/sessions/([A-Za-z0-9]+)/context)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle(res, [&] { send(res, 200, apply_context(req.matches[1], parse_body(req))); });
                });
    server.Post(R"(/v1/sessions/([A-Za-z0-9]+)/control)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle(res, [&] {
                    send(res, 200, control(req.matches[1], parse_body(req).at("verb").get<std::string>()));
                  });
                });
    server.Get(R"(/v1/sessions/([A-Za-z0-9]+)/journal)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle(res, [&] {
                   std::string body;
                   for (const auto& l : journal(req.matches[1])) body += l + '\n';
                   res.set_content(body, "application/x-ndjson");
                 });
               });
    server.Get(R"(/v1/sessions/([A-Za-z0-9]+)/events)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle(res, [&] { stream(req, res); });
               });
    if (!config_.static_dir.empty() && std::filesystem::is_directory(config_.static_dir)) {
      server.set_mount_point("/", config_.static_dir.string());
    }
  }

  /// Binds and serves until stop(). Returns false if the address is unavailable.
  bool listen(const std::string& host, int port) {
    {
      std::lock_guard lock(server_mu_);
      server_ = std::make_unique<httplib::Server>();
      server_->new_task_queue = [] { return new httplib::ThreadPool(32); };
      mount(*server_);
    }
    return server_->listen(host, port);
  }

  /// Binds to an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1") {
    std::lock_guard lock(server_mu_);
    server_ = std::make_unique<httplib::Server>();
    server_->new_task_queue = [] { return new httplib::ThreadPool(32); };
    mount(*server_);
    const int port = server_->bind_to_any_port(host);
    if (port < 0) throw IoError("cannot bind session service on " + host);
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
  }

  void stop() {
    std::vector<std::shared_ptr<Session>> all;
    {
      std::lock_guard lock(mu_);
      for (auto& [id, s] : sessions_) all.push_back(s);
      sessions_.clear();
      lru_.clear();
    }
    for (auto& s : all) s->shutdown();
    std::lock_guard lock(server_mu_);
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
  }

 private:
  TranslationResult translate(const std::string& description) {
    std::lock_guard lock(translate_mu_);
    return translator_->translate(description);
  }

  std::string new_id() {
    std::lock_guard lock(mu_);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id_rng_()));
    return buf;
  }

  void stream(const httplib::Request& req, httplib::Response& res) {
    auto session = get(req.matches[1]);
    auto snap = session->snapshot();
    snap["type"] = "snapshot";
    auto after = std::make_shared<std::uint64_t>(session->events().last_seq());
    std::weak_ptr<Session> weak = session;
    const auto heartbeat = config_.heartbeat;
    auto first = std::make_shared<std::string>("data: " + snap.dump() + "\n\n");
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream", [weak, after, heartbeat, first](std::size_t, httplib::DataSink& sink) {
          if (!first->empty()) {
            if (!sink.write(first->data(), first->size())) return false;
            first->clear();
          }
          auto s = weak.lock();
          if (!s) {
            sink.done();
            return true;
          }
          std::vector<std::string> batch;
          const bool more = s->events().wait(*after, heartbeat, batch);
          s.reset();
          if (batch.empty() && more) {
            static constexpr char kBeat[] = ": heartbeat\n\n";
            return sink.write(kBeat, sizeof kBeat - 1);
          }
          for (const auto& e : batch) {
            const std::string frame = "data: " + e + "\n\n";
            if (!sink.write(frame.data(), frame.size())) return false;
          }
          if (!more) sink.done();
          return true;
        });
  }

  static nlohmann::json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    return nlohmann::json::parse(req.body);
  }

  static void send(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
    send(res, status, nlohmann::json{{"code", code}, {"message", msg}});
  }

  template <typename Fn>
  static void handle(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const ArgumentError& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const ParseError& e) {
      send_error(res, 422, "translation_failed", e.what());
    } catch (const TranslationError& e) {
      send_error(res, 422, "translation_failed", e.what());
    } catch (const BackendError& e) {
      send_error(res, 502, "backend_unavailable", e.what());
    } catch (const StateError& e) {
      send_error(res, 409, "invalid_transition", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  }

  PolicyRegistry policies_;
  std::shared_ptr<Translator> translator_;
  ServiceConfig config_;
  mutable std::mutex mu_;
  std::mutex translate_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::list<std::string> lru_;
  std::mt19937_64 id_rng_{std::random_device{}()};
  std::mutex server_mu_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
};

}  // namespace ctxloco
