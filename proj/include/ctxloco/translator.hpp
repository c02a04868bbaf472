#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ctxloco/embedding.hpp"
#include "ctxloco/errors.hpp"
#include "ctxloco/mock_oracle.hpp"
#include "ctxloco/terrain.hpp"

namespace ctxloco {

struct IclExample {
  std::string description;
  PropertyLevels answers;
};

/// Six low-level examples covering the extreme and middle levels.
inline std::vector<IclExample> default_icl_examples() {
  using L = PropertyLevel;
  const std::vector<PropertyLevels> picks{
      {L::VeryLow, L::Low, L::VeryHigh, L::VeryLow},
      {L::VeryHigh, L::VeryHigh, L::VeryHigh, L::VeryHigh},
      {L::Medium, L::Medium, L::Medium, L::Medium},
      {L::VeryLow, L::VeryLow, L::VeryLow, L::VeryLow},
      {L::High, L::Medium, L::Low, L::VeryHigh},
      {L::Low, L::VeryHigh, L::High, L::Medium},
  };
  std::vector<IclExample> out;
  out.reserve(picks.size());
  for (const auto& l : picks) out.push_back({describe_low_level(l), l});
  return out;
}

/// One property=LEVEL line per property, in block order.
inline std::string render_answers(const PropertyLevels& l) {
  std::string s;
  for (auto p : kAllProperties) {
    s += property_name(p);
    s += '=';
    s += level_token(l[p]);
    s += '\n';
  }
  return s;
}

/// The five prompt sections, rendered in declaration order.
struct TranslatorPrompt {
  std::string task_instruction;
  std::string property_definitions;
  std::vector<IclExample> icl_examples;
  std::string input_description;
  std::string output_format;

  std::string render() const {
    std::ostringstream os;
    os << "### 1. Task\n" << task_instruction << "\n\n";
    os << "### 2. Terrain properties\n" << property_definitions << "\n\n";
    os << "### 3. Examples\n";
    int n = 1;
    for (const auto& ex : icl_examples) {
      os << "Example " << n++ << "\nDescription: " << ex.description << '\n';
      int q = 1;
      for (auto p : kAllProperties) {
        os << "Q" << q++ << ". What is the " << property_name(p) << " level of this terrain?\n"
           << "(A) very low (B) low (C) medium (D) high (E) very high\n"
           << "Answer: (" << static_cast<char>('A' + ordinal(ex.answers[p])) << ") "
           << level_words(ex.answers[p]) << '\n';
      }
      os << "Output:\n" << render_answers(ex.answers) << '\n';
    }
    os << "### 4. Input\nDescription: " << input_description << "\n\n";
    os << "### 5. Output\n" << output_format << '\n';
    return os.str();
  }
};

inline TranslatorPrompt build_prompt(std::string_view description,
                                     const std::vector<IclExample>& examples) {
  if (description.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw ArgumentError("description must not be empty");
  }
  TranslatorPrompt p;
  p.task_instruction =
      "A human observer describes the ground a four-legged robot is walking on. Estimate the "
      "level of each terrain property below by answering one multiple-choice question per "
      "property. Use commonsense knowledge about surfaces and weather when the description does "
      "not name a property directly.";
  p.property_definitions =
      "- restitution: how much vertical speed the body keeps after hitting the ground "
      "(bounciness). Rubber running tracks bounce; sand and mud do not.\n"
      "- friction: lateral grip between the feet and the ground. Ice and wet surfaces are "
      "slippery; dry concrete and rubber grip well.\n"
      "- stiffness: how hard the ground is. Rock and concrete are stiff; sand and grass sink.\n"
      "- damping: how quickly the ground absorbs motion. Sand, mud and wet soil absorb a lot; "
      "hard dry surfaces absorb little.\n"
      "Each property has five levels: very low, low, medium, high, very high.";
  p.icl_examples = examples;
  p.input_description = std::string(description);
  p.output_format =
      "Answer the four questions for the input description. Reply with exactly four lines of the "
      "form property=LEVEL, where property is one of restitution, friction, stiffness, damping "
      "and LEVEL is one of VERY_LOW, LOW, MEDIUM, HIGH, VERY_HIGH. Use MEDIUM for a property the "
      "description gives no information about.";
  return p;
}

/// Scans for property=LEVEL lines; surrounding text is ignored and later
/// duplicates override earlier ones.
inline PropertyLevels parse_response(std::string_view text) {
  static const std::regex line_re(
      R"((?:^|[^A-Za-z_])(restitution|friction|stiffness|damping)[ \t]*=[ \t]*(very_low|very_high|low|medium|high)(?![A-Za-z_]))",
      std::regex::icase | std::regex::ECMAScript);
  std::array<std::optional<PropertyLevel>, kNumProperties> found{};
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), line_re); it != std::sregex_iterator();
       ++it) {
    std::string word = (*it)[1].str();
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const auto prop = detail::property_word(word);
    const auto level = parse_level_token((*it)[2].str());
    if (prop && level) found[static_cast<int>(*prop)] = *level;
  }
  std::string missing;
  PropertyLevels out;
  for (auto p : kAllProperties) {
    if (!found[static_cast<int>(p)]) {
      if (!missing.empty()) missing += ", ";
      missing += property_name(p);
    } else {
      out[p] = *found[static_cast<int>(p)];
    }
  }
  if (!missing.empty()) throw ParseError("response is missing answers for: " + missing);
  return out;
}

/// Chat-completion endpoint settings.
struct BackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_name = "gpt-4";
  std::string api_key_env_var = "OPENAI_API_KEY";
  int timeout_ms = 30000;
  int max_retries = 2;
  double temperature = 0.0;

  void validate() const {
    if (timeout_ms <= 0) throw ConfigError("translator timeout_ms must be positive");
    if (max_retries < 0) throw ConfigError("translator max_retries must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const BackendConfig& c) {
  j = nlohmann::json{{"base_url", c.base_url},       {"model_name", c.model_name},
                     {"api_key_env_var", c.api_key_env_var}, {"timeout_ms", c.timeout_ms},
                     {"max_retries", c.max_retries}, {"temperature", c.temperature}};
}

inline void from_json(const nlohmann::json& j, BackendConfig& c) {
  c.base_url = j.value("base_url", c.base_url);
  c.model_name = j.value("model_name", c.model_name);
  c.api_key_env_var = j.value("api_key_env_var", c.api_key_env_var);
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.temperature = j.value("temperature", c.temperature);
}

/// Something that answers a rendered translator prompt.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Throws BackendError on transport failure.
  virtual std::string complete(const TranslatorPrompt& prompt) = 0;
  /// Stable identifier, part of the cache key.
  virtual std::string identity() const = 0;
};

/// Offline stand-in for an LLM: answers with the rule oracle's levels.
class MockOracleBackend : public ChatBackend {
 public:
  std::string complete(const TranslatorPrompt& prompt) override {
    return render_answers(mock_translate(prompt.input_description));
  }
  std::string identity() const override { return "mock"; }
};

struct TranslationResult {
  PropertyLevels levels;
  std::string raw_response;
  std::string backend;
  double latency_ms = 0.0;
  bool cached = false;
};

/// Lowercase, whitespace-collapsed, trimmed.
inline std::string normalize_description(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

/// 64-bit FNV-1a as 16 hex digits.
inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Thread-safe translation cache, optionally persisted as a JSON object
/// mapping key hash to levels.
class TranslationCache {
 public:
  TranslationCache() = default;

  explicit TranslationCache(std::filesystem::path file) : file_(std::move(file)) {
    std::ifstream in(*file_);
    if (!in) return;
    try {
      const auto j = nlohmann::json::parse(in);
      for (const auto& [k, v] : j.items()) entries_[k] = v.get<PropertyLevels>();
    } catch (const std::exception& e) {
      throw IoError("corrupt translation cache " + file_->string() + ": " + e.what());
    }
  }

  static std::string key(std::string_view backend, std::string_view description) {
    std::string material(backend);
    material += '\n';
    material += normalize_description(description);
    return fnv1a_hex(material);
  }

  std::optional<PropertyLevels> get(const std::string& k) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(k);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& k, const PropertyLevels& levels) {
    std::lock_guard lock(mu_);
    entries_[k] = levels;
    if (file_) flush_locked();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  void flush_locked() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : entries_) j[k] = v;
    const auto tmp = file_->string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw IoError("cannot write translation cache " + tmp);
      out << j.dump(2) << '\n';
    }
    std::error_code ec;
    std::filesystem::rename(tmp, *file_, ec);
    if (ec) throw IoError("cannot replace translation cache " + file_->string() + ": " + ec.message());
  }

  std::optional<std::filesystem::path> file_;
  mutable std::mutex mu_;
  std::map<std::string, PropertyLevels> entries_;
};

/// Description -> prompt -> backend -> parsed levels, with retries and caching.
class Translator {
 public:
  explicit Translator(std::shared_ptr<ChatBackend> backend,
                      std::shared_ptr<TranslationCache> cache = std::make_shared<TranslationCache>(),
                      int max_retries = 2, std::vector<IclExample> examples = default_icl_examples())
      : backend_(std::move(backend)),
        cache_(std::move(cache)),
        max_retries_(max_retries),
        examples_(std::move(examples)) {
    if (!backend_) throw ArgumentError("translator needs a backend");
    if (max_retries_ < 0) throw ConfigError("max_retries must be non-negative");
  }

  /// Appends every backend reply, verbatim, to a JSON-lines file.
  void set_audit_log(std::filesystem::path path) {
    std::lock_guard lock(audit_mu_);
    audit_path_ = std::move(path);
  }

  TranslationResult translate(std::string_view description) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto prompt = build_prompt(description, examples_);
    const auto id = backend_->identity();
    const auto k = TranslationCache::key(id, description);

    if (auto hit = cache_->get(k)) {
      return TranslationResult{*hit, render_answers(*hit), id, elapsed_ms(t0), true};
    }

    std::string last_error;
    bool last_was_transport = false;
    for (int attempt = 0; attempt <= max_retries_; ++attempt) {
      std::string reply;
      try {
        ++backend_calls_;
        reply = backend_->complete(prompt);
      } catch (const BackendError& e) {
        last_error = e.what();
        last_was_transport = true;
        continue;
      }
      audit(description, reply);
      try {
        const auto levels = parse_response(reply);
        cache_->put(k, levels);
        return TranslationResult{levels, reply, id, elapsed_ms(t0), false};
      } catch (const ParseError& e) {
        last_error = e.what();
        last_was_transport = false;
      }
    }
    if (last_was_transport) throw BackendError("backend failed after retries: " + last_error);
    throw TranslationError("unparseable backend reply after retries: " + last_error);
  }

  const std::string backend_identity() const { return backend_->identity(); }
  /// Number of backend invocations so far (cache hits excluded).
  long backend_calls() const { return backend_calls_.load(); }
  const std::vector<IclExample>& examples() const { return examples_; }

 private:
  static double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }

  void audit(std::string_view description, const std::string& reply) {
    std::lock_guard lock(audit_mu_);
    if (!audit_path_) return;
    std::ofstream out(*audit_path_, std::ios::app);
    out << nlohmann::json{{"backend", backend_->identity()},
                          {"description", std::string(description)},
                          {"response", reply}}
               .dump()
        << '\n';
  }

  std::shared_ptr<ChatBackend> backend_;
  std::shared_ptr<TranslationCache> cache_;
  int max_retries_;
  std::vector<IclExample> examples_;
  std::atomic<long> backend_calls_{0};
  std::mutex audit_mu_;
  std::optional<std::filesystem::path> audit_path_;
};

}  // namespace ctxloco
