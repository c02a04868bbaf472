#pragma once

#include <cstdlib>
#include <string>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that clashes
// with Eigen parameter names.
#include <Eigen/Dense>

#include "httplib.h"
#include "json.hpp"

#include "ctxloco/errors.hpp"
#include "ctxloco/translator.hpp"

namespace ctxloco {

/// OpenAI-compatible chat-completion backend: POST <base_url>/chat/completions
/// with a single user message, reading choices[0].message.content.
class ChatCompletionBackend : public ChatBackend {
 public:
  explicit ChatCompletionBackend(BackendConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + config_.base_url);
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    origin_ = config_.base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  /// Fails fast when the configured key variable is unset.
  void check_credentials() const { (void)api_key(); }

  std::string complete(const TranslatorPrompt& prompt) override {
    const std::string key = api_key();
    httplib::Client client(origin_);
    const auto secs = config_.timeout_ms / 1000;
    const auto usecs = (config_.timeout_ms % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);

    const nlohmann::json body{
        {"model", config_.model_name},
        {"temperature", config_.temperature},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt.render()}}})}};

    auto res = client.Post(prefix_ + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw BackendError("request to " + origin_ + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      throw BackendError("chat completion returned HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 200));
    }
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
      throw BackendError(std::string("malformed chat completion body: ") + e.what());
    }
  }

  std::string identity() const override { return "llm:" + config_.base_url + "#" + config_.model_name; }

  const BackendConfig& config() const { return config_; }

 private:
  std::string api_key() const {
    if (config_.api_key_env_var.empty()) return {};
    const char* v = std::getenv(config_.api_key_env_var.c_str());
    if (v == nullptr || *v == '\0') {
      throw BackendError("environment variable " + config_.api_key_env_var + " is not set");
    }
    return v;
  }

  BackendConfig config_;
  std::string origin_;
  std::string prefix_;
};

}  // namespace ctxloco
