#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "ctxloco/llm_backend.hpp"
#include "ctxloco/translator.hpp"

using namespace ctxloco;
using L = PropertyLevel;

namespace {

// Replies with a scripted sequence, then repeats the last entry.
class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const TranslatorPrompt&) override {
    const auto& r = replies_[std::min(calls_++, replies_.size() - 1)];
    if (r == "!transport") throw BackendError("connection refused");
    return r;
  }
  std::string identity() const override { return "scripted"; }
  std::size_t calls() const { return calls_; }

 private:
  std::vector<std::string> replies_;
  std::size_t calls_ = 0;
};

// Renders the rule oracle's answer, with the same identity as the mock backend.
class OracleEchoBackend : public ChatBackend {
 public:
  std::string complete(const TranslatorPrompt& p) override {
    return "Sure.\n" + render_answers(mock_translate(p.input_description)) + "Done.";
  }
  std::string identity() const override { return "mock"; }
};

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ctxloco_tests";
  std::filesystem::create_directories(dir);
  auto p = dir / name;
  std::filesystem::remove(p);
  return p;
}

}  // namespace

TEST(MockTranslate, LowLevelCases) {
  EXPECT_EQ(mock_translate("This environment has no restitution when collision, very high friction, and no damping."),
            (PropertyLevels{L::VeryLow, L::VeryHigh, L::Medium, L::VeryLow}));
  EXPECT_EQ(mock_translate("This environment has medium restitution when collision, low friction, and very high "
                           "damping."),
            (PropertyLevels{L::Medium, L::Low, L::Medium, L::VeryHigh}));
}

TEST(MockTranslate, HighLevelCases) {
  const auto g = mock_translate("The spot is walking on a mountain road covered by ice. It's snowy now.");
  EXPECT_EQ(g.friction, L::VeryLow);
  const auto h = mock_translate("The spot is walking on the beach near the sea under the sun.");
  EXPECT_EQ(h.stiffness, L::VeryLow);
  EXPECT_EQ(h.damping, L::VeryHigh);
  EXPECT_EQ(h.friction, L::High);
  const auto f = mock_translate("The spot is walking on a grassland under a drizzle.");
  EXPECT_EQ(f, (PropertyLevels{L::Medium, L::Low, L::Low, L::High}));
  const auto rain = mock_translate("You are entering a grassland right after the rain");
  EXPECT_EQ(rain, (PropertyLevels{L::Medium, L::Low, L::Low, L::High}));
}

TEST(MockTranslate, DefaultsAndExplicitOverride) {
  EXPECT_EQ(mock_translate("..."), PropertyLevels{});
  EXPECT_EQ(mock_translate(""), PropertyLevels{});
  // Explicit phrases beat nouns and weather.
  EXPECT_EQ(mock_translate("icy road with very high friction").friction, L::VeryHigh);
  // Weather shifts saturate.
  EXPECT_EQ(mock_translate("wet sand").damping, L::VeryHigh);
  EXPECT_EQ(mock_translate("dry running track").friction, L::VeryHigh);
}

TEST(ParseResponse, GrammarInstance) {
  EXPECT_EQ(parse_response("friction=VERY_LOW\nrestitution=LOW\nstiffness=MEDIUM\ndamping=HIGH"),
            (PropertyLevels{L::Low, L::VeryLow, L::Medium, L::High}));
  EXPECT_EQ(parse_response("Friction = very_high\nRESTITUTION=low\nstiffness=high\ndamping=medium"),
            (PropertyLevels{L::Low, L::VeryHigh, L::High, L::Medium}));
}

TEST(ParseResponse, MissingPropertiesAreNamed) {
  try {
    parse_response("friction=LOW\nrestitution=LOW\nstiffness=LOW");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("damping"), std::string::npos);
  }
  try {
    parse_response("nothing useful");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    for (auto p : kAllProperties) EXPECT_NE(msg.find(property_name(p)), std::string::npos);
  }
}

TEST(ParseResponse, LaterDuplicatesWin) {
  EXPECT_EQ(parse_response("friction=LOW\nrestitution=LOW\nstiffness=LOW\ndamping=LOW\nfriction=HIGH").friction,
            L::High);
}

TEST(ParseResponse, RejectsNearMisses) {
  EXPECT_THROW(parse_response("friction=LOWISH\nrestitution=LOW\nstiffness=LOW\ndamping=LOW"), ParseError);
  EXPECT_THROW(parse_response("xfriction=LOW\nrestitution=LOW\nstiffness=LOW\ndamping=LOW"), ParseError);
}

TEST(ParseResponse, FuzzCorpusWithChatter) {
  const std::vector<std::string> chatter{
      "Here are my answers:",
      "Based on the description, the ground is probably soft.",
      "Q1: (B)",
      "I think the restitution is not important here",
      "Note: friction matters most.",
      "```",
      "",
      "Let me know if you need anything else!",
  };
  Rng rng(11);
  int n = 0;
  for_each_levels([&](const PropertyLevels& l) {
    if (++n % 5 != 0) return;
    std::string text;
    for (auto p : kAllProperties) {
      text += chatter[rng.next_u64() % chatter.size()] + "\n";
      text += std::string(property_name(p)) + "=" + std::string(level_token(l[p])) + "\n";
    }
    text += chatter[rng.next_u64() % chatter.size()];
    ASSERT_EQ(parse_response(text), l) << text;
  });
}

TEST(ParseResponse, InvertsRenderExhaustively) {
  for_each_levels([](const PropertyLevels& l) { ASSERT_EQ(parse_response(render_answers(l)), l); });
}

TEST(Prompt, FiveSectionsInOrder) {
  const auto case_a = "This environment has no restitution when collision, very high friction, and no damping.";
  const auto all = default_icl_examples();
  std::vector<IclExample> two(all.begin(), all.begin() + 2);
  const auto text = build_prompt(case_a, two).render();
  std::size_t last = 0;
  bool first = true;
  for (const char* header : {"### 1.", "### 2.", "### 3.", "### 4.", "### 5."}) {
    const auto pos = text.find(header);
    ASSERT_NE(pos, std::string::npos) << header;
    if (!first) {
      EXPECT_GT(pos, last);
    }
    first = false;
    last = pos;
  }
  std::size_t questions = 0;
  for (auto pos = text.find("\nQ"); pos != std::string::npos; pos = text.find("\nQ", pos + 1)) ++questions;
  EXPECT_EQ(questions, 8u);
  EXPECT_NE(text.find("property=LEVEL"), std::string::npos);
  EXPECT_NE(text.find("VERY_HIGH"), std::string::npos);
  EXPECT_NE(text.find(case_a), std::string::npos);
  EXPECT_EQ(text, build_prompt(case_a, two).render());
}

TEST(Prompt, EmptyDescriptionRejected) {
  EXPECT_THROW(build_prompt("", default_icl_examples()), ArgumentError);
  EXPECT_THROW(build_prompt(" \n\t", default_icl_examples()), ArgumentError);
}

TEST(Prompt, DefaultExamplesAreConsistent) {
  const auto ex = default_icl_examples();
  EXPECT_EQ(ex.size(), 6u);
  for (const auto& e : ex) EXPECT_EQ(mock_translate(e.description), e.answers);
}

TEST(Translator, CachesByNormalizedDescription) {
  Translator t(std::make_shared<MockOracleBackend>());
  const auto first = t.translate("The spot is walking on a grassland under a drizzle.");
  EXPECT_FALSE(first.cached);
  EXPECT_EQ(first.backend, "mock");
  const auto second = t.translate("  the spot is walking on a GRASSLAND   under a drizzle. ");
  EXPECT_TRUE(second.cached);
  EXPECT_EQ(second.levels, first.levels);
  EXPECT_EQ(t.backend_calls(), 1);
  EXPECT_EQ(parse_response(first.raw_response), first.levels);
}

TEST(Translator, CacheKeyDependsOnBackend) {
  EXPECT_NE(TranslationCache::key("mock", "x"), TranslationCache::key("llm:a#b", "x"));
  EXPECT_EQ(TranslationCache::key("mock", "A  b"), TranslationCache::key("mock", "a b"));
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Translator, PersistentCache) {
  const auto file = temp_path("cache.json");
  {
    Translator t(std::make_shared<MockOracleBackend>(), std::make_shared<TranslationCache>(file));
    t.translate("icy road");
  }
  ASSERT_TRUE(std::filesystem::exists(file));
  Translator again(std::make_shared<MockOracleBackend>(), std::make_shared<TranslationCache>(file));
  const auto r = again.translate("Icy  road");
  EXPECT_TRUE(r.cached);
  EXPECT_EQ(r.levels.friction, L::VeryLow);
  EXPECT_EQ(again.backend_calls(), 0);
}

TEST(Translator, CorruptCacheFileIsAnIoError) {
  const auto file = temp_path("corrupt.json");
  std::ofstream(file) << "{not json";
  EXPECT_THROW(TranslationCache{file}, IoError);
}

TEST(Translator, RetriesParseFailuresThenSucceeds) {
  auto backend = std::make_shared<ScriptedBackend>(
      std::vector<std::string>{"I am not sure.", render_answers({L::Low, L::Low, L::Low, L::Low})});
  Translator t(backend, std::make_shared<TranslationCache>(), 2);
  const auto r = t.translate("somewhere");
  EXPECT_EQ(r.levels, (PropertyLevels{L::Low, L::Low, L::Low, L::Low}));
  EXPECT_EQ(backend->calls(), 2u);
}

TEST(Translator, PersistentParseFailureIsTranslationError) {
  auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{"no idea"});
  Translator t(backend, std::make_shared<TranslationCache>(), 2);
  EXPECT_THROW(t.translate("somewhere"), TranslationError);
  EXPECT_EQ(backend->calls(), 3u);
}

TEST(Translator, PersistentTransportFailureIsBackendError) {
  auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{"!transport"});
  Translator t(backend, std::make_shared<TranslationCache>(), 1);
  EXPECT_THROW(t.translate("somewhere"), BackendError);
  EXPECT_EQ(backend->calls(), 2u);
}

TEST(Translator, InjectedBackendMatchesMockPath) {
  Translator mock(std::make_shared<MockOracleBackend>());
  Translator echo(std::make_shared<OracleEchoBackend>());
  for (const char* d : {"The spot is walking on the beach near the sea under the sun.",
                        "This environment has high restitution when collision, very high friction, and low "
                        "stiffness.",
                        "You are walking on a dry rocky road under the sun."}) {
    const auto a = mock.translate(d);
    const auto b = echo.translate(d);
    EXPECT_EQ(a.levels, b.levels);
    EXPECT_EQ(a.backend, b.backend);
    EXPECT_EQ(a.cached, b.cached);
  }
}

TEST(Translator, AuditLogRecordsReplies) {
  const auto log = temp_path("audit.jsonl");
  Translator t(std::make_shared<MockOracleBackend>());
  t.set_audit_log(log);
  t.translate("icy road");
  t.translate("icy road");
  std::ifstream in(log);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_EQ(nlohmann::json::parse(line).at("description"), "icy road");
  }
  EXPECT_EQ(n, 1);
}

TEST(ChatCompletion, MissingKeyFailsFast) {
  BackendConfig cfg;
  cfg.api_key_env_var = "CTXLOCO_TEST_UNSET_KEY";
  ::unsetenv("CTXLOCO_TEST_UNSET_KEY");
  ChatCompletionBackend backend(cfg);
  EXPECT_THROW(backend.check_credentials(), BackendError);
  EXPECT_THROW(backend.complete(build_prompt("x", {})), BackendError);
}

TEST(ChatCompletion, ConfigValidation) {
  BackendConfig cfg;
  cfg.timeout_ms = 0;
  EXPECT_THROW(ChatCompletionBackend{cfg}, ConfigError);
  cfg = BackendConfig{};
  cfg.max_retries = -1;
  EXPECT_THROW(ChatCompletionBackend{cfg}, ConfigError);
  cfg = BackendConfig{};
  cfg.base_url = "localhost:8080";
  EXPECT_THROW(ChatCompletionBackend{cfg}, ConfigError);
}

TEST(ChatCompletion, TalksToLocalServer) {
  httplib::Server server;
  nlohmann::json seen;
  std::string auth;
  int calls = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    seen = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    const auto prompt = seen.at("messages").at(0).at("content").get<std::string>();
    const auto start = prompt.find("### 4. Input\nDescription: ") + 26;
    const auto desc = prompt.substr(start, prompt.find('\n', start) - start);
    const nlohmann::json reply{
        {"choices", {{{"message", {{"role", "assistant"}, {"content", render_answers(mock_translate(desc))}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("CTXLOCO_TEST_KEY", "sk-test", 1);
  BackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
  cfg.model_name = "test-model";
  cfg.api_key_env_var = "CTXLOCO_TEST_KEY";
  cfg.timeout_ms = 5000;
  Translator t(std::make_shared<ChatCompletionBackend>(cfg));
  const auto r = t.translate("The spot is walking on a mountain road covered by ice. It's snowy now.");
  EXPECT_EQ(r.levels, mock_translate("The spot is walking on a mountain road covered by ice. It's snowy now."));
  EXPECT_EQ(seen.at("model"), "test-model");
  EXPECT_EQ(seen.at("temperature"), 0.0);
  EXPECT_EQ(seen.at("messages").size(), 1u);
  EXPECT_EQ(seen.at("messages").at(0).at("role"), "user");
  EXPECT_EQ(auth, "Bearer sk-test");
  EXPECT_EQ(r.backend, "llm:" + cfg.base_url + "#test-model");
  EXPECT_TRUE(t.translate("The spot is walking on a mountain road covered by ice. It's snowy now.").cached);
  EXPECT_EQ(calls, 1);

  server.stop();
  th.join();
}

TEST(ChatCompletion, UnreachableServerIsBackendError) {
  ::setenv("CTXLOCO_TEST_KEY", "sk-test", 1);
  BackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.api_key_env_var = "CTXLOCO_TEST_KEY";
  cfg.timeout_ms = 500;
  cfg.max_retries = 1;
  Translator t(std::make_shared<ChatCompletionBackend>(cfg), std::make_shared<TranslationCache>(), 1);
  EXPECT_THROW(t.translate("icy road"), BackendError);
}
