#pragma once

#include <chrono>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#ifdef _res
#undef _res  // leaked by <resolv.h> via httplib; breaks unrelated parameter names
#endif
#include <json.hpp>

#include "saelab/common.hpp"

namespace saelab {

struct LlmError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

// OpenAI-compatible chat endpoint. The key is read from the named environment
// variable at request time; absent means no auth header (local servers).
struct LlmEndpointConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model = "mock";
  std::string api_key_env = "SAELAB_API_KEY";
  double timeout_seconds = 60.0;
  int max_concurrent = 1;
  double temperature = 0.0;

  void validate() const {
    require(timeout_seconds > 0, "llm endpoint: timeout must be positive");
    require(max_concurrent > 0, "llm endpoint: max_concurrent must be positive");
  }
};

struct LlmExchange {
  std::string request;   // JSON body, or a synthetic record for mock clients
  std::string response;  // raw body, or the error text on failure
};

// Completion interface; every request/response pair lands in the transcript so
// runs can be audited.
class LlmClient {
 public:
  virtual ~LlmClient() = default;

  std::string complete(const std::vector<ChatMessage>& messages) {
    nlohmann::json req;
    for (const ChatMessage& m : messages)
      req["messages"].push_back({{"role", m.role}, {"content", m.content}});
    try {
      const std::string out = do_complete(messages);
      transcript_.push_back({req.dump(), out});
      return out;
    } catch (const std::exception& e) {
      transcript_.push_back({req.dump(), std::string("ERROR: ") + e.what()});
      throw;
    }
  }

  const std::vector<LlmExchange>& transcript() const { return transcript_; }

 private:
  virtual std::string do_complete(const std::vector<ChatMessage>& messages) = 0;

  std::vector<LlmExchange> transcript_;
};

// Always answers with one fixed string.
class FixedLlmClient : public LlmClient {
 public:
  explicit FixedLlmClient(std::string reply) : reply_(std::move(reply)) {}

 private:
  std::string do_complete(const std::vector<ChatMessage>&) override { return reply_; }

  std::string reply_;
};

// Answers via a user-supplied function; for tests and offline scoring.
class CallbackLlmClient : public LlmClient {
 public:
  using Fn = std::function<std::string(const std::vector<ChatMessage>&)>;
  explicit CallbackLlmClient(Fn fn) : fn_(std::move(fn)) {}

 private:
  std::string do_complete(const std::vector<ChatMessage>& messages) override {
    return fn_(messages);
  }

  Fn fn_;
};

// HTTP client for /chat/completions. Transport errors and bad statuses are
// retried with exponential backoff (3 attempts total); a well-formed reply
// missing the content field fails immediately — retrying cannot fix it.
class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(LlmEndpointConfig config, double backoff_seconds = 1.0)
      : cfg_(std::move(config)), backoff_seconds_(backoff_seconds) {
    cfg_.validate();
    const size_t scheme = cfg_.base_url.find("://");
    require(scheme != std::string::npos, "llm endpoint: base_url needs a scheme");
    const size_t slash = cfg_.base_url.find('/', scheme + 3);
    host_ = cfg_.base_url.substr(0, slash);
    path_ = slash == std::string::npos ? "" : cfg_.base_url.substr(slash);
    const std::string suffix = "/chat/completions";
    if (path_.size() < suffix.size() ||
        path_.compare(path_.size() - suffix.size(), suffix.size(), suffix) != 0)
      path_ += suffix;
  }

 private:
  std::string do_complete(const std::vector<ChatMessage>& messages) override {
    nlohmann::json body;
    body["model"] = cfg_.model;
    body["temperature"] = cfg_.temperature;
    body["messages"] = nlohmann::json::array();
    for (const ChatMessage& m : messages)
      body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    const std::string payload = body.dump();

    httplib::Client cli(host_);
    const auto timeout = std::chrono::duration<double>(cfg_.timeout_seconds);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(timeout));
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    std::string last_error;
    for (int attempt = 0; attempt < 3; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(std::chrono::duration<double>(
            backoff_seconds_ * static_cast<double>(1 << (attempt - 1))));
      httplib::Result res = cli.Post(path_, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "http status " + std::to_string(res->status);
        continue;
      }
      nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
      if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty() ||
          !reply["choices"][0].contains("message") ||
          !reply["choices"][0]["message"].contains("content") ||
          !reply["choices"][0]["message"]["content"].is_string())
        throw LlmError("malformed completion reply");
      return reply["choices"][0]["message"]["content"].get<std::string>();
    }
    throw LlmError("request failed after 3 attempts: " + last_error);
  }

  LlmEndpointConfig cfg_;
  double backoff_seconds_;
  std::string host_;
  std::string path_;
};

}  // namespace saelab
