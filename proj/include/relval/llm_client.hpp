#pragma once

// Single-turn chat-completion client for OpenAI-style endpoints.

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace relval {

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  std::chrono::milliseconds max_delay{30000};
  double multiplier = 2.0;

  std::chrono::milliseconds delay_before(int attempt) const;  // attempt >= 2
};

struct EndpointConfig {
  std::string name;
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string model;
  std::string auth_env;  // environment variable holding the bearer token; empty = no auth
  double temperature = 0.0;
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  double requests_per_second = 1.0;

  // Throws ConfigError; temperature must be exactly 0.
  void validate() const;
};

// Token bucket with capacity `burst`, refilled at `rate` tokens per second.
class RateLimiter {
 public:
  explicit RateLimiter(double rate, double burst = 1.0);
  void acquire();

 private:
  std::mutex mutex_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct AgentReply {
  std::string raw;
  std::chrono::milliseconds latency{0};
  std::optional<TokenUsage> usage;
  int attempts = 1;
  std::string provider_meta;  // model / fingerprint as reported by the provider, JSON text
};

class ChatClient {
 public:
  ChatClient(EndpointConfig cfg, std::shared_ptr<RateLimiter> limiter = nullptr);

  // Retries transport failures, 429 and 5xx with exponential backoff.
  // 401/403 -> ConfigError without retry; exhausted retries or other
  // failures -> TransportError carrying the last status.
  AgentReply complete(const std::string& prompt);

  const EndpointConfig& config() const { return cfg_; }

 private:
  EndpointConfig cfg_;
  std::shared_ptr<RateLimiter> limiter_;
  std::string scheme_host_port_;
  std::string path_;
};

// Request body sent for one prompt.
std::string chat_request_body(const EndpointConfig& cfg, const std::string& prompt);

AgentReply llm_choose(const std::string& prompt, ChatClient& client);

}  // namespace relval
