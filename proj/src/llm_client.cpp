#include "relval/llm_client.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <thread>

#include "relval/error.hpp"

namespace relval {

using json = nlohmann::json;
using namespace std::chrono;

milliseconds RetryPolicy::delay_before(int attempt) const {
  const double factor = std::pow(multiplier, std::max(0, attempt - 2));
  const auto d = duration_cast<milliseconds>(base_delay * factor);
  return std::min(d, max_delay);
}

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("endpoint '" + name + "': base_url is required");
  if (model.empty()) throw ConfigError("endpoint '" + name + "': model is required");
  if (temperature != 0.0) throw ConfigError("endpoint '" + name + "': temperature must be 0");
  if (retry.max_attempts < 1) throw ConfigError("endpoint '" + name + "': max_attempts must be >= 1");
  if (!(requests_per_second > 0.0)) throw ConfigError("endpoint '" + name + "': rate limit must be > 0");
}

RateLimiter::RateLimiter(double rate, double burst)
    : rate_(rate), burst_(burst), tokens_(burst), last_(steady_clock::now()) {
  if (!(rate > 0.0) || !(burst >= 1.0)) throw ConfigError("rate limiter needs rate > 0 and burst >= 1");
}

void RateLimiter::acquire() {
  std::unique_lock lock(mutex_);
  for (;;) {
    const auto now = steady_clock::now();
    tokens_ = std::min(burst_, tokens_ + duration<double>(now - last_).count() * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    // Holding the lock while sleeping serializes dispatch per endpoint.
    std::this_thread::sleep_for(duration<double>((1.0 - tokens_) / rate_));
  }
}

namespace {

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url must start with http:// or https://");
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

}  // namespace

ChatClient::ChatClient(EndpointConfig cfg, std::shared_ptr<RateLimiter> limiter)
    : cfg_(std::move(cfg)), limiter_(std::move(limiter)) {
  cfg_.validate();
  const auto parts = split_url(cfg_.base_url);
  scheme_host_port_ = parts.origin;
  path_ = parts.path + "/chat/completions";
  if (!limiter_) limiter_ = std::make_shared<RateLimiter>(cfg_.requests_per_second);
}

std::string chat_request_body(const EndpointConfig& cfg, const std::string& prompt) {
  json body;
  body["model"] = cfg.model;
  body["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = cfg.temperature;
  return body.dump();
}

AgentReply ChatClient::complete(const std::string& prompt) {
  std::string token;
  if (!cfg_.auth_env.empty()) {
    const char* v = std::getenv(cfg_.auth_env.c_str());
    if (!v || !*v) throw ConfigError("environment variable " + cfg_.auth_env + " is not set (auth token for endpoint '" +
                                     cfg_.name + "')");
    token = v;
  }

  httplib::Client client(scheme_host_port_);
  const auto secs = duration_cast<seconds>(cfg_.timeout);
  const auto usecs = duration_cast<microseconds>(cfg_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
  const std::string body = chat_request_body(cfg_, prompt);

  const auto started = steady_clock::now();
  int last_status = 0;
  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
    if (attempt > 1) std::this_thread::sleep_for(cfg_.retry.delay_before(attempt));
    limiter_->acquire();
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_status = 0;
      last_error = httplib::to_string(res.error());
      continue;
    }
    last_status = res->status;
    if (res->status == 401 || res->status == 403)
      throw ConfigError("endpoint '" + cfg_.name + "' rejected the credentials (HTTP " + std::to_string(res->status) +
                        ")");
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw TransportError("endpoint '" + cfg_.name + "' returned HTTP " + std::to_string(res->status), res->status);

    json doc;
    try {
      doc = json::parse(res->body);
    } catch (const json::exception&) {
      throw TransportError("endpoint '" + cfg_.name + "' returned a body that is not JSON", res->status);
    }
    AgentReply reply;
    try {
      reply.raw = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw TransportError("endpoint '" + cfg_.name + "' returned no choices[0].message.content", res->status);
    }
    reply.attempts = attempt;
    reply.latency = duration_cast<milliseconds>(steady_clock::now() - started);
    if (doc.contains("usage") && doc["usage"].is_object()) {
      TokenUsage u;
      u.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
      u.completion_tokens = doc["usage"].value("completion_tokens", 0);
      reply.usage = u;
    }
    json meta = json::object();
    for (const char* key : {"model", "system_fingerprint"})
      if (doc.contains(key) && !doc[key].is_null()) meta[key] = doc[key];
    reply.provider_meta = meta.dump();
    return reply;
  }
  throw TransportError("endpoint '" + cfg_.name + "' failed after " + std::to_string(cfg_.retry.max_attempts) +
                           " attempts: " + last_error,
                       last_status);
}

AgentReply llm_choose(const std::string& prompt, ChatClient& client) { return client.complete(prompt); }

}  // namespace relval
