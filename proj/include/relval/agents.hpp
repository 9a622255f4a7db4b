#pragma once

// Choice-making agents. Every agent receives the rendered prompt; synthetic
// agents also get the offered option indices through ChoiceRequest so they
// need not parse their own prompt (a test-only shortcut; the LLM agent
// ignores it).

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relval/cogmodel.hpp"
#include "relval/llm_client.hpp"
#include "relval/rng.hpp"
#include "relval/taskdef.hpp"

namespace relval {

enum class AgentKind { llm_endpoint, rl_simulated, ideal, uniform_random };

struct AgentConfig {
  AgentKind kind = AgentKind::uniform_random;
  EndpointConfig endpoint;  // llm_endpoint
  ModelVariant variant;     // rl_simulated
  ModelParams params;       // rl_simulated, already constrained to the variant
  EncodingOptions encoding;

  // Short label recorded in logs, e.g. "sim:REL-full", "llm:gpt4".
  std::string label() const;
};

// Parses "ideal", "random", "sim:<variant>[:key=value,...]" or "llm:<profile>".
// Simulation keys: omega, alpha, alpha_con, alpha_dis, beta, beta_train, beta_transfer, b.
// llm profiles are resolved by the caller; this fills endpoint.name only.
AgentConfig parse_agent_spec(const std::string& spec);

struct ChoiceRequest {
  const std::string& prompt;
  Phase phase;
  std::span<const std::size_t> offered;  // option indices, listed order
  std::span<const char> letters;         // letters, listed order
};

struct Feedback {
  std::span<const std::size_t> offered;
  std::optional<std::size_t> chosen;  // position in offered
  std::span<const double> outcomes;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual void begin_run(const TaskSpec& task, std::uint64_t seed) = 0;
  virtual AgentReply choose(const ChoiceRequest& request) = 0;
  virtual void observe(const Feedback&) {}
  // True if identical inputs and seed always give identical replies.
  virtual bool deterministic() const { return true; }
};

// Index sampled from a probability vector.
std::size_t sample_choice(std::span<const double> probabilities, Rng& rng);

// Softmax draw from the learner's current state; returns the chosen letter.
char rl_agent_choose(const Learner& learner, std::span<const std::size_t> offered, std::span<const char> letters,
                     Phase phase, Rng& rng);

// Positions in `offered` holding the maximal expected value (several on EV ties).
std::vector<std::size_t> ideal_choices(std::span<const std::size_t> offered, const TaskSpec& task);

class RlAgent final : public Agent {
 public:
  RlAgent(ModelParams params, EncodingOptions opts = {});
  void begin_run(const TaskSpec& task, std::uint64_t seed) override;
  AgentReply choose(const ChoiceRequest& request) override;
  void observe(const Feedback& fb) override;

 private:
  ModelParams params_;
  EncodingOptions opts_;
  std::optional<Learner> learner_;
  std::optional<Rng> rng_;
};

class IdealAgent final : public Agent {
 public:
  void begin_run(const TaskSpec& task, std::uint64_t seed) override;
  AgentReply choose(const ChoiceRequest& request) override;

 private:
  const TaskSpec* task_ = nullptr;
  std::optional<Rng> rng_;
};

class UniformRandomAgent final : public Agent {
 public:
  void begin_run(const TaskSpec& task, std::uint64_t seed) override;
  AgentReply choose(const ChoiceRequest& request) override;

 private:
  std::optional<Rng> rng_;
};

class LlmAgent final : public Agent {
 public:
  explicit LlmAgent(std::shared_ptr<ChatClient> client) : client_(std::move(client)) {}
  void begin_run(const TaskSpec&, std::uint64_t) override {}
  AgentReply choose(const ChoiceRequest& request) override { return llm_choose(request.prompt, *client_); }
  bool deterministic() const override { return false; }

 private:
  std::shared_ptr<ChatClient> client_;
};

// llm_endpoint configs need `client`; other kinds ignore it.
std::unique_ptr<Agent> make_agent(const AgentConfig& cfg, std::shared_ptr<ChatClient> client = nullptr);

}  // namespace relval
