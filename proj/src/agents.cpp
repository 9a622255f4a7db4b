#include "relval/agents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "relval/error.hpp"
#include "relval/promptgen.hpp"

namespace relval {

std::string AgentConfig::label() const {
  switch (kind) {
    case AgentKind::llm_endpoint: return "llm:" + endpoint.name;
    case AgentKind::rl_simulated: return "sim:" + variant.name();
    case AgentKind::ideal: return "ideal";
    case AgentKind::uniform_random: return "random";
  }
  return "?";
}

AgentConfig parse_agent_spec(const std::string& spec) {
  AgentConfig cfg;
  if (spec == "ideal") {
    cfg.kind = AgentKind::ideal;
    return cfg;
  }
  if (spec == "random") {
    cfg.kind = AgentKind::uniform_random;
    return cfg;
  }
  if (spec.rfind("llm:", 0) == 0) {
    cfg.kind = AgentKind::llm_endpoint;
    cfg.endpoint.name = spec.substr(4);
    if (cfg.endpoint.name.empty()) throw ConfigError("agent spec 'llm:' needs an endpoint profile name");
    return cfg;
  }
  if (spec.rfind("sim:", 0) != 0)
    throw ConfigError("unknown agent '" + spec + "' (expected ideal, random, sim:<variant>[:k=v,...] or llm:<profile>)");

  cfg.kind = AgentKind::rl_simulated;
  const std::string rest = spec.substr(4);
  const auto colon = rest.find(':');
  cfg.variant = ModelVariant::parse(rest.substr(0, colon));
  ModelParams p;
  p.omega = 0.6;
  p.alpha_con = 0.5;
  p.alpha_dis = 0.17;
  p.beta_train = 10.0;
  p.beta_transfer = 10.0;
  p.bias = 1.2;
  if (colon != std::string::npos) {
    std::stringstream ss(rest.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ConfigError("agent parameter '" + item + "' must look like key=value");
      const std::string key = item.substr(0, eq);
      double value = 0.0;
      try {
        value = std::stod(item.substr(eq + 1));
      } catch (const std::exception&) {
        throw ConfigError("agent parameter '" + key + "' is not a number");
      }
      if (key == "omega") p.omega = value;
      else if (key == "alpha") p.alpha_con = p.alpha_dis = value;
      else if (key == "alpha_con") p.alpha_con = value;
      else if (key == "alpha_dis") p.alpha_dis = value;
      else if (key == "beta") p.beta_train = p.beta_transfer = value;
      else if (key == "beta_train") p.beta_train = value;
      else if (key == "beta_transfer") p.beta_transfer = value;
      else if (key == "b") p.bias = value;
      else throw ConfigError("unknown agent parameter '" + key + "'");
    }
  }
  cfg.params = p.constrained(cfg.variant);
  try {
    cfg.params.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("agent parameters: ") + e.what());
  }
  return cfg;
}

std::size_t sample_choice(std::span<const double> probabilities, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t k = 0; k < probabilities.size(); ++k) {
    acc += probabilities[k];
    if (u < acc) return k;
  }
  return probabilities.size() - 1;
}

char rl_agent_choose(const Learner& learner, std::span<const std::size_t> offered, std::span<const char> letters,
                     Phase phase, Rng& rng) {
  const auto probs = learner.probabilities(offered, phase);
  return letters[sample_choice(probs, rng)];
}

std::vector<std::size_t> ideal_choices(std::span<const std::size_t> offered, const TaskSpec& task) {
  double best = -std::numeric_limits<double>::infinity();
  for (auto o : offered) best = std::max(best, task.expected_value(o));
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < offered.size(); ++k)
    if (std::abs(task.expected_value(offered[k]) - best) <= 1e-12) out.push_back(k);
  return out;
}

RlAgent::RlAgent(ModelParams params, EncodingOptions opts) : params_(params), opts_(opts) { params_.validate(); }

void RlAgent::begin_run(const TaskSpec& task, std::uint64_t seed) {
  learner_.emplace(params_, task.options.size(), opts_);
  rng_.emplace(seed);
}

AgentReply RlAgent::choose(const ChoiceRequest& request) {
  AgentReply r;
  r.raw = format_reply(rl_agent_choose(*learner_, request.offered, request.letters, request.phase, *rng_));
  return r;
}

void RlAgent::observe(const Feedback& fb) { learner_->learn(fb.offered, fb.chosen, fb.outcomes); }

void IdealAgent::begin_run(const TaskSpec& task, std::uint64_t seed) {
  task_ = &task;
  rng_.emplace(seed);
}

AgentReply IdealAgent::choose(const ChoiceRequest& request) {
  const auto best = ideal_choices(request.offered, *task_);
  const auto pick = best.size() == 1 ? best[0] : best[rng_->uniform_index(best.size())];
  AgentReply r;
  r.raw = format_reply(request.letters[pick]);
  return r;
}

void UniformRandomAgent::begin_run(const TaskSpec&, std::uint64_t seed) { rng_.emplace(seed); }

AgentReply UniformRandomAgent::choose(const ChoiceRequest& request) {
  AgentReply r;
  r.raw = format_reply(request.letters[rng_->uniform_index(request.letters.size())]);
  return r;
}

std::unique_ptr<Agent> make_agent(const AgentConfig& cfg, std::shared_ptr<ChatClient> client) {
  switch (cfg.kind) {
    case AgentKind::rl_simulated: return std::make_unique<RlAgent>(cfg.params, cfg.encoding);
    case AgentKind::ideal: return std::make_unique<IdealAgent>();
    case AgentKind::uniform_random: return std::make_unique<UniformRandomAgent>();
    case AgentKind::llm_endpoint:
      if (!client) throw ConfigError("llm agent '" + cfg.endpoint.name + "' needs a configured endpoint");
      return std::make_unique<LlmAgent>(std::move(client));
  }
  throw ConfigError("unsupported agent kind");
}

}  // namespace relval
