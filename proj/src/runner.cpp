#include "relval/runner.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

#include "relval/error.hpp"

namespace relval {

using ojson = nlohmann::ordered_json;

RunContext make_run_context(const TaskSpec& task, PromptStyle style, int run_id, std::uint64_t seed) {
  RunContext ctx;
  ctx.task = &task;
  ctx.style = style;
  ctx.run_id = run_id;
  ctx.seed = seed;
  Rng letter_rng(derive_seed(seed, seed_stream::letters));
  ctx.letters = assign_letters(task.options.size(), letter_rng);
  ctx.schedule = build_reward_schedule(task, derive_seed(seed, seed_stream::schedule));
  ctx.sequence = training_sequence(task, derive_seed(seed, seed_stream::sequence));

  const auto pairs = enumerate_transfer_pairs(task);
  std::vector<int> ids(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) ids[i] = static_cast<int>(i / static_cast<std::size_t>(task.transfer_reps));
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng order_rng(derive_seed(seed, seed_stream::transfer_order));
  order_rng.shuffle(std::span<std::size_t>(order));
  for (auto i : order) {
    ctx.transfer_order.push_back(pairs[i]);
    ctx.transfer_pair_ids.push_back(ids[i]);
  }

  ctx.instructions = render_instructions(task.name);
  ctx.history.currency = task.currency;
  return ctx;
}

namespace {

struct Presented {
  std::vector<std::size_t> options;  // listed order
  ChoiceQuery query;
};

Presented present(const RunContext& ctx, const std::vector<std::size_t>& options, std::uint64_t trial_number) {
  std::vector<char> letters;
  for (auto o : options) letters.push_back(ctx.letters[o]);
  Presented p;
  p.query = render_choice_query(letters, derive_seed(ctx.seed, seed_stream::listing_order_base + trial_number),
                                ctx.style.mode);
  for (char l : p.query.listed)
    for (auto o : options)
      if (ctx.letters[o] == l) p.options.push_back(o);
  return p;
}

TrialRecord base_record(const RunContext& ctx, Phase phase, int trial, const Presented& p, const std::string& prompt,
                        const AgentReply& reply, const ParsedChoice& parsed) {
  TrialRecord r;
  r.task = ctx.task->name;
  r.style = std::string(variant_name(ctx.style.variant));
  r.agent = ctx.agent_label;
  r.run = ctx.run_id;
  r.phase = phase;
  r.trial = trial;
  r.offered = p.query.listed;
  for (auto o : p.options) r.options.push_back(ctx.task->options[o].id);
  r.first = p.query.first;
  r.choice = parsed.letter;
  if (parsed.letter)
    for (std::size_t k = 0; k < p.options.size(); ++k)
      if (r.offered[k] == *parsed.letter) r.choice_option = r.options[k];
  r.reply = reply.raw;
  r.prompt_hash = text_hash(prompt);
  if (ctx.log_prompts) r.prompt = prompt;
  r.attempts = reply.attempts;
  if (ctx.record_latency) r.latency_ms = reply.latency.count();
  r.provider_meta = reply.provider_meta;
  r.timestamp = utc_timestamp();
  return r;
}

std::optional<std::size_t> chosen_position(const Presented& p, const ParsedChoice& parsed) {
  if (!parsed.letter) return std::nullopt;
  for (std::size_t k = 0; k < p.query.listed.size(); ++k)
    if (p.query.listed[k] == *parsed.letter) return k;
  return std::nullopt;
}

}  // namespace

std::vector<TrialRecord> run_training_phase(RunContext& ctx, Agent& agent, const RecordSink& sink) {
  const TaskSpec& task = *ctx.task;
  std::vector<TrialRecord> out;
  std::vector<std::size_t> presentations(task.contexts.size(), 0);
  for (std::size_t t = 0; t < ctx.sequence.size(); ++t) {
    const std::size_t c = ctx.sequence[t];
    const std::size_t rep = presentations[c]++;
    const Presented p = present(ctx, task.context_option_indices(c), t);
    const std::string prompt =
        assemble_prompt(ctx.instructions, render_history(ctx.history, ctx.style), p.query.text);

    const ChoiceRequest request{prompt, Phase::training, p.options, p.query.listed};
    const AgentReply reply = agent.choose(request);
    const ParsedChoice parsed = parse_choice(reply.raw, p.query.listed);

    std::vector<double> outcomes;
    HistoryRound round;
    round.context_id = task.contexts[c].id;
    for (std::size_t k = 0; k < p.options.size(); ++k) {
      outcomes.push_back(ctx.schedule.outcomes[p.options[k]][rep]);
      round.outcomes.push_back({p.query.listed[k], outcomes.back()});
    }
    agent.observe(Feedback{p.options, chosen_position(p, parsed), outcomes});
    ctx.history.rounds.push_back(std::move(round));

    TrialRecord r = base_record(ctx, Phase::training, static_cast<int>(t), p, prompt, reply, parsed);
    r.context = task.contexts[c].id;
    r.outcomes = std::move(outcomes);
    if (sink) sink(r);
    out.push_back(std::move(r));
  }
  ctx.training_done = true;
  return out;
}

std::vector<TrialRecord> run_transfer_phase(RunContext& ctx, Agent& agent, const RecordSink& sink) {
  if (!ctx.training_done) throw Error("transfer phase requires a completed training phase");
  const std::string history_text = render_history(ctx.history, ctx.style);
  const auto n_train = ctx.sequence.size();
  std::vector<TrialRecord> out;
  for (std::size_t u = 0; u < ctx.transfer_order.size(); ++u) {
    const auto [a, b] = ctx.transfer_order[u];
    const Presented p = present(ctx, {a, b}, n_train + u);
    const std::string prompt = assemble_prompt(ctx.instructions, history_text, p.query.text);
    const ChoiceRequest request{prompt, Phase::transfer, p.options, p.query.listed};
    const AgentReply reply = agent.choose(request);
    const ParsedChoice parsed = parse_choice(reply.raw, p.query.listed);

    TrialRecord r = base_record(ctx, Phase::transfer, static_cast<int>(u), p, prompt, reply, parsed);
    r.pair = ctx.transfer_pair_ids[u];
    if (sink) sink(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TrialRecord> run_single(const TaskSpec& task, PromptStyle style, int run_id, std::uint64_t seed,
                                    Agent& agent, const std::string& agent_label, const RecordSink& sink) {
  RunContext ctx = make_run_context(task, style, run_id, seed);
  ctx.agent_label = agent_label;
  ctx.record_latency = !agent.deterministic();
  agent.begin_run(task, derive_seed(seed, seed_stream::agent));
  auto records = run_training_phase(ctx, agent, sink);
  auto transfer = run_transfer_phase(ctx, agent, sink);
  records.insert(records.end(), std::make_move_iterator(transfer.begin()), std::make_move_iterator(transfer.end()));
  return records;
}

std::vector<TrialRecord> simulate_batch(const TaskSpec& task, PromptStyle style, const AgentConfig& agent_cfg,
                                        int n_runs, std::uint64_t master_seed) {
  if (agent_cfg.kind == AgentKind::llm_endpoint) throw ConfigError("simulate_batch needs a synthetic agent");
  auto agent = make_agent(agent_cfg);
  std::vector<TrialRecord> all;
  for (int run = 1; run <= n_runs; ++run) {
    auto records = run_single(task, style, run, run_seed(master_seed, run), *agent, agent_cfg.label());
    all.insert(all.end(), std::make_move_iterator(records.begin()), std::make_move_iterator(records.end()));
  }
  return all;
}

std::filesystem::path manifest_path(const std::filesystem::path& log) {
  auto p = log;
  p += ".manifest.json";
  return p;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& log) {
  auto p = log;
  p += ".ckpt.json";
  return p;
}

std::string describe_task(const TaskSpec& task) {
  std::ostringstream os;
  os.precision(17);
  os << task.name << '|' << task.currency.label << '|' << task.currency.symbol << '|' << task.currency.unit << '|'
     << task.currency.decimals << '|' << task.training_reps << '|' << task.transfer_reps;
  for (const auto& o : task.options) {
    os << '|' << o.id << ':' << (o.dist.kind == DistKind::bernoulli ? "b" : "g");
    if (o.dist.kind == DistKind::bernoulli)
      os << ',' << o.dist.high << ',' << o.dist.p << ',' << o.dist.low;
    else
      os << ',' << o.dist.mean << ',' << o.dist.sd;
  }
  for (const auto& c : task.contexts) {
    os << "|c" << c.id;
    for (const auto& m : c.members) os << ',' << m.option << role_name(m.role);
  }
  return os.str();
}

std::string config_fingerprint(const RunConfig& cfg, const TaskSpec& task) {
  std::ostringstream os;
  os.precision(17);
  const auto& p = cfg.agent.params;
  os << describe_task(task) << '#' << variant_name(cfg.style.variant) << '#' << mode_name(cfg.style.mode) << '#'
     << cfg.agent.label() << '#' << p.omega << ',' << p.alpha_con << ',' << p.alpha_dis << ',' << p.beta_train << ','
     << p.beta_transfer << ',' << p.bias << '#' << cfg.agent.endpoint.model << '#' << cfg.n_runs << '#'
     << cfg.master_seed << '#' << cfg.log_prompts << '#' << kLogSchemaVersion << '#' << prompt_format_hash();
  return text_hash(os.str());
}

namespace {

// Returns logged replies for the first trials of a run, then defers to the real agent.
class ReplayAgent final : public Agent {
 public:
  ReplayAgent(Agent& inner, std::deque<TrialRecord> logged) : inner_(inner), logged_(std::move(logged)) {}
  void begin_run(const TaskSpec& task, std::uint64_t seed) override { inner_.begin_run(task, seed); }
  AgentReply choose(const ChoiceRequest& request) override {
    if (logged_.empty()) return inner_.choose(request);
    AgentReply r;
    r.raw = logged_.front().reply;
    r.attempts = logged_.front().attempts;
    r.latency = std::chrono::milliseconds(logged_.front().latency_ms.value_or(0));
    r.provider_meta = logged_.front().provider_meta;
    logged_.pop_front();
    return r;
  }
  void observe(const Feedback& fb) override { inner_.observe(fb); }
  bool deterministic() const override { return inner_.deterministic(); }

 private:
  Agent& inner_;
  std::deque<TrialRecord> logged_;
};

struct Checkpoint {
  std::string fingerprint;
  int completed_runs = 0;
  std::uintmax_t log_bytes = 0;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c, int n_runs) {
  ojson j;
  j["schema_version"] = kLogSchemaVersion;
  j["fingerprint"] = c.fingerprint;
  j["completed_runs"] = c.completed_runs;
  j["n_runs"] = n_runs;
  j["log_bytes"] = c.log_bytes;
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot resume: checkpoint " + path.string() + " is missing");
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const ojson::exception&) {
    throw ConfigError("cannot resume: checkpoint " + path.string() + " is corrupt");
  }
  Checkpoint c;
  c.fingerprint = j.value("fingerprint", "");
  c.completed_runs = j.value("completed_runs", 0);
  c.log_bytes = j.value("log_bytes", std::uintmax_t{0});
  return c;
}

void write_manifest(const std::filesystem::path& path, const RunConfig& cfg, const TaskSpec& task,
                    const BatchOptions& opts, const BatchResult* summary) {
  ojson j;
  j["schema_version"] = kLogSchemaVersion;
  j["task"] = cfg.task;
  j["style"] = std::string(variant_name(cfg.style.variant));
  j["prompt_mode"] = std::string(mode_name(cfg.style.mode));
  j["agent"] = cfg.agent.label();
  if (cfg.agent.kind == AgentKind::rl_simulated) {
    const auto& p = cfg.agent.params;
    j["agent_params"] = {{"omega", p.omega},           {"alpha_con", p.alpha_con},
                         {"alpha_dis", p.alpha_dis},   {"beta_train", p.beta_train},
                         {"beta_transfer", p.beta_transfer}, {"b", p.bias}};
  }
  if (cfg.agent.kind == AgentKind::llm_endpoint) {
    j["endpoint"] = {{"name", cfg.agent.endpoint.name},
                     {"base_url", cfg.agent.endpoint.base_url},
                     {"model", cfg.agent.endpoint.model},
                     {"temperature", cfg.agent.endpoint.temperature}};
  }
  j["n_runs"] = cfg.n_runs;
  j["master_seed"] = cfg.master_seed;
  j["seed_derivation"] =
      "run_seed = derive_seed(master_seed, run); stream seed = derive_seed(run_seed, stream id); "
      "derive_seed(p, s) = splitmix64(splitmix64(p) ^ (s * 0xD1B54A32D192ED03))";
  j["task_hash"] = text_hash(describe_task(task));
  j["prompt_format_hash"] = prompt_format_hash();
  j["config_fingerprint"] = config_fingerprint(cfg, task);
  for (const auto& [k, v] : opts.provenance) j["provenance"][k] = v;
  j["created"] = utc_timestamp();
  if (summary) {
    j["records"] = summary->n_records;
    j["invalid_replies"] = summary->n_invalid;
    j["invalid_fraction"] = summary->invalid_fraction();
  }
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
}

}  // namespace

BatchResult run_experiment_batch(const RunConfig& cfg, const TaskSpec& task, const AgentFactory& make_agent,
                                 const std::filesystem::path& out, const BatchOptions& opts) {
  if (cfg.n_runs < 1) throw ConfigError("n_runs must be >= 1");
  if (cfg.task != task.name) throw ConfigError("run config names task '" + cfg.task + "' but got '" + task.name + "'");
  namespace fs = std::filesystem;

  BatchResult result;
  result.log = out;
  result.manifest = manifest_path(out);
  const auto ckpt_path = checkpoint_path(out);
  const std::string fingerprint = config_fingerprint(cfg, task);

  int first_run = 1;
  std::deque<TrialRecord> partial;
  if (fs::exists(out) && opts.resume) {
    const Checkpoint c = read_checkpoint(ckpt_path);
    if (c.fingerprint != fingerprint)
      throw ConfigError("cannot resume " + out.string() + ": it was produced by a different configuration");
    if (fs::file_size(out) < c.log_bytes) throw ConfigError("cannot resume: log is shorter than its checkpoint");
    {
      std::ifstream in(out);
      in.seekg(static_cast<std::streamoff>(c.log_bytes));
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) {
          auto r = parse_json_line(line);
          if (r.run == c.completed_runs + 1) partial.push_back(std::move(r));
        }
    }
    fs::resize_file(out, c.log_bytes);
    for (const auto& r : read_log(out)) {
      ++result.n_records;
      result.n_invalid += !r.valid();
    }
    first_run = c.completed_runs + 1;
    result.runs_resumed = c.completed_runs;
  } else if (fs::exists(out) && !opts.force) {
    throw ConfigError("log " + out.string() + " already exists; pass --force to overwrite or --resume to continue");
  } else {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out, std::ios::trunc);
    write_checkpoint(ckpt_path, {fingerprint, 0, 0}, cfg.n_runs);
  }
  write_manifest(result.manifest, cfg, task, opts, nullptr);

  std::ofstream log(out, std::ios::app | std::ios::binary);
  if (!log) throw ConfigError("cannot write log " + out.string());

  auto execute = [&](int run, Agent& agent, const RecordSink& sink) {
    std::unique_ptr<ReplayAgent> replay;
    Agent* used = &agent;
    if (run == first_run && !partial.empty() && !agent.deterministic()) {
      replay = std::make_unique<ReplayAgent>(agent, partial);
      used = replay.get();
    }
    RunContext ctx = make_run_context(task, cfg.style, run, run_seed(cfg.master_seed, run));
    ctx.agent_label = cfg.agent.label();
    ctx.log_prompts = cfg.log_prompts;
    ctx.record_latency = !agent.deterministic();
    used->begin_run(task, derive_seed(ctx.seed, seed_stream::agent));
    auto records = run_training_phase(ctx, *used, sink);
    auto transfer = run_transfer_phase(ctx, *used, sink);
    records.insert(records.end(), std::make_move_iterator(transfer.begin()), std::make_move_iterator(transfer.end()));
    return records;
  };

  auto commit_run = [&](int run, const std::vector<TrialRecord>& records, bool already_written) {
    if (!already_written)
      for (const auto& r : records) log << to_json_line(r) << '\n';
    log.flush();
    for (const auto& r : records) {
      ++result.n_records;
      result.n_invalid += !r.valid();
    }
    write_checkpoint(ckpt_path, {fingerprint, run, fs::file_size(out)}, cfg.n_runs);
    if (opts.progress) opts.progress(run, cfg.n_runs);
  };

  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    auto agent = make_agent();
    for (int run = first_run; run <= cfg.n_runs; ++run) {
      // Stream each trial so an interrupted run leaves its completed trials on disk.
      const RecordSink sink = [&](const TrialRecord& r) {
        log << to_json_line(r) << '\n';
        log.flush();
      };
      const auto records = execute(run, *agent, sink);
      commit_run(run, records, true);
    }
  } else {
    // Workers run whole runs; the calling thread commits them in run order.
    std::mutex mu;
    std::condition_variable cv;
    std::map<int, std::vector<TrialRecord>> done;
    std::exception_ptr failure;
    std::atomic<int> next{first_run};
    std::vector<std::jthread> workers;
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        auto agent = make_agent();
        for (;;) {
          const int run = next.fetch_add(1);
          if (run > cfg.n_runs) return;
          {
            std::lock_guard lock(mu);
            if (failure) return;
          }
          try {
            auto records = execute(run, *agent, {});
            std::lock_guard lock(mu);
            done.emplace(run, std::move(records));
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
          cv.notify_all();
        }
      });
    }
    for (int run = first_run; run <= cfg.n_runs; ++run) {
      std::vector<TrialRecord> records;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return done.count(run) || failure; });
        if (!done.count(run)) break;
        records = std::move(done[run]);
        done.erase(run);
      }
      commit_run(run, records, false);
    }
    workers.clear();
    if (failure) std::rethrow_exception(failure);
  }
  write_manifest(result.manifest, cfg, task, opts, &result);
  return result;
}

}  // namespace relval
