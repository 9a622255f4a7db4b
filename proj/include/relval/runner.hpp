#pragma once

// Experiment orchestration: training phase with complete feedback, transfer
// test without feedback, and resumable multi-run batches.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "relval/agents.hpp"
#include "relval/promptgen.hpp"
#include "relval/taskdef.hpp"
#include "relval/trial_log.hpp"

namespace relval {

// Sub-stream ids under a run seed.
namespace seed_stream {
inline constexpr std::uint64_t schedule = 1;
inline constexpr std::uint64_t sequence = 2;
inline constexpr std::uint64_t letters = 3;
inline constexpr std::uint64_t transfer_order = 4;
inline constexpr std::uint64_t agent = 5;
inline constexpr std::uint64_t listing_order_base = 1000;  // + trial number across both phases
}  // namespace seed_stream

inline std::uint64_t run_seed(std::uint64_t master_seed, int run_index) {
  return derive_seed(master_seed, static_cast<std::uint64_t>(run_index));
}

struct RunConfig {
  std::string task;
  PromptStyle style;
  AgentConfig agent;
  int n_runs = 30;
  std::uint64_t master_seed = 0;
  bool log_prompts = false;
  int jobs = 1;
};

using RecordSink = std::function<void(const TrialRecord&)>;

// Per-run state, all derived from (task, style, run seed).
struct RunContext {
  const TaskSpec* task = nullptr;
  PromptStyle style;
  int run_id = 0;
  std::uint64_t seed = 0;
  LetterAssignment letters;
  RewardSchedule schedule;
  std::vector<std::size_t> sequence;
  std::vector<OptionPair> transfer_order;
  std::vector<int> transfer_pair_ids;  // canonical index of each transfer_order entry
  std::string instructions;
  OutcomeHistory history;
  std::string agent_label;
  bool log_prompts = false;
  bool record_latency = false;
  bool training_done = false;
};

RunContext make_run_context(const TaskSpec& task, PromptStyle style, int run_id, std::uint64_t seed);

// Each presentation: render prompt, query agent, parse, then append the
// context's scheduled outcomes for all its options whether or not the reply was valid.
std::vector<TrialRecord> run_training_phase(RunContext& ctx, Agent& agent, const RecordSink& sink = {});

// Shuffled transfer pairs against the frozen training history; nothing is appended.
std::vector<TrialRecord> run_transfer_phase(RunContext& ctx, Agent& agent, const RecordSink& sink = {});

// Both phases for one run. agent.begin_run is called with the agent sub-seed.
std::vector<TrialRecord> run_single(const TaskSpec& task, PromptStyle style, int run_id, std::uint64_t seed,
                                    Agent& agent, const std::string& agent_label, const RecordSink& sink = {});

using AgentFactory = std::function<std::unique_ptr<Agent>()>;

struct BatchOptions {
  bool force = false;
  bool resume = false;
  // Extra provenance merged into the manifest (e.g. task file hash, CLI flags).
  std::map<std::string, std::string> provenance;
  std::function<void(int completed, int total)> progress;
};

struct BatchResult {
  std::filesystem::path log;
  std::filesystem::path manifest;
  std::size_t n_records = 0;
  std::size_t n_invalid = 0;
  int runs_resumed = 0;  // complete runs found in an existing log
  double invalid_fraction() const { return n_records ? static_cast<double>(n_invalid) / n_records : 0.0; }
};

std::filesystem::path manifest_path(const std::filesystem::path& log);
std::filesystem::path checkpoint_path(const std::filesystem::path& log);

// Writes the JSONL log, a manifest and a checkpoint updated after every run.
// An existing log is refused unless force (overwrite) or resume (keep
// complete runs, redo the interrupted one; logged replies of
// non-deterministic agents are replayed instead of re-queried).
BatchResult run_experiment_batch(const RunConfig& cfg, const TaskSpec& task, const AgentFactory& make_agent,
                                 const std::filesystem::path& out, const BatchOptions& opts = {});

// In-memory batch (no files): runs 1..n_runs with seeds derived from master_seed,
// exactly as run_experiment_batch would produce them.
std::vector<TrialRecord> simulate_batch(const TaskSpec& task, PromptStyle style, const AgentConfig& agent,
                                        int n_runs, std::uint64_t master_seed);

// Fingerprint of the configuration fields that determine the log contents.
std::string config_fingerprint(const RunConfig& cfg, const TaskSpec& task);

// Canonical text dump of a task (hashed into manifests).
std::string describe_task(const TaskSpec& task);

}  // namespace relval
