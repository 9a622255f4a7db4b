#include <doctest.h>

#include <json.hpp>
#include <map>
#include <set>

#include "relval/error.hpp"
#include "relval/runner.hpp"
#include "test_util.hpp"

using namespace relval;
using relval::test::task;

namespace {

// Replies with the first listed machine; every `garble`-th reply is unparseable.
class FirstListedAgent : public Agent {
 public:
  explicit FirstListedAgent(int garble = 0, bool deterministic = true) : garble_(garble), det_(deterministic) {}
  void begin_run(const TaskSpec&, std::uint64_t) override {}
  AgentReply choose(const ChoiceRequest& req) override {
    ++calls;
    AgentReply r;
    r.raw = garble_ > 0 && calls % garble_ == 0 ? "Hmm, hard to say." : format_reply(req.letters[0]);
    return r;
  }
  bool deterministic() const override { return det_; }
  int calls = 0;

 private:
  int garble_;
  bool det_;
};

struct Interrupted : std::runtime_error {
  Interrupted() : std::runtime_error("interrupted") {}
};

// Non-deterministic agent that dies after `limit` replies.
class DyingAgent : public FirstListedAgent {
 public:
  DyingAgent(int limit, int* counter) : FirstListedAgent(0, false), limit_(limit), counter_(counter) {}
  AgentReply choose(const ChoiceRequest& req) override {
    if (++*counter_ > limit_) throw Interrupted();
    return FirstListedAgent::choose(req);
  }

 private:
  int limit_;
  int* counter_;
};

std::string history_of(const std::string& prompt) {
  const auto start = prompt.find("Outcomes of previous rounds:");
  const auto end = prompt.find("You now face");
  return start == std::string::npos ? "" : prompt.substr(start, end - start);
}

std::vector<std::string> lines_without_volatile(const std::filesystem::path& p) {
  std::vector<std::string> out;
  for (auto r : read_log(p)) {
    r.timestamp.clear();
    r.latency_ms.reset();
    out.push_back(to_json_line(r));
  }
  return out;
}

RunConfig config_for(const std::string& task_name, int runs, std::uint64_t seed, std::string agent = "ideal") {
  RunConfig cfg;
  cfg.task = task_name;
  cfg.agent = parse_agent_spec(agent);
  cfg.n_runs = runs;
  cfg.master_seed = seed;
  return cfg;
}

}  // namespace

TEST_SUITE("runner") {

TEST_CASE("training phase") {
  const auto& b = task("B2018");
  FirstListedAgent agent(7);
  auto ctx = make_run_context(b, {}, 1, 123);
  ctx.log_prompts = true;
  const auto records = run_training_phase(ctx, agent);
  REQUIRE(records.size() == 48);
  int invalid = 0;
  for (std::size_t t = 0; t < records.size(); ++t) {
    const auto& r = records[t];
    CHECK(r.phase == Phase::training);
    CHECK(r.outcomes.size() == r.options.size());
    invalid += !r.valid();
    // The prompt for trial t shows exactly t earlier rounds, invalid replies included.
    const auto h = history_of(*r.prompt);
    CHECK((h.find("Round " + std::to_string(t) + ":") != std::string::npos || t == 0));
    CHECK(h.find("Round " + std::to_string(t + 1) + ":") == std::string::npos);
  }
  CHECK(invalid == 6);
  CHECK(ctx.history.rounds.size() == 48);
}

TEST_CASE("transfer phase") {
  const auto& hw = task("HW2023a");
  FirstListedAgent agent;
  auto ctx = make_run_context(hw, {PromptVariant::comparisons}, 2, 77);
  ctx.log_prompts = true;
  run_training_phase(ctx, agent);
  const auto transfer = run_transfer_phase(ctx, agent);
  REQUIRE(transfer.size() == 28);
  std::set<std::string> histories;
  for (const auto& r : transfer) {
    CHECK(r.outcomes.empty());
    CHECK(r.pair.has_value());
    histories.insert(history_of(*r.prompt));
  }
  CHECK(histories.size() == 1);
  CHECK(ctx.history.rounds.size() == 60);

  const auto& v = task("V2023");
  auto vctx = make_run_context(v, {}, 1, 5);
  run_training_phase(vctx, agent);
  std::map<int, int> pairs;
  for (const auto& r : run_transfer_phase(vctx, agent)) ++pairs[*r.pair];
  CHECK(pairs.size() == 6);
  for (const auto& [p, n] : pairs) CHECK(n == 2);
}

TEST_CASE("listing order and letters vary") {
  const auto& hw = task("HW2023a");
  FirstListedAgent agent;
  auto ctx = make_run_context(hw, {}, 1, 9);
  const auto records = run_training_phase(ctx, agent);
  std::map<int, std::set<std::string>> firsts;
  for (const auto& r : records) firsts[*r.context].insert(r.options.front());
  for (const auto& [c, s] : firsts) CHECK(s.size() == 2);
  const auto other = make_run_context(hw, {}, 2, run_seed(9, 2));
  CHECK(other.letters != ctx.letters);
}

TEST_CASE("batch sizes and determinism") {
  const auto& hw = task("HW2023a");
  const auto agent = parse_agent_spec("sim:REL-full");
  const auto a = simulate_batch(hw, {}, agent, 30, 7);
  CHECK(a.size() == 30 * (60 + 28));
  const auto b = simulate_batch(hw, {}, agent, 30, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].choice == b[i].choice);
    CHECK(a[i].options == b[i].options);
  }
  const auto b2018 = simulate_batch(task("B2018"), {}, agent, 1, 1);
  CHECK(std::count_if(b2018.begin(), b2018.end(), [](const auto& r) { return r.phase == Phase::training; }) == 48);
}

TEST_CASE("identical batches give identical logs") {
  relval::test::TempDir dir;
  const auto& hw = task("HW2023a");
  auto cfg = config_for("HW2023a", 3, 11, "sim:REL-full");
  auto factory = [&] { return make_agent(cfg.agent); };
  run_experiment_batch(cfg, hw, factory, dir / "a.jsonl");
  run_experiment_batch(cfg, hw, factory, dir / "b.jsonl");
  CHECK(lines_without_volatile(dir / "a.jsonl") == lines_without_volatile(dir / "b.jsonl"));

  cfg.jobs = 3;
  run_experiment_batch(cfg, hw, factory, dir / "c.jsonl");
  CHECK(lines_without_volatile(dir / "a.jsonl") == lines_without_volatile(dir / "c.jsonl"));
}

TEST_CASE("existing logs are not overwritten") {
  relval::test::TempDir dir;
  const auto& v = task("V2023");
  const auto cfg = config_for("V2023", 2, 1);
  auto factory = [&] { return make_agent(cfg.agent); };
  run_experiment_batch(cfg, v, factory, dir / "l.jsonl");
  CHECK_THROWS_AS(run_experiment_batch(cfg, v, factory, dir / "l.jsonl"), ConfigError);
  BatchOptions force;
  force.force = true;
  CHECK(run_experiment_batch(cfg, v, factory, dir / "l.jsonl", force).n_records == 2 * 72);
  CHECK(std::filesystem::exists(manifest_path(dir / "l.jsonl")));
}

TEST_CASE("resume after an interrupted run") {
  relval::test::TempDir dir;
  const auto& hw = task("HW2023a");
  auto cfg = config_for("HW2023a", 20, 31);
  constexpr int per_run = 88;
  const auto log = dir / "l.jsonl";

  // Reference: an uninterrupted batch.
  int unlimited = 0;
  run_experiment_batch(cfg, hw, [&] { return std::make_unique<DyingAgent>(1 << 30, &unlimited); }, dir / "ref.jsonl");

  // Dies 40 replies into run 17.
  int counter = 0;
  const int limit = 16 * per_run + 40;
  CHECK_THROWS_AS(run_experiment_batch(cfg, hw, [&] { return std::make_unique<DyingAgent>(limit, &counter); }, log),
                  Interrupted);
  const auto before = read_log(log);
  CHECK(before.size() == static_cast<std::size_t>(limit));
  const auto prefix = lines_without_volatile(log);

  int resumed_calls = 0;
  BatchOptions opts;
  opts.resume = true;
  const auto res = run_experiment_batch(
      cfg, hw, [&] { return std::make_unique<DyingAgent>(1 << 30, &resumed_calls); }, log, opts);
  CHECK(res.runs_resumed == 16);
  // The 40 logged replies of run 17 are replayed, not re-queried.
  CHECK(resumed_calls == 4 * per_run - 40);

  const auto after = lines_without_volatile(log);
  REQUIRE(after.size() == 20u * per_run);
  for (std::size_t i = 0; i < 16u * per_run; ++i) CHECK(after[i] == prefix[i]);
  const auto ref = lines_without_volatile(dir / "ref.jsonl");
  CHECK(after == ref);

  // A different configuration cannot resume this log.
  auto other = cfg;
  other.master_seed = 32;
  CHECK_THROWS_AS(run_experiment_batch(other, hw, [&] { return std::make_unique<FirstListedAgent>(); }, log, opts),
                  ConfigError);
}

TEST_CASE("log round trip") {
  const auto recs = simulate_batch(task("BP2023"), {}, parse_agent_spec("random"), 1, 3);
  for (const auto& r : recs) {
    const auto back = parse_json_line(to_json_line(r));
    CHECK(to_json_line(back) == to_json_line(r));
  }
  CHECK_THROWS_AS(parse_json_line("{\"schema_version\": 99}"), SchemaError);
  CHECK_THROWS_AS(parse_json_line("not json"), SchemaError);
}

}
