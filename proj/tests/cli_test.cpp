#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "relval/cli.hpp"
#include "relval/error.hpp"
#include "relval/fitting.hpp"
#include "relval/probe.hpp"
#include "relval/rng.hpp"
#include "relval/trial_log.hpp"
#include "test_util.hpp"

using namespace relval;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "relval");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run, refuse overwrite, force") {
  relval::test::TempDir dir;
  const auto log = (dir / "hw.jsonl").string();
  const std::vector<std::string> run{"run",   "--task", "HW2023a", "--style", "comparisons", "--agent", "sim:relfull",
                                     "--runs", "30",    "--seed",  "7",       "--out",       log};
  const auto first = cli(run);
  REQUIRE(first.code == kExitOk);
  const auto records = read_log(log);
  CHECK(records.size() == 30 * 88);
  CHECK(records.front().style == "comparisons");
  CHECK(std::filesystem::exists(log + ".manifest.json"));

  const auto again = cli(run);
  CHECK(again.code == kExitConfig);
  CHECK(again.err.find("--force") != std::string::npos);

  auto forced = run;
  forced.push_back("--force");
  CHECK(cli(forced).code == kExitOk);
}

TEST_CASE("llm agent without its token") {
  relval::test::TempDir dir;
  {
    std::ofstream cfg(dir / "cfg.yaml");
    cfg << "endpoints:\n  remote:\n    base_url: http://127.0.0.1:9/v1\n    model: m\n    auth_env: RELVAL_CLI_TEST_KEY\n";
  }
  ::unsetenv("RELVAL_CLI_TEST_KEY");
  const auto r = cli({"--config", (dir / "cfg.yaml").string(), "run", "--task", "V2023", "--agent", "llm:remote",
                      "--runs", "1", "--out", (dir / "l.jsonl").string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("RELVAL_CLI_TEST_KEY") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "l.jsonl"));

  const auto unknown = cli({"--config", (dir / "cfg.yaml").string(), "run", "--task", "V2023", "--agent", "llm:other",
                            "--runs", "1", "--out", (dir / "l.jsonl").string()});
  CHECK(unknown.code == kExitConfig);
}

TEST_CASE("fit, compare and analyze") {
  relval::test::TempDir dir;
  const auto log = (dir / "b.jsonl").string();
  REQUIRE(cli({"run", "--task", "B2018", "--agent", "sim:REL:omega=0.8,beta=20", "--runs", "6", "--seed", "2", "--out",
               log})
              .code == kExitOk);

  const auto fits_path = (dir / "fits.json").string();
  REQUIRE(cli({"fit", "--log", log, "--all", "--starts", "2", "--seed", "3", "--out", fits_path}).code == kExitOk);
  CHECK(read_fits(fits_path).size() == 8);
  CHECK(std::filesystem::exists(fits_path + ".manifest.json"));

  const auto cmp = (dir / "cmp.csv").string();
  REQUIRE(cli({"compare", "--fits", fits_path, "--out", cmp}).code == kExitOk);
  CHECK(count_lines(relval::test::slurp(cmp)) == 9);

  const auto bias = (dir / "bias.csv").string();
  REQUIRE(cli({"analyze", "--log", log, "--metric", "bias", "--out", bias}).code == kExitOk);
  const auto text = relval::test::slurp(bias);
  CHECK(text.rfind("task,prompt,n,mean,ci_low,ci_high,ideal,bias\n", 0) == 0);
  CHECK(text.find("B2018,standard,6,") != std::string::npos);

  CHECK(cli({"analyze", "--log", log, "--metric", "accuracy", "--out", (dir / "acc.csv").string()}).code == kExitOk);
  CHECK(cli({"analyze", "--log", log, "--metric", "bogus"}).code == kExitConfig);
  CHECK(cli({"fit", "--log", (dir / "missing.jsonl").string(), "--all"}).code == kExitConfig);
}

TEST_CASE("probe") {
  relval::test::TempDir dir;
  Rng rng(1);
  const std::vector<std::string> ids{"1L", "1H", "2L", "2H", "3L", "3H", "4L", "4H"};
  std::vector<ProbeTrial> trials;
  for (int i = 0; i < 200; ++i) {
    const auto a = rng.uniform_index(8), b = (a + 1 + rng.uniform_index(7)) % 8;
    trials.push_back({ids[a], ids[b]});
  }
  ActivationMatrix m{200, 10, std::vector<float>(2000)};
  for (auto& v : m.values) v = static_cast<float>(rng.normal());
  write_activations(dir / "a.bin", m);
  write_probe_trials(dir / "t.jsonl", trials);
  const auto prefix = (dir / "out").string();
  REQUIRE(cli({"probe", "--acts", (dir / "a.bin").string(), "--trials", (dir / "t.jsonl").string(), "--task",
               "HW2023a", "--out", prefix})
              .code == kExitOk);
  const auto classes = relval::test::slurp(prefix + "_classes.csv");
  CHECK(classes.rfind("category,count,percent\n", 0) == 0);
  CHECK(count_lines(classes) == 5);
  CHECK(count_lines(relval::test::slurp(prefix + "_units.csv")) == 11);

  CHECK(cli({"probe", "--acts", (dir / "a.bin").string(), "--trials", (dir / "t.jsonl").string(), "--task", "V2023"})
            .code == kExitConfig);
}

TEST_CASE("tasks and usage errors") {
  const auto list = cli({"tasks", "list"});
  CHECK(list.code == kExitOk);
  for (const char* name : {"B2018", "V2023", "HW2023a", "BP2023", "HW2023b"}) CHECK(list.out.find(name) != std::string::npos);
  CHECK(cli({"tasks", "validate"}).code == kExitOk);

  relval::test::TempDir dir;
  {
    std::ofstream bad(dir / "bad.yaml");
    bad << "schema_version: 1\nname: X\n";
  }
  CHECK(cli({"--tasks", (dir / "bad.yaml").string(), "tasks", "validate"}).code == kExitConfig);
  CHECK(cli({"frobnicate"}).code == kExitConfig);
  CHECK(cli({"run", "--task", "HW2023a"}).code == kExitConfig);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("repo config") {
  const auto cfg = parse_repo_config("seed: 9\noutput_dir: out\nlog_level: quiet\n");
  CHECK(cfg.default_seed == 9);
  CHECK(cfg.output_dir == "out");
  CHECK(cfg.verbosity == Verbosity::quiet);
  CHECK_THROWS_AS(parse_repo_config("endpoints:\n  x: {model: m}\n"), ConfigError);
  CHECK_THROWS_AS(parse_repo_config("endpoints:\n  x: {base_url: 'http://h', model: m, temperature: 1}\n"),
                  ConfigError);
}

}
