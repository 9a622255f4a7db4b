#include "relval/cli.hpp"

#include <yaml-cpp/yaml.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "relval/agents.hpp"
#include "relval/analysis.hpp"
#include "relval/error.hpp"
#include "relval/fitting.hpp"
#include "relval/probe.hpp"
#include "relval/runner.hpp"
#include "relval/trial_log.hpp"

#ifndef RELVAL_DEFAULT_TASKS
#define RELVAL_DEFAULT_TASKS "data/tasks.yaml"
#endif

namespace relval {

namespace fs = std::filesystem;

namespace {

Verbosity parse_verbosity(const std::string& s) {
  if (s == "quiet") return Verbosity::quiet;
  if (s == "info") return Verbosity::info;
  if (s == "debug") return Verbosity::debug;
  throw ConfigError("log_level must be quiet, info or debug (got '" + s + "')");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_hash(const fs::path& path) { return text_hash(read_file(path)); }

// Provenance next to an output file: command line, input hashes, schema versions.
void write_command_manifest(const fs::path& output, const std::vector<std::string>& args,
                            const std::vector<fs::path>& inputs) {
  nlohmann::ordered_json j;
  j["command"] = args;
  for (const auto& in : inputs) j["inputs"][in.string()] = file_hash(in);
  j["log_schema_version"] = kLogSchemaVersion;
  j["fit_schema_version"] = kFitSchemaVersion;
  j["prompt_format_hash"] = prompt_format_hash();
  j["created"] = utc_timestamp();
  std::ofstream out(output.string() + ".manifest.json");
  out << j.dump(2) << '\n';
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::map<std::string, std::vector<TrialRecord>> by_task(std::vector<TrialRecord> records) {
  std::map<std::string, std::vector<TrialRecord>> out;
  for (auto& r : records) out[r.task].push_back(std::move(r));
  return out;
}

struct Common {
  std::optional<fs::path> config;
  std::optional<fs::path> tasks;
};

}  // namespace

RepoConfig parse_repo_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  RepoConfig cfg;
  if (!root || root.IsNull()) return cfg;
  if (!root.IsMap()) throw ConfigError("config must be a YAML mapping");
  try {
    if (root["seed"]) cfg.default_seed = root["seed"].as<std::uint64_t>();
    if (root["output_dir"]) cfg.output_dir = root["output_dir"].as<std::string>();
    if (root["tasks"]) cfg.tasks = fs::path(root["tasks"].as<std::string>());
    if (root["log_level"]) cfg.verbosity = parse_verbosity(root["log_level"].as<std::string>());
    if (const auto eps = root["endpoints"]) {
      if (!eps.IsMap()) throw ConfigError("config field 'endpoints' must be a mapping of profile names");
      for (const auto& kv : eps) {
        EndpointConfig e;
        e.name = kv.first.as<std::string>();
        const auto& n = kv.second;
        if (!n["base_url"]) throw ConfigError("endpoint '" + e.name + "' lacks base_url");
        if (!n["model"]) throw ConfigError("endpoint '" + e.name + "' lacks model");
        e.base_url = n["base_url"].as<std::string>();
        e.model = n["model"].as<std::string>();
        if (n["auth_env"]) e.auth_env = n["auth_env"].as<std::string>();
        if (n["temperature"]) e.temperature = n["temperature"].as<double>();
        if (n["requests_per_second"]) e.requests_per_second = n["requests_per_second"].as<double>();
        if (n["timeout_s"]) e.timeout = std::chrono::milliseconds(static_cast<long long>(n["timeout_s"].as<double>() * 1000));
        if (n["max_attempts"]) e.retry.max_attempts = n["max_attempts"].as<int>();
        e.validate();
        cfg.endpoints[e.name] = e;
      }
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  return cfg;
}

RepoConfig load_repo_config(const fs::path& path) { return parse_repo_config(read_file(path)); }

RepoConfig resolve_repo_config(const std::optional<fs::path>& flag) {
  if (flag) return load_repo_config(*flag);
  if (const char* env = std::getenv("RELVAL_CONFIG"); env && *env) return load_repo_config(env);
  return {};
}

fs::path resolve_task_catalog(const std::optional<fs::path>& flag, const RepoConfig& cfg) {
  if (flag) return *flag;
  if (const char* env = std::getenv("RELVAL_TASKS"); env && *env) return env;
  if (cfg.tasks) return *cfg.tasks;
  return RELVAL_DEFAULT_TASKS;
}

namespace {

int cmd_run(const Common& common, const std::vector<std::string>& args, const std::string& task_name,
            const std::string& style_name, const std::string& mode_name_s, const std::string& agent_spec, int runs,
            std::optional<std::uint64_t> seed, std::optional<fs::path> out_path, bool force, bool resume, int jobs,
            bool log_prompts, std::ostream& out) {
  const RepoConfig repo = resolve_repo_config(common.config);
  const fs::path catalog_path = resolve_task_catalog(common.tasks, repo);
  const auto catalog = load_task_catalog(catalog_path);
  const TaskSpec& task = find_task(catalog, task_name);

  RunConfig cfg;
  cfg.task = task.name;
  cfg.style.variant = parse_variant(style_name);
  cfg.style.mode = parse_mode(mode_name_s);
  cfg.agent = parse_agent_spec(agent_spec);
  cfg.n_runs = runs;
  cfg.master_seed = seed.value_or(repo.default_seed);
  cfg.log_prompts = log_prompts;
  cfg.jobs = jobs;
  if (runs < 1) throw ConfigError("--runs must be >= 1");
  if (jobs < 1) throw ConfigError("--jobs must be >= 1");

  std::shared_ptr<ChatClient> client;
  if (cfg.agent.kind == AgentKind::llm_endpoint) {
    const auto it = repo.endpoints.find(cfg.agent.endpoint.name);
    if (it == repo.endpoints.end())
      throw ConfigError("no endpoint profile '" + cfg.agent.endpoint.name +
                        "' in the config (pass --config or set RELVAL_CONFIG)");
    cfg.agent.endpoint = it->second;
    const auto& env = cfg.agent.endpoint.auth_env;
    if (!env.empty()) {
      const char* v = std::getenv(env.c_str());
      if (!v || !*v)
        throw ConfigError("environment variable " + env + " is not set (auth token for endpoint '" +
                          cfg.agent.endpoint.name + "')");
    }
    client = std::make_shared<ChatClient>(cfg.agent.endpoint,
                                          std::make_shared<RateLimiter>(cfg.agent.endpoint.requests_per_second));
  }

  const fs::path log = out_path.value_or(repo.output_dir / (task.name + "_" + style_name + "_" +
                                                            cfg.agent.label().substr(0, cfg.agent.label().find(':')) +
                                                            "_s" + std::to_string(cfg.master_seed) + ".jsonl"));
  if (log.has_parent_path()) fs::create_directories(log.parent_path());

  BatchOptions opts;
  opts.force = force;
  opts.resume = resume;
  opts.provenance["task_catalog"] = catalog_path.string();
  opts.provenance["task_catalog_hash"] = file_hash(catalog_path);
  std::string cmdline;
  for (const auto& a : args) cmdline += (cmdline.empty() ? "" : " ") + a;
  opts.provenance["command"] = cmdline;
  if (repo.verbosity != Verbosity::quiet)
    opts.progress = [&out](int done, int total) { out << "run " << done << "/" << total << " done\n" << std::flush; };

  const AgentConfig agent_cfg = cfg.agent;
  const auto result = run_experiment_batch(
      cfg, task, [agent_cfg, client] { return make_agent(agent_cfg, client); }, log, opts);
  out << "wrote " << result.n_records << " records to " << result.log.string() << " (manifest "
      << result.manifest.string() << ")\n";
  out << "invalid replies: " << result.n_invalid << " (" << fixed(100.0 * result.invalid_fraction(), 2) << "%)\n";
  if (result.runs_resumed > 0) out << "kept " << result.runs_resumed << " completed runs from the existing log\n";
  return kExitOk;
}

void print_fit_table(const std::vector<FitResult>& fits, std::ostream& out) {
  out << std::left << std::setw(10) << "variant" << std::right << std::setw(3) << "k" << std::setw(12) << "nll"
      << std::setw(12) << "bic" << std::setw(8) << "omega" << std::setw(8) << "a_con" << std::setw(8) << "a_dis"
      << std::setw(9) << "b_train" << std::setw(9) << "b_trans" << std::setw(8) << "bias" << '\n';
  for (const auto& f : fits) {
    const auto& p = f.params;
    out << std::left << std::setw(10) << f.variant.name() << std::right << std::setw(3) << f.k << std::setw(12)
        << fixed(f.nll, 3) << std::setw(12) << fixed(f.bic, 3) << std::setw(8) << fixed(p.omega, 3) << std::setw(8)
        << fixed(p.alpha_con, 3) << std::setw(8) << fixed(p.alpha_dis, 3) << std::setw(9) << fixed(p.beta_train, 3)
        << std::setw(9) << fixed(p.beta_transfer, 3) << std::setw(8) << fixed(p.bias, 3) << '\n';
  }
}

void print_comparison(const ModelComparison& c, std::ostream& out) {
  out << std::left << std::setw(11) << "variant" << std::right << std::setw(3) << "k" << std::setw(12) << "nll"
      << std::setw(12) << "bic" << std::setw(10) << "dBIC" << '\n';
  for (const auto& row : c.ranking)
    out << std::left << std::setw(11) << (row.variant.name() + (row.variant == c.best ? "*" : "")) << std::right
        << std::setw(3) << row.k << std::setw(12) << fixed(row.nll, 3) << std::setw(12) << fixed(row.bic, 3)
        << std::setw(10) << fixed(row.delta_bic, 3) << '\n';
}

std::vector<FitResult> fit_logs(const std::vector<fs::path>& logs, const std::vector<std::string>& variants,
                                bool all, int starts, std::uint64_t seed, int jobs) {
  const auto data = to_choice_data(read_logs(logs));
  OptimizerConfig cfg;
  cfg.starts = starts;
  cfg.seed = seed;
  cfg.jobs = jobs;
  if (all || variants.empty()) return fit_all_variants(data, cfg);
  std::vector<FitResult> fits;
  for (const auto& v : variants) fits.push_back(fit_model(ModelVariant::parse(v), data, cfg));
  return fits;
}

int cmd_fit(const std::vector<std::string>& args, const std::vector<fs::path>& logs,
            const std::vector<std::string>& variants, bool all, int starts, std::uint64_t seed, int jobs,
            std::optional<fs::path> out_path, std::ostream& out) {
  if (starts < 1) throw ConfigError("--starts must be >= 1");
  const auto fits = fit_logs(logs, variants, all, starts, seed, jobs);
  const fs::path dest = out_path.value_or(fs::path(logs.front().string() + ".fits.json"));
  write_fits(dest, fits);
  write_command_manifest(dest, args, logs);
  print_fit_table(fits, out);
  out << "wrote " << fits.size() << " fits to " << dest.string() << '\n';
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& args, std::optional<fs::path> fits_path,
                const std::vector<fs::path>& logs, int starts, std::uint64_t seed, int jobs,
                std::optional<fs::path> out_path, std::ostream& out) {
  std::vector<FitResult> fits;
  if (fits_path)
    fits = read_fits(*fits_path);
  else if (!logs.empty())
    fits = fit_logs(logs, {}, true, starts, seed, jobs);
  else
    throw ConfigError("compare needs --fits or --log");
  const auto cmp = compare_models(fits);
  print_comparison(cmp, out);
  out << "best: " << cmp.best.name() << '\n';
  if (out_path) {
    std::ofstream csv(*out_path);
    if (!csv) throw ConfigError("cannot write " + out_path->string());
    csv.precision(10);
    csv << "variant,k,nll,bic,delta_bic,best\n";
    for (const auto& row : cmp.ranking)
      csv << row.variant.name() << ',' << row.k << ',' << row.nll << ',' << row.bic << ',' << row.delta_bic << ','
          << (row.variant == cmp.best ? 1 : 0) << '\n';
    std::vector<fs::path> inputs = logs;
    if (fits_path) inputs.push_back(*fits_path);
    write_command_manifest(*out_path, args, inputs);
  }
  return kExitOk;
}

int cmd_analyze(const Common& common, const std::vector<std::string>& args, const std::vector<fs::path>& logs,
                const std::string& metric, const std::string& phase_s, std::optional<fs::path> fits_path, int sims,
                std::uint64_t seed, std::optional<fs::path> out_path, std::ostream& out) {
  const RepoConfig repo = resolve_repo_config(common.config);
  const auto catalog = load_task_catalog(resolve_task_catalog(common.tasks, repo));
  const auto grouped = by_task(read_logs(logs));
  const fs::path dest = out_path.value_or(fs::path(logs.front().string() + "." + metric + ".csv"));

  if (metric == "accuracy" || metric == "relative") {
    std::vector<MetricRow> rows;
    std::vector<RunMetric> per_run;
    for (const auto& [name, records] : grouped) {
      const TaskSpec& task = find_task(catalog, name);
      if (metric == "relative") {
        auto m = higher_relative_choice_rate(records, task);
        auto r = summarize_groups(m, "higher_relative_rate");
        rows.insert(rows.end(), r.begin(), r.end());
        per_run.insert(per_run.end(), m.begin(), m.end());
        continue;
      }
      for (Phase ph : {Phase::training, Phase::transfer}) {
        if (phase_s != "both" && parse_phase(phase_s) != ph) continue;
        auto m = choice_accuracy(records, task, ph);
        auto r = summarize_groups(m, std::string(phase_name(ph)) + "_accuracy");
        rows.insert(rows.end(), r.begin(), r.end());
      }
    }
    write_metric_csv(dest, rows);
    for (const auto& r : rows)
      out << r.task << ' ' << r.style << ' ' << r.agent << ' ' << r.metric << ": mean " << fixed(r.summary.mean, 3)
          << " CI [" << fixed(r.summary.ci_low, 3) << ", " << fixed(r.summary.ci_high, 3) << "] n=" << r.summary.n
          << '\n';
  } else if (metric == "bias") {
    std::vector<BiasRow> rows;
    for (const auto& [name, records] : grouped) {
      auto r = bias_table(records, find_task(catalog, name));
      rows.insert(rows.end(), r.begin(), r.end());
    }
    write_bias_csv(dest, rows);
    out << std::left << std::setw(9) << "task" << std::setw(13) << "prompt" << std::right << std::setw(7) << "mean"
        << std::setw(18) << "95% CI" << std::setw(8) << "ideal" << std::setw(6) << "bias" << '\n';
    for (const auto& r : rows)
      out << std::left << std::setw(9) << r.task << std::setw(13) << r.style << std::right << std::setw(7)
          << fixed(r.summary.mean, 3) << std::setw(18)
          << ("[" + fixed(r.summary.ci_low, 3) + ", " + fixed(r.summary.ci_high, 3) + "]") << std::setw(8)
          << fixed(r.ideal, 3) << std::setw(6) << (r.biased ? "yes" : "") << '\n';
  } else if (metric == "predictive") {
    if (grouped.size() != 1) throw ConfigError("predictive analysis takes logs of a single task");
    const auto& [name, records] = *grouped.begin();
    const TaskSpec& task = find_task(catalog, name);
    const auto observed = empirical_predictive(records, task);
    std::optional<PredictiveSummary> predicted;
    if (fits_path) {
      const auto fits = read_fits(*fits_path);
      if (fits.empty()) throw ConfigError("fit file holds no fits");
      const FitResult* chosen = &fits.front();
      for (const auto& f : fits)
        if (f.variant == ModelVariant{}) chosen = &f;
      PromptStyle style;
      style.variant = parse_variant(records.front().style);
      predicted = posterior_predictive(*chosen, task, style, sims, seed);
      out << "simulated " << sims << " runs from " << chosen->variant.name() << '\n';
    }
    write_predictive_csv(dest, observed, predicted);
    for (const auto& [id, rate] : observed.transfer_rates)
      out << id << ": observed " << fixed(rate, 3)
          << (predicted ? " predicted " + fixed(predicted->transfer_rates.at(id), 3) : std::string()) << '\n';
  } else {
    throw ConfigError("unknown metric '" + metric + "' (expected accuracy, relative, bias or predictive)");
  }
  std::vector<fs::path> inputs = logs;
  if (fits_path) inputs.push_back(*fits_path);
  write_command_manifest(dest, args, inputs);
  out << "wrote " << dest.string() << '\n';
  return kExitOk;
}

int cmd_probe(const Common& common, const std::vector<std::string>& args, const fs::path& acts_path,
              const fs::path& trials_path, const std::string& task_name, double p_crit,
              std::optional<fs::path> out_prefix, std::ostream& out) {
  const RepoConfig repo = resolve_repo_config(common.config);
  const auto catalog = load_task_catalog(resolve_task_catalog(common.tasks, repo));
  const TaskSpec& task = find_task(catalog, task_name);
  const auto acts = read_activations(acts_path);
  const auto trials = read_probe_trials(trials_path);
  const auto predictors = value_difference_predictors(trials, task);
  const double crit = p_crit > 0 ? p_crit : critical_p_value(acts.cols);
  const auto results = unit_regressions(acts, predictors, crit);
  const auto counts = classification_counts(results);
  const auto effects = effect_size_summary(results);

  const double total = static_cast<double>(counts.total());
  auto line = [&](const char* name, std::size_t n) {
    out << std::left << std::setw(22) << name << std::right << std::setw(8) << n << "  ("
        << fixed(100.0 * static_cast<double>(n) / total, 1) << "%)\n";
  };
  out << acts.rows << " rows x " << acts.cols << " units, critical p = " << std::scientific << std::setprecision(4)
      << crit << std::defaultfloat << '\n';
  line("absolute value only", counts.abs_only);
  line("relative value only", counts.rel_only);
  line("both", counts.both);
  line("neither", counts.neither);
  out << "mean |slope| absolute " << fixed(effects.abs_slope.mean, 4) << ", relative " << fixed(effects.rel_slope.mean, 4)
      << ", difference " << fixed(effects.difference.mean, 4) << " CI [" << fixed(effects.difference.ci_low, 4) << ", "
      << fixed(effects.difference.ci_high, 4) << "]\n";

  const fs::path prefix = out_prefix.value_or(fs::path(acts_path.string() + ".probe"));
  write_unit_results_csv(prefix.string() + "_units.csv", results);
  write_classification_csv(prefix.string() + "_classes.csv", counts);
  write_command_manifest(prefix.string() + "_classes.csv", args, {acts_path, trials_path});
  out << "wrote " << prefix.string() << "_units.csv and " << prefix.string() << "_classes.csv\n";
  return kExitOk;
}

int cmd_tasks(const Common& common, bool validate_only, std::ostream& out) {
  const RepoConfig repo = resolve_repo_config(common.config);
  const fs::path path = resolve_task_catalog(common.tasks, repo);
  const auto catalog = load_task_catalog(path);
  if (validate_only) {
    out << path.string() << ": " << catalog.size() << " tasks valid\n";
    return kExitOk;
  }
  out << std::left << std::setw(9) << "task" << std::right << std::setw(8) << "options" << std::setw(10) << "contexts"
      << std::setw(10) << "training" << std::setw(10) << "transfer" << std::setw(8) << "ideal" << "  currency\n";
  for (const auto& t : catalog)
    out << std::left << std::setw(9) << t.name << std::right << std::setw(8) << t.options.size() << std::setw(10)
        << t.contexts.size() << std::setw(10) << t.n_training_trials() << std::setw(10) << t.n_transfer_trials()
        << std::setw(8) << fixed(ideal_choice_rate(t), 3) << "  " << t.currency.label << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bandit experiments for language-model and synthetic agents: run, fit, analyze, probe"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "Repo config (YAML); default $RELVAL_CONFIG");
  app.add_option("--tasks", common.tasks, "Task catalog (YAML); default $RELVAL_TASKS or bundled data");

  auto* run = app.add_subcommand("run", "Run a batch of experiments and write a JSONL log");
  std::string task, style = "standard", mode = "chat", agent;
  int runs = 30, jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out_path;
  bool force = false, resume = false, log_prompts = false;
  run->add_option("--task", task, "Task name")->required();
  run->add_option("--style", style, "standard | comparisons")->capture_default_str();
  run->add_option("--mode", mode, "chat | completion")->capture_default_str();
  run->add_option("--agent", agent, "ideal | random | sim:<variant>[:k=v,...] | llm:<profile>")->required();
  run->add_option("--runs", runs, "Number of runs")->capture_default_str();
  run->add_option("--seed", seed, "Master seed");
  run->add_option("--out", out_path, "Log path");
  run->add_flag("--force", force, "Overwrite an existing log");
  run->add_flag("--resume", resume, "Continue an interrupted batch");
  run->add_option("--jobs", jobs, "Concurrent runs")->capture_default_str();
  run->add_flag("--log-prompts", log_prompts, "Store full prompts in the log");

  auto* fit = app.add_subcommand("fit", "Fit model variants to logs by maximum likelihood");
  std::vector<fs::path> logs;
  std::vector<std::string> variants;
  bool all = false;
  int starts = 20;
  std::uint64_t fit_seed = 0;
  fit->add_option("--log", logs, "JSONL log(s)")->required();
  fit->add_option("--variant", variants, "Variant(s), e.g. REL-full");
  fit->add_flag("--all", all, "Fit all eight variants");
  fit->add_option("--starts", starts, "Multi-starts per variant")->capture_default_str();
  fit->add_option("--seed", fit_seed, "Start sampling seed")->capture_default_str();
  fit->add_option("--jobs", jobs, "Concurrent starts")->capture_default_str();
  fit->add_option("--out", out_path, "Fit file (JSON)");

  auto* compare = app.add_subcommand("compare", "Rank fitted variants by BIC");
  std::optional<fs::path> fits_path;
  compare->add_option("--fits", fits_path, "Fit file from `fit`");
  compare->add_option("--log", logs, "Fit all variants to these logs instead");
  compare->add_option("--starts", starts, "Multi-starts when fitting")->capture_default_str();
  compare->add_option("--seed", fit_seed, "Start sampling seed")->capture_default_str();
  compare->add_option("--jobs", jobs, "Concurrent starts")->capture_default_str();
  compare->add_option("--out", out_path, "CSV output");

  auto* analyze = app.add_subcommand("analyze", "Behavioral metrics as CSV");
  std::string metric = "accuracy", phase = "both";
  int sims = 100;
  std::uint64_t sim_seed = 0;
  analyze->add_option("--log", logs, "JSONL log(s)")->required();
  analyze->add_option("--metric", metric, "accuracy | relative | bias | predictive")->capture_default_str();
  analyze->add_option("--phase", phase, "training | transfer | both (accuracy)")->capture_default_str();
  analyze->add_option("--fits", fits_path, "Fit file for predictive simulation");
  analyze->add_option("--sims", sims, "Simulated runs for predictive")->capture_default_str();
  analyze->add_option("--seed", sim_seed, "Simulation seed")->capture_default_str();
  analyze->add_option("--out", out_path, "CSV output");

  auto* probe = app.add_subcommand("probe", "Per-unit regressions on an activation matrix");
  fs::path acts, trials;
  double p_crit = 0.0;
  probe->add_option("--acts", acts, "Activation file")->required();
  probe->add_option("--trials", trials, "Trial sidecar (JSONL)")->required();
  probe->add_option("--task", task, "Task name")->required();
  probe->add_option("--p-crit", p_crit, "Critical p (default .001 / (2 x units))");
  probe->add_option("--out", out_path, "Output prefix");

  auto* tasks = app.add_subcommand("tasks", "Inspect the task catalog");
  tasks->require_subcommand(1);
  auto* tasks_list = tasks->add_subcommand("list", "Summarize every task");
  auto* tasks_validate = tasks->add_subcommand("validate", "Check the catalog against the schema");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed())
      return cmd_run(common, args, task, style, mode, agent, runs, seed, out_path, force, resume, jobs, log_prompts,
                     out);
    if (fit->parsed()) return cmd_fit(args, logs, variants, all, starts, fit_seed, jobs, out_path, out);
    if (compare->parsed()) return cmd_compare(args, fits_path, logs, starts, fit_seed, jobs, out_path, out);
    if (analyze->parsed())
      return cmd_analyze(common, args, logs, metric, phase, fits_path, sims, sim_seed, out_path, out);
    if (probe->parsed()) return cmd_probe(common, args, acts, trials, task, p_crit, out_path, out);
    if (tasks_list->parsed()) return cmd_tasks(common, false, out);
    if (tasks_validate->parsed()) return cmd_tasks(common, true, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FitError& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace relval
