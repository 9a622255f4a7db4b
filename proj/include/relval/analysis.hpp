#pragma once

// Behavioral metrics over trial logs: accuracy, relative-value choice rates,
// the ideal-agent baseline, predictive simulation and descriptive summaries.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relval/fitting.hpp"
#include "relval/promptgen.hpp"
#include "relval/taskdef.hpp"
#include "relval/trial_log.hpp"

namespace relval {

// One value per run. `missing` when no trial qualified (value is NaN then).
struct RunMetric {
  std::string task;
  std::string style;
  std::string agent;
  int run = 0;
  double value = 0.0;
  std::size_t n = 0;  // trials entering the value
  bool missing = false;
};

enum class PairSet {
  all,
  conflict,  // higher-EV option has the lower relative value
  aligned,   // higher-EV option also has the higher relative value
};

// Training: chose the highest-EV option of the context. Transfer: same over
// pairs, equal-EV pairs excluded. Invalid replies are always excluded.
// `pairs` restricts transfer trials; it is ignored for training.
std::vector<RunMetric> choice_accuracy(const std::vector<TrialRecord>& records, const TaskSpec& task, Phase phase,
                                       PairSet pairs = PairSet::all);

// Transfer trials with non-tied relative values: fraction choosing the
// option with the higher relative value.
std::vector<RunMetric> higher_relative_choice_rate(const std::vector<TrialRecord>& records, const TaskSpec& task);

// Exact rate for an agent that always takes the higher-EV option (coin flip,
// credited 0.5, on equal EVs) over the transfer pairs with non-tied labels.
double ideal_choice_rate(const TaskSpec& task);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool ci_defined = false;  // false for n < 2; se and bounds are NaN then
};

// Mean, sample SD, SE = SD / sqrt(n), CI95 = mean +- 1.96 SE.
Summary summarize(std::span<const double> values);

// Non-missing values of a metric.
std::vector<double> metric_values(std::span<const RunMetric> metrics);

// True iff the CI lower bound is strictly above the ideal rate.
bool bias_flag(double mean, double ci_low, double ideal);
bool bias_flag(const Summary& s, double ideal);

struct PairedContrast {
  std::size_t n_pairs = 0;
  Summary difference;  // a - b over runs present in both
};

// Pairs runs by run id (same seeds share schedules across styles).
PairedContrast paired_contrast(std::span<const RunMetric> a, std::span<const RunMetric> b);

struct MetricRow {
  std::string task;
  std::string style;
  std::string agent;  // empty when collapsed across agents
  std::string metric;
  Summary summary;
};

// Groups by (task, style, agent) or, when collapse_agents, by (task, style).
std::vector<MetricRow> summarize_groups(std::span<const RunMetric> metrics, const std::string& metric_name,
                                        bool collapse_agents = false);

struct BiasRow {
  std::string task;
  std::string style;
  Summary summary;
  double ideal = 0.0;
  bool biased = false;
};

// Higher-relative choice rates collapsed across agents per (task, style).
std::vector<BiasRow> bias_table(const std::vector<TrialRecord>& records, const TaskSpec& task);

struct PredictiveSummary {
  // context id -> per-presentation proportion of highest-EV choices
  std::map<int, std::vector<double>> learning_curves;
  std::map<int, std::vector<std::size_t>> curve_counts;
  // option id -> times chosen / times available in transfer
  std::map<std::string, double> transfer_rates;
  std::map<std::string, std::size_t> transfer_available;
};

PredictiveSummary empirical_predictive(const std::vector<TrialRecord>& records, const TaskSpec& task);

// Simulates n_sims runs of an RL agent with the fitted parameters through the
// full prompt pipeline and summarizes them like empirical_predictive.
PredictiveSummary posterior_predictive(const FitResult& fit, const TaskSpec& task, PromptStyle style, int n_sims,
                                       std::uint64_t seed, EncodingOptions opts = {});

void write_metric_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);
void write_run_metric_csv(const std::filesystem::path& path, std::span<const RunMetric> metrics,
                          const std::string& metric_name);
void write_bias_csv(const std::filesystem::path& path, std::span<const BiasRow> rows);
// Long format: source (observed/predicted), kind (curve/transfer), key, index, value, n.
void write_predictive_csv(const std::filesystem::path& path, const PredictiveSummary& observed,
                          const std::optional<PredictiveSummary>& predicted);

}  // namespace relval
