#include "relval/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <tuple>

#include "relval/agents.hpp"
#include "relval/error.hpp"
#include "relval/runner.hpp"

namespace relval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool same_value(double a, double b) { return std::abs(a - b) <= kTieTolerance; }

using RunKey = std::tuple<std::string, std::string, std::string, int>;

struct Tally {
  double hits = 0.0;
  std::size_t n = 0;
};

std::vector<RunMetric> finish(const std::map<RunKey, Tally>& tallies) {
  std::vector<RunMetric> out;
  for (const auto& [key, t] : tallies) {
    RunMetric m;
    std::tie(m.task, m.style, m.agent, m.run) = key;
    m.n = t.n;
    m.missing = t.n == 0;
    m.value = m.missing ? kNaN : t.hits / static_cast<double>(t.n);
    out.push_back(m);
  }
  return out;
}

void check_task(const TrialRecord& r, const TaskSpec& task) {
  if (r.task != task.name) throw Error("log record for task " + r.task + " analyzed as " + task.name);
}

// Offered option indices of a record in listed order, and the chosen position.
std::vector<std::size_t> offered_indices(const TrialRecord& r, const TaskSpec& task) {
  std::vector<std::size_t> out;
  for (const auto& id : r.options) out.push_back(task.option_index(id));
  return out;
}

std::optional<std::size_t> chosen_pos(const TrialRecord& r) {
  if (!r.choice) return std::nullopt;
  for (std::size_t k = 0; k < r.offered.size(); ++k)
    if (r.offered[k] == *r.choice) return k;
  return std::nullopt;
}

bool is_highest_ev(const TaskSpec& task, const std::vector<std::size_t>& offered, std::size_t pos) {
  const double chosen = task.expected_value(offered[pos]);
  for (auto o : offered)
    if (task.expected_value(o) > chosen + kTieTolerance) return false;
  return true;
}

void write_summary_fields(std::ostream& out, const Summary& s) {
  out << s.n << ',' << s.mean << ',' << s.sd << ',';
  if (s.ci_defined)
    out << s.se << ',' << s.ci_low << ',' << s.ci_high;
  else
    out << ",,";
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(10);
  return out;
}

}  // namespace

std::vector<RunMetric> choice_accuracy(const std::vector<TrialRecord>& records, const TaskSpec& task, Phase phase,
                                       PairSet pairs) {
  const auto labels = relative_value_labels(task);
  std::map<RunKey, Tally> tallies;
  for (const auto& r : records) {
    check_task(r, task);
    if (r.phase != phase) continue;
    auto& t = tallies[{r.task, r.style, r.agent, r.run}];
    const auto pos = chosen_pos(r);
    if (!pos) continue;
    const auto offered = offered_indices(r, task);
    if (phase == Phase::transfer) {
      const std::size_t a = offered[0], b = offered[1];
      const double ea = task.expected_value(a), eb = task.expected_value(b);
      if (same_value(ea, eb)) continue;
      if (pairs != PairSet::all) {
        if (same_value(labels[a], labels[b])) continue;
        const bool aligned = (ea > eb) == (labels[a] > labels[b]);
        if (aligned != (pairs == PairSet::aligned)) continue;
      }
    }
    t.n += 1;
    t.hits += is_highest_ev(task, offered, *pos) ? 1.0 : 0.0;
  }
  return finish(tallies);
}

std::vector<RunMetric> higher_relative_choice_rate(const std::vector<TrialRecord>& records, const TaskSpec& task) {
  const auto labels = relative_value_labels(task);
  std::map<RunKey, Tally> tallies;
  for (const auto& r : records) {
    check_task(r, task);
    if (r.phase != Phase::transfer) continue;
    auto& t = tallies[{r.task, r.style, r.agent, r.run}];
    const auto pos = chosen_pos(r);
    if (!pos) continue;
    const auto offered = offered_indices(r, task);
    const double la = labels[offered[0]], lb = labels[offered[1]];
    if (same_value(la, lb)) continue;
    const std::size_t higher = la > lb ? 0 : 1;
    t.n += 1;
    t.hits += *pos == higher ? 1.0 : 0.0;
  }
  return finish(tallies);
}

double ideal_choice_rate(const TaskSpec& task) {
  const auto labels = relative_value_labels(task);
  double credit = 0.0;
  std::size_t n = 0;
  for (const auto& [a, b] : enumerate_transfer_pairs(task)) {
    if (same_value(labels[a], labels[b])) continue;
    const std::size_t higher_rel = labels[a] > labels[b] ? a : b;
    const double ea = task.expected_value(a), eb = task.expected_value(b);
    ++n;
    if (same_value(ea, eb))
      credit += 0.5;
    else
      credit += ((ea > eb ? a : b) == higher_rel) ? 1.0 : 0.0;
  }
  if (n == 0) return kNaN;
  return credit / static_cast<double>(n);
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (s.n == 0) {
    s.mean = s.sd = s.se = s.ci_low = s.ci_high = kNaN;
    return s;
  }
  // Shifted by the first value so constant input gives exactly zero spread.
  const double k = values[0];
  double sum = 0.0, sum_sq = 0.0;
  for (double v : values) {
    sum += v - k;
    sum_sq += (v - k) * (v - k);
  }
  const double n = static_cast<double>(s.n);
  s.mean = k + sum / n;
  if (s.n < 2) {
    s.sd = s.se = s.ci_low = s.ci_high = kNaN;
    return s;
  }
  s.sd = std::sqrt(std::max(0.0, (sum_sq - sum * sum / n) / (n - 1)));
  s.se = s.sd / std::sqrt(static_cast<double>(s.n));
  s.ci_low = s.mean - 1.96 * s.se;
  s.ci_high = s.mean + 1.96 * s.se;
  s.ci_defined = true;
  return s;
}

std::vector<double> metric_values(std::span<const RunMetric> metrics) {
  std::vector<double> v;
  for (const auto& m : metrics)
    if (!m.missing) v.push_back(m.value);
  return v;
}

bool bias_flag(double /*mean*/, double ci_low, double ideal) { return ci_low > ideal; }

bool bias_flag(const Summary& s, double ideal) {
  if (!s.ci_defined) throw Error("bias flag needs a confidence interval from at least 2 runs");
  return bias_flag(s.mean, s.ci_low, ideal);
}

PairedContrast paired_contrast(std::span<const RunMetric> a, std::span<const RunMetric> b) {
  std::map<int, double> bv;
  for (const auto& m : b)
    if (!m.missing) bv[m.run] = m.value;
  std::vector<double> diffs;
  for (const auto& m : a) {
    if (m.missing) continue;
    const auto it = bv.find(m.run);
    if (it != bv.end()) diffs.push_back(m.value - it->second);
  }
  PairedContrast c;
  c.n_pairs = diffs.size();
  c.difference = summarize(diffs);
  return c;
}

std::vector<MetricRow> summarize_groups(std::span<const RunMetric> metrics, const std::string& metric_name,
                                        bool collapse_agents) {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
  for (const auto& m : metrics) {
    auto& g = groups[{m.task, m.style, collapse_agents ? std::string() : m.agent}];
    if (!m.missing) g.push_back(m.value);
  }
  std::vector<MetricRow> rows;
  for (const auto& [key, values] : groups) {
    MetricRow row;
    std::tie(row.task, row.style, row.agent) = key;
    row.metric = metric_name;
    row.summary = summarize(values);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<BiasRow> bias_table(const std::vector<TrialRecord>& records, const TaskSpec& task) {
  const auto rates = higher_relative_choice_rate(records, task);
  const double ideal = ideal_choice_rate(task);
  std::vector<BiasRow> out;
  for (const auto& row : summarize_groups(rates, "higher_relative_rate", true)) {
    BiasRow b;
    b.task = row.task;
    b.style = row.style;
    b.summary = row.summary;
    b.ideal = ideal;
    b.biased = row.summary.ci_defined && bias_flag(row.summary, ideal);
    out.push_back(std::move(b));
  }
  return out;
}

PredictiveSummary empirical_predictive(const std::vector<TrialRecord>& records, const TaskSpec& task) {
  PredictiveSummary s;
  std::map<int, std::vector<double>> hits;
  std::map<std::string, std::size_t> chosen;
  std::map<std::tuple<std::string, std::string, std::string, int>, std::map<int, std::size_t>> seen;
  for (const auto& r : records) {
    check_task(r, task);
    if (r.phase == Phase::training) {
      if (!r.context) throw SchemaError("training record without a context id");
      auto& count = seen[{r.task, r.style, r.agent, r.run}][*r.context];
      const std::size_t idx = count++;
      const auto pos = chosen_pos(r);
      if (!pos) continue;
      auto& h = hits[*r.context];
      auto& n = s.curve_counts[*r.context];
      if (h.size() <= idx) {
        h.resize(idx + 1, 0.0);
        n.resize(idx + 1, 0);
      }
      n[idx] += 1;
      h[idx] += is_highest_ev(task, offered_indices(r, task), *pos) ? 1.0 : 0.0;
    } else {
      const auto pos = chosen_pos(r);
      if (!pos) continue;
      for (std::size_t k = 0; k < r.options.size(); ++k) {
        s.transfer_available[r.options[k]] += 1;
        if (k == *pos) chosen[r.options[k]] += 1;
      }
    }
  }
  for (const auto& [ctx, h] : hits) {
    const auto& n = s.curve_counts[ctx];
    auto& curve = s.learning_curves[ctx];
    for (std::size_t i = 0; i < h.size(); ++i) curve.push_back(n[i] ? h[i] / static_cast<double>(n[i]) : kNaN);
  }
  for (const auto& [id, avail] : s.transfer_available)
    s.transfer_rates[id] = static_cast<double>(chosen[id]) / static_cast<double>(avail);
  return s;
}

PredictiveSummary posterior_predictive(const FitResult& fit, const TaskSpec& task, PromptStyle style, int n_sims,
                                       std::uint64_t seed, EncodingOptions opts) {
  if (n_sims < 1) throw ConfigError("posterior predictive needs at least one simulation");
  AgentConfig agent;
  agent.kind = AgentKind::rl_simulated;
  agent.variant = fit.variant;
  agent.params = fit.params.constrained(fit.variant);
  agent.encoding = opts;
  return empirical_predictive(simulate_batch(task, style, agent, n_sims, seed), task);
}

void write_metric_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  auto out = open_csv(path);
  out << "task,style,agent,metric,n,mean,sd,se,ci_low,ci_high\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.style << ',' << r.agent << ',' << r.metric << ',';
    write_summary_fields(out, r.summary);
    out << '\n';
  }
}

void write_run_metric_csv(const std::filesystem::path& path, std::span<const RunMetric> metrics,
                          const std::string& metric_name) {
  auto out = open_csv(path);
  out << "task,style,agent,run,metric,value,n\n";
  for (const auto& m : metrics) {
    out << m.task << ',' << m.style << ',' << m.agent << ',' << m.run << ',' << metric_name << ',';
    if (!m.missing) out << m.value;
    out << ',' << m.n << '\n';
  }
}

void write_bias_csv(const std::filesystem::path& path, std::span<const BiasRow> rows) {
  auto out = open_csv(path);
  out << "task,prompt,n,mean,ci_low,ci_high,ideal,bias\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.style << ',' << r.summary.n << ',' << r.summary.mean << ',';
    if (r.summary.ci_defined)
      out << r.summary.ci_low << ',' << r.summary.ci_high;
    else
      out << ',';
    out << ',' << r.ideal << ',' << (r.biased ? "yes" : "no") << '\n';
  }
}

void write_predictive_csv(const std::filesystem::path& path, const PredictiveSummary& observed,
                          const std::optional<PredictiveSummary>& predicted) {
  auto out = open_csv(path);
  out << "source,kind,key,index,value,n\n";
  auto emit = [&](const char* source, const PredictiveSummary& s) {
    for (const auto& [ctx, curve] : s.learning_curves) {
      const auto& n = s.curve_counts.at(ctx);
      for (std::size_t i = 0; i < curve.size(); ++i) {
        out << source << ",curve," << ctx << ',' << i << ',';
        if (!std::isnan(curve[i])) out << curve[i];
        out << ',' << n[i] << '\n';
      }
    }
    for (const auto& [id, rate] : s.transfer_rates)
      out << source << ",transfer," << id << ",," << rate << ',' << s.transfer_available.at(id) << '\n';
  };
  emit("observed", observed);
  if (predicted) emit("predicted", *predicted);
}

}  // namespace relval
