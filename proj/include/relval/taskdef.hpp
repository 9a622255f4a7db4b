#pragma once

// Bandit task definitions: option reward distributions, fixed training
// contexts, reward schedules and trial orders.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace relval {

inline constexpr int kTaskSchemaVersion = 1;

// Relative-value scores closer than this are treated as tied.
inline constexpr double kTieTolerance = 1e-9;

enum class DistKind { bernoulli, gaussian };

// Bernoulli: `high` with probability p, otherwise `low` (high > low).
// Gaussian: N(mean, sd), sd > 0.
struct RewardDist {
  DistKind kind = DistKind::gaussian;
  double high = 0.0;
  double p = 0.0;
  double low = 0.0;
  double mean = 0.0;
  double sd = 1.0;

  static RewardDist bernoulli(double high, double p, double low);
  static RewardDist gaussian(double mean, double sd);

  double expected_value() const;
  // Throws SchemaError naming the offending field.
  void validate(std::string_view option_id) const;
};

enum class Role { low, medium, high };

std::string_view role_name(Role r);
Role parse_role(std::string_view s);

struct ContextMember {
  std::string option;
  Role role = Role::low;
};

struct TrainingContext {
  int id = 0;
  std::vector<ContextMember> members;
};

struct Option {
  std::string id;
  RewardDist dist;
};

// How outcomes are written in prompts. Symbol-style currencies render as
// "$27.14"; unit-style as "1 point" / "0 points".
struct Currency {
  std::string label;
  std::string symbol;
  std::string unit;
  std::string unit_plural;
  int decimals = 0;
};

struct TaskSpec {
  std::string name;
  Currency currency;
  std::vector<Option> options;
  std::vector<TrainingContext> contexts;
  int training_reps = 0;
  int transfer_reps = 1;

  std::size_t option_index(std::string_view id) const;  // throws on unknown id
  std::size_t context_index_of_option(std::size_t option) const;
  std::vector<std::size_t> context_option_indices(std::size_t context) const;
  double expected_value(std::size_t option) const { return options[option].dist.expected_value(); }

  std::size_t n_training_trials() const { return contexts.size() * static_cast<std::size_t>(training_reps); }
  std::size_t n_transfer_trials() const;

  // Throws SchemaError if any TaskSpec invariant is broken.
  void validate() const;
};

// Parses YAML text holding one document per task.
std::vector<TaskSpec> parse_task_catalog(const std::string& text);
std::vector<TaskSpec> load_task_catalog(const std::filesystem::path& path);
const TaskSpec& find_task(const std::vector<TaskSpec>& catalog, std::string_view name);

// What to do when p * training_reps is not an integer.
enum class RoundingPolicy { exact, nearest };

// outcomes[option index][presentation index], rounded to the currency's decimals.
struct RewardSchedule {
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> outcomes;
};

RewardSchedule build_reward_schedule(const TaskSpec& task, std::uint64_t seed,
                                     RoundingPolicy policy = RoundingPolicy::exact);

// Context indices in presentation order; each appears training_reps times.
std::vector<std::size_t> training_sequence(const TaskSpec& task, std::uint64_t seed);

using OptionPair = std::pair<std::size_t, std::size_t>;

// All unordered option pairs (i < j) in lexicographic order, each repeated
// transfer_reps times consecutively. Callers shuffle.
std::vector<OptionPair> enumerate_transfer_pairs(const TaskSpec& task);

// P(option's outcome strictly exceeds a same-context partner's), averaged
// over partners. Indexed by option.
std::vector<double> relative_value_labels(const TaskSpec& task);

// Strict-exceedance probability between two distributions.
double exceedance_probability(const RewardDist& x, const RewardDist& y);

double round_to_decimals(double value, int decimals);

}  // namespace relval
