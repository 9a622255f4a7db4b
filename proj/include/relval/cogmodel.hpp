#pragma once

// Reinforcement-learning model family for the bandit tasks.
//
// Outcomes are encoded as a mix of a globally range-normalized value and a
// value normalized by the current trial's outcomes (weight omega), learned by
// a delta rule with separate rates for confirmatory and disconfirmatory
// prediction errors, and mapped to choices by a softmax with an additive bias
// for the first-listed option.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace relval {

enum class Encoding { abs, rel };
enum class Learning { one_alpha, two_alpha };
enum class Response { one_beta, two_beta };

struct ModelVariant {
  Encoding encoding = Encoding::rel;
  Learning learning = Learning::two_alpha;
  Response response = Response::two_beta;

  // "ABS", "ABS-2a", "ABS-2b", "ABS-full", "REL", ...
  std::string name() const;
  // Free parameter count: bias always, plus omega (REL), one or two alphas, one or two betas.
  int n_params() const;
  bool operator==(const ModelVariant&) const = default;

  static ModelVariant parse(std::string_view name);  // case-insensitive; accepts "relfull" etc.
  static std::array<ModelVariant, 8> all();
};

struct ModelParams {
  double omega = 0.0;
  double alpha_con = 0.5;
  double alpha_dis = 0.5;
  double beta_train = 1.0;
  double beta_transfer = 1.0;
  double bias = 0.0;

  // Throws Error when out of bounds.
  void validate() const;
  // Applies the variant's ties: ABS -> omega = 0, one alpha -> dis = con, one beta -> transfer = train.
  ModelParams constrained(const ModelVariant& v) const;
};

struct EncodingOptions {
  // Fold the current trial's outcomes into the running range before encoding them.
  bool range_includes_current = true;
};

enum class Phase { training, transfer };

std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view s);

class EncodingState {
 public:
  explicit EncodingState(std::size_t n_options = 0) : q_(n_options, 0.5) {}

  void reset(std::size_t n_options);
  void include_in_range(std::span<const double> outcomes);

  bool has_range() const { return has_range_; }
  double running_min() const { return min_; }
  double running_max() const { return max_; }
  void set_range(double lo, double hi);

  std::span<const double> q() const { return q_; }
  double q(std::size_t option) const { return q_[option]; }
  void set_q(std::size_t option, double value) { q_[option] = value; }

 private:
  std::vector<double> q_;
  double min_ = 0.0;
  double max_ = 0.0;
  bool has_range_ = false;
};

// v = (1 - omega) * x_abs + omega * x_rel. Components with a degenerate
// range are 0.5; values outside the running range are clamped to [0, 1].
double subjective_value(double x, std::span<const double> trial_outcomes, const EncodingState& state,
                        double omega);

// Delta-rule update for each offered option. values[k] belongs to offered[k].
// chosen = position in `offered`, or nullopt when no valid choice was made.
void update_expectancies(EncodingState& state, std::span<const std::size_t> offered,
                         std::optional<std::size_t> chosen, std::span<const double> values, double alpha_con,
                         double alpha_dis);

// Softmax over offered options in listed order; offered[0] gets the bias.
std::vector<double> choice_probabilities(const EncodingState& state, std::span<const std::size_t> offered,
                                         double beta, double bias);

// A simulated learner: holds EncodingState and applies one model.
class Learner {
 public:
  Learner(const ModelParams& params, std::size_t n_options, EncodingOptions opts = {});

  std::vector<double> probabilities(std::span<const std::size_t> offered, Phase phase) const;
  // Complete feedback: outcomes[k] for offered[k].
  void learn(std::span<const std::size_t> offered, std::optional<std::size_t> chosen,
             std::span<const double> outcomes);

  const EncodingState& state() const { return state_; }
  const ModelParams& params() const { return params_; }

 private:
  ModelParams params_;
  EncodingOptions opts_;
  EncodingState state_;
};

// Compact replay form of one logged choice.
struct ChoiceTrial {
  Phase phase = Phase::training;
  std::size_t n_offered = 2;
  std::array<std::size_t, 3> offered{};  // option indices, listed order
  int chosen = -1;                       // position in offered; -1 = invalid reply
  std::array<double, 3> outcomes{};      // training only
};

struct RunChoices {
  int run = 0;
  std::vector<ChoiceTrial> trials;
};

struct ChoiceData {
  std::vector<std::string> option_ids;  // index -> option id
  std::vector<RunChoices> runs;

  std::size_t n_valid_choices() const;
  std::size_t n_valid_choices(Phase phase) const;
};

double run_negative_log_likelihood(const ModelParams& params, const RunChoices& run, std::size_t n_options,
                                   EncodingOptions opts = {});

// Sum over runs of -ln p(observed choice). Invalid trials contribute no
// likelihood but their feedback still updates state; transfer trials never update.
// Throws Error on an empty valid-choice set or a variant the data cannot identify.
double negative_log_likelihood(const ModelParams& params, const ModelVariant& variant, const ChoiceData& data,
                               EncodingOptions opts = {});

}  // namespace relval
