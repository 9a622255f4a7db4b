#include "relval/cogmodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "relval/error.hpp"

namespace relval {

std::string ModelVariant::name() const {
  std::string n = encoding == Encoding::abs ? "ABS" : "REL";
  const bool two_a = learning == Learning::two_alpha;
  const bool two_b = response == Response::two_beta;
  if (two_a && two_b) return n + "-full";
  if (two_a) return n + "-2a";
  if (two_b) return n + "-2b";
  return n;
}

int ModelVariant::n_params() const {
  return 1 + (encoding == Encoding::rel ? 1 : 0) + (learning == Learning::two_alpha ? 2 : 1) +
         (response == Response::two_beta ? 2 : 1);
}

ModelVariant ModelVariant::parse(std::string_view name) {
  std::string s;
  for (char c : name)
    if (c != '-' && c != '_' && c != ' ') s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  ModelVariant v;
  std::string rest;
  if (s.rfind("abs", 0) == 0) {
    v.encoding = Encoding::abs;
  } else if (s.rfind("rel", 0) == 0) {
    v.encoding = Encoding::rel;
  } else {
    throw ConfigError("unknown model variant '" + std::string(name) + "'");
  }
  rest = s.substr(3);
  if (rest.empty()) {
    v.learning = Learning::one_alpha;
    v.response = Response::one_beta;
  } else if (rest == "2a") {
    v.learning = Learning::two_alpha;
    v.response = Response::one_beta;
  } else if (rest == "2b") {
    v.learning = Learning::one_alpha;
    v.response = Response::two_beta;
  } else if (rest == "full") {
    v.learning = Learning::two_alpha;
    v.response = Response::two_beta;
  } else {
    throw ConfigError("unknown model variant '" + std::string(name) + "'");
  }
  return v;
}

std::array<ModelVariant, 8> ModelVariant::all() {
  std::array<ModelVariant, 8> out;
  std::size_t i = 0;
  for (auto e : {Encoding::abs, Encoding::rel})
    for (auto l : {Learning::one_alpha, Learning::two_alpha})
      for (auto r : {Response::one_beta, Response::two_beta}) out[i++] = ModelVariant{e, l, r};
  return out;
}

void ModelParams::validate() const {
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!unit(omega)) throw Error("omega must lie in [0, 1]");
  if (!unit(alpha_con) || !unit(alpha_dis)) throw Error("learning rates must lie in [0, 1]");
  if (!(beta_train >= 0.0) || !(beta_transfer >= 0.0)) throw Error("inverse temperatures must be >= 0");
  if (!std::isfinite(bias) || !std::isfinite(beta_train) || !std::isfinite(beta_transfer))
    throw Error("parameters must be finite");
}

ModelParams ModelParams::constrained(const ModelVariant& v) const {
  ModelParams p = *this;
  if (v.encoding == Encoding::abs) p.omega = 0.0;
  if (v.learning == Learning::one_alpha) p.alpha_dis = p.alpha_con;
  if (v.response == Response::one_beta) p.beta_transfer = p.beta_train;
  return p;
}

std::string_view phase_name(Phase p) { return p == Phase::training ? "training" : "transfer"; }

Phase parse_phase(std::string_view s) {
  if (s == "training") return Phase::training;
  if (s == "transfer") return Phase::transfer;
  throw SchemaError("unknown phase '" + std::string(s) + "'");
}

void EncodingState::reset(std::size_t n_options) {
  q_.assign(n_options, 0.5);
  has_range_ = false;
  min_ = max_ = 0.0;
}

void EncodingState::include_in_range(std::span<const double> outcomes) {
  for (double x : outcomes) {
    if (!has_range_) {
      min_ = max_ = x;
      has_range_ = true;
    } else {
      min_ = std::min(min_, x);
      max_ = std::max(max_, x);
    }
  }
}

void EncodingState::set_range(double lo, double hi) {
  if (lo > hi) throw Error("running range requires min <= max");
  min_ = lo;
  max_ = hi;
  has_range_ = true;
}

namespace {

double range_normalize(double x, double lo, double hi) {
  if (!(hi > lo)) return 0.5;
  return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
}

}  // namespace

double subjective_value(double x, std::span<const double> trial_outcomes, const EncodingState& state,
                        double omega) {
  const double abs_part = state.has_range() ? range_normalize(x, state.running_min(), state.running_max()) : 0.5;
  if (omega == 0.0) return abs_part;
  const auto [lo, hi] = std::minmax_element(trial_outcomes.begin(), trial_outcomes.end());
  const double rel_part = trial_outcomes.empty() ? 0.5 : range_normalize(x, *lo, *hi);
  return (1.0 - omega) * abs_part + omega * rel_part;
}

void update_expectancies(EncodingState& state, std::span<const std::size_t> offered,
                         std::optional<std::size_t> chosen, std::span<const double> values, double alpha_con,
                         double alpha_dis) {
  if (values.size() != offered.size()) throw Error("update_expectancies: one value per offered option required");
  for (std::size_t k = 0; k < offered.size(); ++k) {
    const double q = state.q(offered[k]);
    const double pe = values[k] - q;
    const bool is_chosen = chosen && *chosen == k;
    const bool confirmatory = (is_chosen && pe > 0.0) || (!is_chosen && pe < 0.0);
    state.set_q(offered[k], q + (confirmatory ? alpha_con : alpha_dis) * pe);
  }
}

std::vector<double> choice_probabilities(const EncodingState& state, std::span<const std::size_t> offered,
                                         double beta, double bias) {
  std::vector<double> logits(offered.size());
  for (std::size_t k = 0; k < offered.size(); ++k) logits[k] = beta * state.q(offered[k]) + (k == 0 ? bias : 0.0);
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (auto& l : logits) total += (l = std::exp(l - top));
  for (auto& l : logits) l /= total;
  return logits;
}

Learner::Learner(const ModelParams& params, std::size_t n_options, EncodingOptions opts)
    : params_(params), opts_(opts), state_(n_options) {
  params_.validate();
}

std::vector<double> Learner::probabilities(std::span<const std::size_t> offered, Phase phase) const {
  const double beta = phase == Phase::training ? params_.beta_train : params_.beta_transfer;
  return choice_probabilities(state_, offered, beta, params_.bias);
}

void Learner::learn(std::span<const std::size_t> offered, std::optional<std::size_t> chosen,
                    std::span<const double> outcomes) {
  if (opts_.range_includes_current) state_.include_in_range(outcomes);
  std::array<double, 3> values{};
  for (std::size_t k = 0; k < offered.size(); ++k)
    values[k] = subjective_value(outcomes[k], outcomes, state_, params_.omega);
  update_expectancies(state_, offered, chosen, std::span<const double>(values.data(), offered.size()),
                      params_.alpha_con, params_.alpha_dis);
  if (!opts_.range_includes_current) state_.include_in_range(outcomes);
}

std::size_t ChoiceData::n_valid_choices() const {
  std::size_t n = 0;
  for (const auto& r : runs)
    for (const auto& t : r.trials) n += t.chosen >= 0;
  return n;
}

std::size_t ChoiceData::n_valid_choices(Phase phase) const {
  std::size_t n = 0;
  for (const auto& r : runs)
    for (const auto& t : r.trials) n += t.chosen >= 0 && t.phase == phase;
  return n;
}

double run_negative_log_likelihood(const ModelParams& params, const RunChoices& run, std::size_t n_options,
                                   EncodingOptions opts) {
  // Allocation-free replay of Learner; equivalence is covered by the unit tests.
  params.validate();
  std::vector<double> q(n_options, 0.5);
  double lo = 0.0, hi = 0.0;
  bool has_range = false;
  auto widen = [&](const ChoiceTrial& t) {
    for (std::size_t k = 0; k < t.n_offered; ++k) {
      const double x = t.outcomes[k];
      if (!has_range) {
        lo = hi = x;
        has_range = true;
      } else {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
  };
  const double w = params.omega;
  double nll = 0.0;
  for (const auto& t : run.trials) {
    const std::size_t n = t.n_offered;
    if (t.chosen >= 0) {
      const double beta = t.phase == Phase::training ? params.beta_train : params.beta_transfer;
      std::array<double, 3> logits{};
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) {
        logits[k] = beta * q[t.offered[k]] + (k == 0 ? params.bias : 0.0);
        top = std::max(top, logits[k]);
      }
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) total += std::exp(logits[k] - top);
      nll -= logits[static_cast<std::size_t>(t.chosen)] - top - std::log(total);
    }
    if (t.phase != Phase::training) continue;
    if (opts.range_includes_current) widen(t);
    double tlo = t.outcomes[0], thi = t.outcomes[0];
    for (std::size_t k = 1; k < n; ++k) {
      tlo = std::min(tlo, t.outcomes[k]);
      thi = std::max(thi, t.outcomes[k]);
    }
    std::array<double, 3> values{};
    for (std::size_t k = 0; k < n; ++k) {
      const double x = t.outcomes[k];
      const double abs_part = has_range ? range_normalize(x, lo, hi) : 0.5;
      values[k] = w == 0.0 ? abs_part : (1.0 - w) * abs_part + w * range_normalize(x, tlo, thi);
    }
    for (std::size_t k = 0; k < n; ++k) {
      double& qk = q[t.offered[k]];
      const double pe = values[k] - qk;
      const bool is_chosen = t.chosen == static_cast<int>(k);
      const bool confirmatory = (is_chosen && pe > 0.0) || (!is_chosen && pe < 0.0);
      qk += (confirmatory ? params.alpha_con : params.alpha_dis) * pe;
    }
    if (!opts.range_includes_current) widen(t);
  }
  return nll;
}

double negative_log_likelihood(const ModelParams& params, const ModelVariant& variant, const ChoiceData& data,
                               EncodingOptions opts) {
  if (data.n_valid_choices() == 0) throw Error("no valid choices to evaluate");
  if (variant.response == Response::two_beta &&
      (data.n_valid_choices(Phase::training) == 0 || data.n_valid_choices(Phase::transfer) == 0))
    throw Error("variant " + variant.name() + " needs valid choices in both phases");
  const auto p = params.constrained(variant);
  double total = 0.0;
  for (const auto& run : data.runs) total += run_negative_log_likelihood(p, run, data.option_ids.size(), opts);
  return total;
}

}  // namespace relval
