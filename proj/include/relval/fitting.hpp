#pragma once

// Maximum-likelihood fitting of the model family, BIC comparison and a
// parameter-recovery harness.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "relval/cogmodel.hpp"
#include "relval/promptgen.hpp"
#include "relval/taskdef.hpp"

namespace relval {

inline constexpr int kFitSchemaVersion = 1;

struct OptimizerConfig {
  int starts = 20;
  std::uint64_t seed = 0;
  int max_iterations = 4000;
  double size_tolerance = 1e-6;  // simplex size in transformed space
  // A start also counts as converged when the best value moved less than
  // stall_tolerance over stall_window iterations (beta drifting to infinity
  // on near-deterministic data never shrinks the simplex).
  int stall_window = 300;
  double stall_tolerance = 1e-9;
  double initial_step = 1.0;
  // Start sampling ranges (natural scale).
  double unit_start_min = 0.02;
  double unit_start_max = 0.98;
  double beta_start_min = 0.1;
  double beta_start_max = 30.0;
  double bias_start_min = -3.0;
  double bias_start_max = 3.0;
  EncodingOptions encoding;
  int jobs = 1;
};

struct StartTrace {
  ModelParams start;
  double start_nll = 0.0;
  ModelParams end;
  double final_nll = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string status;
};

struct FitResult {
  ModelVariant variant;
  ModelParams params;
  double nll = 0.0;
  std::size_t n_choices = 0;
  int k = 0;
  double bic = 0.0;
  int n_starts = 0;
  int best_start = -1;
  bool converged = false;
  std::vector<StartTrace> starts;
  std::string data_fingerprint;
};

// k * ln(n) + 2 * nll. Throws Error for n == 0 or k < 1.
double compute_bic(double nll, int k, std::size_t n);

// Stable hash of the choice data a fit was computed on.
std::string choice_data_fingerprint(const ChoiceData& data);

// Free-parameter vector of a variant in unconstrained coordinates:
// logit for omega and alphas, inverse softplus for betas, identity for b.
std::vector<double> to_unconstrained(const ModelParams& p, const ModelVariant& v);
ModelParams from_unconstrained(std::span<const double> x, const ModelVariant& v);
std::vector<std::string> free_parameter_names(const ModelVariant& v);

// Multi-start Nelder-Mead. Latin-hypercube starts are followed by any
// extra_starts. Throws FitError when no start converges.
FitResult fit_model(const ModelVariant& variant, const ChoiceData& data, const OptimizerConfig& cfg,
                    std::span<const ModelParams> extra_starts = {});

// All eight variants; every REL variant additionally starts from its ABS
// counterpart's optimum (omega ~ 0) so nested dominance holds.
std::vector<FitResult> fit_all_variants(const ChoiceData& data, const OptimizerConfig& cfg);

struct ComparisonRow {
  ModelVariant variant;
  int k = 0;
  double nll = 0.0;
  double bic = 0.0;
  double delta_bic = 0.0;
};

struct ModelComparison {
  std::vector<ComparisonRow> ranking;  // ascending BIC
  ModelVariant best;
};

// Ties (|dBIC| < 1e-6) go to fewer parameters. Throws Error when the fits
// were computed on different data.
ModelComparison compare_models(std::span<const FitResult> fits);

struct FitError : std::runtime_error {
  FitError(const std::string& what, std::vector<StartTrace> traces)
      : std::runtime_error(what), traces(std::move(traces)) {}
  std::vector<StartTrace> traces;
};

// Fit results as JSON (schema-versioned).
std::string fits_to_json(std::span<const FitResult> fits);
std::vector<FitResult> fits_from_json(const std::string& text);
void write_fits(const std::filesystem::path& path, std::span<const FitResult> fits);
std::vector<FitResult> read_fits(const std::filesystem::path& path);

struct ParameterRecovery {
  std::string name;
  double truth = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;  // mean error
  double rmse = 0.0;
};

struct RecoveryReport {
  ModelVariant variant;
  int n_reps = 0;
  int n_runs = 0;
  std::vector<ParameterRecovery> rows;
  std::vector<ModelParams> estimates;
  // Max - min of the NLL over omega in {0, .25, .5, .75, 1} at each
  // replication's other fitted parameters, median over reps. Below 1.92
  // (half the 95% chi-square quantile, 1 df) the likelihood-ratio interval
  // for omega spans [0, 1] and omega is flagged as unidentifiable.
  double omega_profile_range = 0.0;
  bool omega_identifiable = true;
};

// Simulate n_reps datasets of n_runs runs from truth, fit `variant` to each,
// and aggregate error per free parameter.
RecoveryReport recovery_report(const ModelParams& truth, const ModelVariant& variant, int n_reps,
                               const TaskSpec& task, PromptStyle style, int n_runs, const OptimizerConfig& cfg,
                               std::uint64_t seed);

// Replay form of a simulated batch of an RL agent.
ChoiceData simulate_choice_data(const TaskSpec& task, PromptStyle style, const ModelVariant& variant,
                                const ModelParams& params, int n_runs, std::uint64_t seed,
                                EncodingOptions opts = {});

}  // namespace relval
