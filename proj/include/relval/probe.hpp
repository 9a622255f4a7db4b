#pragma once

// Per-hidden-unit regressions of activation matrices on absolute and
// relative value differences of the two options in each prompt.
//
// Activation file: one ASCII header line
//   RVACT1 rows=<R> cols=<C> dtype=f32le\n
// followed by exactly R*C little-endian IEEE-754 float32 values, row-major
// (row = trial, column = hidden unit). Trial metadata lives in a JSONL
// sidecar with one object per row: {"first": "<option id>", "second": "<option id>"}.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "relval/analysis.hpp"
#include "relval/taskdef.hpp"

namespace relval {

struct ActivationMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;  // row-major

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

ActivationMatrix read_activations(const std::filesystem::path& path);
void write_activations(const std::filesystem::path& path, const ActivationMatrix& m);

struct ProbeTrial {
  std::string first;
  std::string second;
};

std::vector<ProbeTrial> read_probe_trials(const std::filesystem::path& path);
void write_probe_trials(const std::filesystem::path& path, std::span<const ProbeTrial> trials);

struct ValueDifference {
  double abs = 0.0;  // (EV_first - EV_second) / (EV_max - EV_min) over the task's options
  double rel = 0.0;  // difference of relative values min-max scaled over the task's options
};

// Throws ConfigError on an unknown option id.
std::vector<ValueDifference> value_difference_predictors(std::span<const ProbeTrial> trials, const TaskSpec& task);

enum class UnitClass { neither, abs_only, rel_only, both };
std::string_view unit_class_name(UnitClass c);

struct UnitRegressionResult {
  std::size_t unit = 0;
  double intercept = 0.0;
  double slope_abs = 0.0;
  double slope_rel = 0.0;
  double t_abs = 0.0;
  double t_rel = 0.0;
  double p_abs = 1.0;
  double p_rel = 1.0;
  UnitClass classification = UnitClass::neither;
};

// .001 / (2 * n_units)
double critical_p_value(std::size_t n_units);

// OLS with intercept per column; two-sided t-tests on both slopes with
// rows - 3 degrees of freedom. p_crit <= 0 selects critical_p_value(cols).
// Throws Error when rows disagree, rows < 4, or the design is rank deficient
// (the message names the offending predictor).
std::vector<UnitRegressionResult> unit_regressions(const ActivationMatrix& acts,
                                                   std::span<const ValueDifference> predictors,
                                                   double p_crit = 0.0);

struct ClassificationCounts {
  std::size_t neither = 0;
  std::size_t abs_only = 0;
  std::size_t rel_only = 0;
  std::size_t both = 0;
  std::size_t total() const { return neither + abs_only + rel_only + both; }
};

ClassificationCounts classification_counts(std::span<const UnitRegressionResult> results);

struct EffectSizeSummary {
  Summary abs_slope;   // |slope_abs| over units
  Summary rel_slope;   // |slope_rel| over units
  Summary difference;  // |slope_rel| - |slope_abs|, paired by unit
};

EffectSizeSummary effect_size_summary(std::span<const UnitRegressionResult> results);

void write_unit_results_csv(const std::filesystem::path& path, std::span<const UnitRegressionResult> results);
// category,count,percent
void write_classification_csv(const std::filesystem::path& path, const ClassificationCounts& counts);

}  // namespace relval
