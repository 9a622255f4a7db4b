#include <doctest.h>

#include <cmath>

#include "relval/error.hpp"
#include "relval/fitting.hpp"
#include "relval/rng.hpp"
#include "test_util.hpp"

using namespace relval;
using relval::test::task;

namespace {

FitResult fake_fit(const std::string& variant, double bic, const std::string& fp = "d") {
  FitResult f;
  f.variant = ModelVariant::parse(variant);
  f.k = f.variant.n_params();
  f.bic = bic;
  f.nll = bic / 2;
  f.n_choices = 100;
  f.data_fingerprint = fp;
  return f;
}

OptimizerConfig quick(int starts = 4, std::uint64_t seed = 1) {
  OptimizerConfig c;
  c.starts = starts;
  c.seed = seed;
  return c;
}

ModelParams reference_truth() {
  ModelParams p;
  p.omega = 0.6;
  p.alpha_con = 0.5;
  p.alpha_dis = 0.17;
  p.beta_train = p.beta_transfer = 10;
  p.bias = 1.2;
  return p;
}

}  // namespace

TEST_SUITE("fitting") {

TEST_CASE("bic") {
  CHECK(compute_bic(50, 2, 100) == doctest::Approx(109.2103).epsilon(1e-6));
  CHECK(std::abs(compute_bic(50, 2, 100) - (2 * std::log(100.0) + 100)) < 1e-12);
  CHECK_THROWS_AS(compute_bic(50, 0, 100), Error);
  CHECK_THROWS_AS(compute_bic(50, 2, 0), Error);
  for (double nll : {1.0, 13.7, 250.0})
    CHECK(compute_bic(2 * nll, 5, 300) - compute_bic(nll, 5, 300) == doctest::Approx(2 * nll));
}

TEST_CASE("comparison") {
  const std::vector<FitResult> fits{fake_fit("ABS", 100), fake_fit("REL", 90), fake_fit("REL-full", 95)};
  const auto cmp = compare_models(fits);
  CHECK(cmp.best == ModelVariant::parse("REL"));
  CHECK(cmp.ranking.front().delta_bic == 0.0);
  CHECK(cmp.ranking.back().delta_bic == doctest::Approx(10));

  const std::vector<FitResult> tie{fake_fit("REL-2a", 80), fake_fit("ABS-2a", 80)};
  CHECK(compare_models(tie).best == ModelVariant::parse("ABS-2a"));

  const std::vector<FitResult> mixed{fake_fit("ABS", 80, "x"), fake_fit("REL", 70, "y")};
  CHECK_THROWS_AS(compare_models(mixed), Error);
}

TEST_CASE("parameter transforms") {
  Rng rng(1);
  for (const auto& v : ModelVariant::all()) {
    CHECK(free_parameter_names(v).size() == static_cast<std::size_t>(v.n_params()));
    for (int i = 0; i < 200; ++i) {
      ModelParams p;
      p.omega = 0.01 + 0.98 * rng.uniform01();
      p.alpha_con = 0.01 + 0.98 * rng.uniform01();
      p.alpha_dis = 0.01 + 0.98 * rng.uniform01();
      p.beta_train = 0.05 + 60 * rng.uniform01();
      p.beta_transfer = 0.05 + 60 * rng.uniform01();
      p.bias = rng.normal(0, 2);
      p = p.constrained(v);
      const auto x = to_unconstrained(p, v);
      CHECK(x.size() == static_cast<std::size_t>(v.n_params()));
      const auto back = from_unconstrained(x, v);
      CHECK(back.omega == doctest::Approx(p.omega).epsilon(1e-9));
      CHECK(back.alpha_dis == doctest::Approx(p.alpha_dis).epsilon(1e-9));
      CHECK(back.beta_transfer == doctest::Approx(p.beta_transfer).epsilon(1e-9));
      CHECK(back.bias == doctest::Approx(p.bias).epsilon(1e-9));
    }
    // Any real vector maps into bounds.
    std::vector<double> wild(static_cast<std::size_t>(v.n_params()));
    for (auto& w : wild) w = rng.normal(0, 40);
    CHECK_NOTHROW(from_unconstrained(wild, v).validate());
  }
}

TEST_CASE("fit recovers a generating model") {
  const auto& hw = task("HW2023a");
  const auto rel = ModelVariant::parse("REL-full");
  const auto data = simulate_choice_data(hw, {}, rel, reference_truth(), 30, 2);
  const auto fit = fit_model(rel, data, quick(6));
  CHECK(fit.converged);
  CHECK(fit.k == 6);
  CHECK(fit.n_choices == data.n_valid_choices());
  CHECK(fit.bic == doctest::Approx(compute_bic(fit.nll, 6, fit.n_choices)));
  CHECK(std::abs(fit.params.omega - 0.6) < 0.15);
  CHECK(fit.nll <= negative_log_likelihood(reference_truth(), rel, data) + 1e-6);
  for (const auto& s : fit.starts) CHECK(s.final_nll <= s.start_nll + 1e-9);

  SUBCASE("deterministic under a seed") {
    const auto again = fit_model(rel, data, quick(6));
    CHECK(again.nll == fit.nll);
    CHECK(again.params.omega == fit.params.omega);
  }
  SUBCASE("parallel starts agree") {
    auto cfg = quick(6);
    cfg.jobs = 3;
    CHECK(fit_model(rel, data, cfg).nll == fit.nll);
  }
  SUBCASE("json round trip") {
    const std::vector<FitResult> fits{fit};
    const auto back = fits_from_json(fits_to_json(fits));
    REQUIRE(back.size() == 1);
    CHECK(back[0].variant == rel);
    CHECK(back[0].nll == doctest::Approx(fit.nll).epsilon(1e-12));
    CHECK(back[0].params.alpha_dis == doctest::Approx(fit.params.alpha_dis).epsilon(1e-12));
    CHECK(back[0].starts.size() == fit.starts.size());
    CHECK(back[0].data_fingerprint == fit.data_fingerprint);
    CHECK_THROWS_AS(fits_from_json("{\"schema_version\": 7}"), SchemaError);
  }
}

TEST_CASE("absolute data fit with a relative model") {
  const auto& hw = task("HW2023a");
  ModelParams abs = reference_truth();
  abs.omega = 0;
  const auto data = simulate_choice_data(hw, {}, ModelVariant::parse("ABS-full"), abs, 30, 4);
  const auto fits = fit_all_variants(data, quick(4, 9));
  CHECK(fits.size() == 8);
  for (const auto& f : fits)
    if (f.variant.encoding == Encoding::rel) {
      CHECK(f.params.omega < 0.1);
      // Nested models never fit worse than their ABS twin.
      for (const auto& g : fits)
        if (g.variant.encoding == Encoding::abs && g.variant.learning == f.variant.learning &&
            g.variant.response == f.variant.response)
          CHECK(f.nll <= g.nll + 1e-4);
    }
  CHECK(compare_models(fits).best.encoding == Encoding::abs);
}

TEST_CASE("empty data is an error") {
  ChoiceData none;
  none.option_ids = {"1H", "1L"};
  CHECK_THROWS_AS(fit_model(ModelVariant::parse("ABS"), none, quick()), Error);
}

TEST_CASE("recovery report") {
  const auto& hw = task("HW2023a");
  const auto full = ModelVariant::parse("REL-full");
  const auto report = recovery_report(reference_truth(), full, 2, hw, {}, 20, quick(3), 5);
  CHECK(report.rows.size() == 6);
  CHECK(report.estimates.size() == 2);
  CHECK(report.omega_identifiable);

  ModelParams flat = reference_truth();
  flat.beta_train = flat.beta_transfer = 0;
  flat.bias = 0;
  const auto uniform = recovery_report(flat, ModelVariant::parse("REL"), 2, hw, {}, 20, quick(3), 6);
  CHECK_FALSE(uniform.omega_identifiable);
  for (const auto& e : uniform.estimates) CHECK(e.beta_train < 1.0);
}

TEST_CASE("omega error shrinks with more runs") {
  // sqrt(10) more data should cut RMSE well below half.
  const auto& hw = task("HW2023a");
  const auto rel = ModelVariant::parse("REL");
  ModelParams truth = reference_truth();
  truth.alpha_dis = truth.alpha_con;
  truth.bias = 0;
  const auto small = recovery_report(truth, rel, 6, hw, {}, 30, quick(3), 21);
  const auto large = recovery_report(truth, rel, 6, hw, {}, 300, quick(3), 22);
  const auto rmse = [](const RecoveryReport& r) {
    for (const auto& row : r.rows)
      if (row.name == "omega") return row.rmse;
    return -1.0;
  };
  MESSAGE("omega rmse 30 runs " << rmse(small) << ", 300 runs " << rmse(large));
  CHECK(rmse(large) < 0.5 * rmse(small));
}

}
