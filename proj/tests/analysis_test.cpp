#include <doctest.h>

#include <cmath>

#include "relval/analysis.hpp"
#include "relval/error.hpp"
#include "relval/runner.hpp"
#include "test_util.hpp"

using namespace relval;
using relval::test::task;

namespace {

std::vector<TrialRecord> batch(const std::string& t, const std::string& agent, int runs, std::uint64_t seed) {
  return simulate_batch(task(t), {}, parse_agent_spec(agent), runs, seed);
}

Summary summary_of(const std::vector<RunMetric>& m) { return summarize(metric_values(m)); }

FitResult fit_with(const std::string& variant, ModelParams p) {
  FitResult f;
  f.variant = ModelVariant::parse(variant);
  f.params = p.constrained(f.variant);
  return f;
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("ideal rates") {
  CHECK(ideal_choice_rate(task("B2018")) == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(ideal_choice_rate(task("V2023")) == doctest::Approx(0.750).epsilon(1e-12));
  CHECK(ideal_choice_rate(task("HW2023a")) == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(ideal_choice_rate(task("BP2023")) == doctest::Approx(31.0 / 32.0).epsilon(1e-12));
  CHECK(ideal_choice_rate(task("HW2023b")) == doctest::Approx(0.500).epsilon(1e-12));
}

TEST_CASE("ideal agent") {
  for (const auto& t : relval::test::catalog()) {
    CAPTURE(t.name);
    const auto recs = batch(t.name, "ideal", 5, 3);
    for (auto phase : {Phase::training, Phase::transfer})
      for (const auto& m : choice_accuracy(recs, t, phase)) CHECK(m.value == 1.0);
    // Its relative choice rate matches the analytic ideal except for equal-EV coin flips.
    const auto rate = summary_of(higher_relative_choice_rate(recs, t));
    if (t.name != "BP2023") CHECK(rate.mean == doctest::Approx(ideal_choice_rate(t)).epsilon(1e-12));
    else CHECK(std::abs(rate.mean - ideal_choice_rate(t)) < 0.05);
  }
}

TEST_CASE("random agent") {
  const auto& hw = task("HW2023a");
  const auto s = summary_of(choice_accuracy(batch("HW2023a", "random", 30, 8), hw, Phase::training));
  CHECK(std::abs(s.mean - 0.5) < 3 * s.se);
}

TEST_CASE("always the higher relative value") {
  const auto& t = task("HW2023b");
  const auto labels = relative_value_labels(t);
  auto recs = batch("HW2023b", "random", 3, 1);
  for (auto& r : recs) {
    if (r.phase != Phase::transfer) continue;
    const auto a = t.option_index(r.options[0]), b = t.option_index(r.options[1]);
    const std::size_t k = labels[a] >= labels[b] ? 0 : 1;
    r.choice = r.offered[k];
    r.choice_option = r.options[k];
  }
  for (const auto& m : higher_relative_choice_rate(recs, t)) CHECK(m.value == 1.0);
}

TEST_CASE("relative agent") {
  const auto& hw = task("HW2023a");
  const auto recs = batch("HW2023a", "sim:REL-full:omega=0.9,alpha=0.3,beta=30,b=0", 30, 4);
  const auto train = summary_of(choice_accuracy(recs, hw, Phase::training));
  const auto conflict = summary_of(choice_accuracy(recs, hw, Phase::transfer, PairSet::conflict));
  CHECK(train.mean > conflict.mean);

  const auto& b = task("B2018");
  const auto rows = bias_table(batch("B2018", "sim:REL-full:omega=1,alpha=0.25,beta=50,b=0", 30, 2), b);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].summary.mean > ideal_choice_rate(b));
  CHECK(rows[0].biased);
}

TEST_CASE("bias flag") {
  CHECK(bias_flag(0.926, 0.906, 0.625));
  CHECK_FALSE(bias_flag(0.811, 0.792, 0.969));
  CHECK_FALSE(bias_flag(0.625, 0.625, 0.625));
  const std::vector<double> one{0.9};
  CHECK_THROWS_AS(bias_flag(summarize(one), 0.5), Error);
}

TEST_CASE("summaries") {
  const std::vector<double> same(30, 0.7);
  const auto s = summarize(same);
  CHECK(s.mean == doctest::Approx(0.7));
  CHECK(s.se == 0.0);
  CHECK(s.ci_defined);

  // mean 2.5, sample var 5/3, se = sqrt(5/12)
  const std::vector<double> v{1, 2, 3, 4};
  const auto k = summarize(v);
  CHECK(k.mean == doctest::Approx(2.5));
  CHECK(k.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(k.se == doctest::Approx(std::sqrt(5.0 / 12.0)));
  CHECK(k.ci_low == doctest::Approx(2.5 - 1.96 * std::sqrt(5.0 / 12.0)));

  const std::vector<double> single{0.4};
  const auto u = summarize(single);
  CHECK_FALSE(u.ci_defined);
  CHECK(std::isnan(u.se));
}

TEST_CASE("groups and contrasts") {
  std::vector<RunMetric> a, b;
  for (int run = 1; run <= 4; ++run) {
    a.push_back({"HW2023a", "standard", "x", run, 0.5 + 0.1 * run, 10, false});
    b.push_back({"HW2023a", "comparisons", "x", run, 0.4 + 0.1 * run, 10, false});
  }
  b.push_back({"HW2023a", "comparisons", "x", 9, 0.0, 10, false});
  const auto c = paired_contrast(a, b);
  CHECK(c.n_pairs == 4);
  CHECK(c.difference.mean == doctest::Approx(0.1));
  CHECK(c.difference.sd == doctest::Approx(0.0).epsilon(1e-9));

  auto all = a;
  all.insert(all.end(), b.begin(), b.end());
  const auto rows = summarize_groups(all, "accuracy");
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    if (r.style == "standard") CHECK(r.summary.mean == doctest::Approx(0.75));
    else CHECK(r.summary.n == 5);
  }
}

TEST_CASE("records from another task") {
  const auto recs = batch("V2023", "random", 1, 1);
  CHECK_THROWS_AS(choice_accuracy(recs, task("HW2023a"), Phase::training), Error);
}

TEST_CASE("predictive simulation") {
  const auto& hw = task("HW2023a");
  ModelParams greedy;
  greedy.alpha_con = greedy.alpha_dis = 0.3;
  greedy.beta_train = greedy.beta_transfer = 200;
  const auto pred = posterior_predictive(fit_with("ABS", greedy), hw, {}, 40, 3);
  // Greedy absolute agent: transfer choice rates follow EV.
  std::vector<std::pair<double, double>> ev_rate;
  for (std::size_t i = 0; i < hw.options.size(); ++i)
    ev_rate.emplace_back(hw.expected_value(i), pred.transfer_rates.at(hw.options[i].id));
  std::sort(ev_rate.begin(), ev_rate.end());
  for (std::size_t i = 1; i < ev_rate.size(); ++i) CHECK(ev_rate[i].second > ev_rate[i - 1].second);

  // Learning curves approach 1 by the end of training.
  for (const auto& [ctx, curve] : pred.learning_curves) {
    CHECK(curve.size() == 15);
    CHECK(curve.back() > 0.95);
    CHECK(curve.back() >= curve.front());
  }

  // Frequent winners of HW2023b gain under a relative learner.
  const auto& t = task("HW2023b");
  ModelParams rel = greedy;
  rel.omega = 1;
  rel.beta_train = rel.beta_transfer = 30;
  const auto r = posterior_predictive(fit_with("REL", rel), t, {}, 40, 4);
  const auto a = posterior_predictive(fit_with("ABS", rel), t, {}, 40, 4);
  for (const char* frequent : {"3L", "4L"}) CHECK(r.transfer_rates.at(frequent) > a.transfer_rates.at(frequent));

  const auto observed = empirical_predictive(batch("HW2023a", "ideal", 3, 1), hw);
  for (const auto& [ctx, curve] : observed.learning_curves)
    for (double x : curve) CHECK(x == 1.0);
}

TEST_CASE("csv output") {
  relval::test::TempDir dir;
  const auto& hw = task("HW2023a");
  const auto rows = bias_table(batch("HW2023a", "ideal", 3, 1), hw);
  write_bias_csv(dir / "bias.csv", rows);
  const auto text = relval::test::slurp(dir / "bias.csv");
  CHECK(text.rfind("task,prompt,n,mean,ci_low,ci_high,ideal,bias\n", 0) == 0);
  CHECK(text.find("HW2023a,standard,3,") != std::string::npos);
}

}
