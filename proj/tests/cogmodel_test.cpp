#include <doctest.h>

#include <array>
#include <cmath>
#include <numeric>

#include "relval/cogmodel.hpp"
#include "relval/error.hpp"
#include "relval/fitting.hpp"
#include "relval/rng.hpp"
#include "test_util.hpp"

using namespace relval;

namespace {

EncodingState ranged(double lo, double hi, std::size_t n = 2) {
  EncodingState s(n);
  s.set_range(lo, hi);
  return s;
}

// Straightforward replay through Learner, the reference for the fast path.
double learner_nll(const ModelParams& p, const ChoiceData& data) {
  double nll = 0;
  for (const auto& run : data.runs) {
    Learner learner(p, data.option_ids.size());
    for (const auto& t : run.trials) {
      std::span<const std::size_t> offered(t.offered.data(), t.n_offered);
      if (t.chosen >= 0) nll -= std::log(learner.probabilities(offered, t.phase)[static_cast<std::size_t>(t.chosen)]);
      if (t.phase == Phase::training) {
        std::optional<std::size_t> chosen;
        if (t.chosen >= 0) chosen = static_cast<std::size_t>(t.chosen);
        learner.learn(offered, chosen, std::span<const double>(t.outcomes.data(), t.n_offered));
      }
    }
  }
  return nll;
}

}  // namespace

TEST_SUITE("cogmodel") {

TEST_CASE("subjective value") {
  const std::array<double, 2> trial{27, 18};
  const auto s = ranged(15, 36);
  CHECK(subjective_value(27, trial, s, 0.0) == doctest::Approx(12.0 / 21.0).epsilon(1e-12));
  CHECK(subjective_value(18, trial, s, 0.0) == doctest::Approx(3.0 / 21.0).epsilon(1e-12));
  CHECK(subjective_value(27, trial, s, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(subjective_value(18, trial, s, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(subjective_value(27, trial, s, 0.5) - (0.5 * 12.0 / 21.0 + 0.5)) < 1e-9);
  CHECK(subjective_value(27, trial, s, 0.5) == doctest::Approx(0.7857).epsilon(1e-4));

  // Degenerate ranges encode as 0.5.
  const std::array<double, 2> same{5, 5};
  const auto flat = ranged(5, 5);
  CHECK(subjective_value(5, same, flat, 0.3) == doctest::Approx(0.5));
}

TEST_CASE("delta rule") {
  const std::array<std::size_t, 2> offered{0, 1};
  for (double alpha : {0.1, 0.37, 0.9}) {
    EncodingState s(2);
    const std::array<double, 2> v{1.0, 0.0};
    update_expectancies(s, offered, std::size_t{0}, v, alpha, alpha);
    CHECK(std::abs(s.q(0) - (0.5 + 0.5 * alpha)) < 1e-9);
  }
  SUBCASE("chosen option, confirmatory") {
    EncodingState s(2);
    const std::array<double, 2> v{0.9, 0.5};
    update_expectancies(s, offered, std::size_t{0}, v, 0.4, 0.1);
    CHECK(std::abs(s.q(0) - 0.66) < 1e-9);
  }
  SUBCASE("unchosen option, disconfirmatory") {
    EncodingState s(2);
    const std::array<double, 2> v{0.9, 0.5};
    update_expectancies(s, offered, std::size_t{1}, v, 0.4, 0.1);
    CHECK(std::abs(s.q(0) - 0.54) < 1e-9);
  }
  SUBCASE("unchosen worse than expected is confirmatory") {
    EncodingState s(2);
    const std::array<double, 2> v{0.1, 0.5};
    update_expectancies(s, offered, std::size_t{1}, v, 0.4, 0.1);
    CHECK(std::abs(s.q(0) - (0.5 + 0.4 * (0.1 - 0.5))) < 1e-9);
  }
}

TEST_CASE("softmax") {
  const std::array<std::size_t, 2> offered{0, 1};
  EncodingState s(2);
  CHECK(choice_probabilities(s, offered, 0.0, 0.0)[0] == doctest::Approx(0.5));
  s.set_q(0, 0.8);
  s.set_q(1, 0.2);
  const double expect = std::exp(8.0) / (std::exp(8.0) + std::exp(2.0));
  CHECK(std::abs(choice_probabilities(s, offered, 10.0, 0.0)[0] - expect) < 1e-9);
  CHECK(choice_probabilities(s, offered, 10.0, 0.0)[0] == doctest::Approx(0.9975).epsilon(1e-4));
  s.set_q(0, 0.9);
  s.set_q(1, 0.1);
  CHECK(choice_probabilities(s, offered, 1e4, 0.0)[0] == doctest::Approx(1.0));

  EncodingState eq(2);
  CHECK(choice_probabilities(eq, offered, 5.0, 1.176)[0] == doctest::Approx(0.764).epsilon(1e-3));
  CHECK(std::abs(choice_probabilities(eq, offered, 5.0, 1.176)[0] - std::exp(1.176) / (std::exp(1.176) + 1)) < 1e-9);
  CHECK(choice_probabilities(eq, offered, 5.0, 50.0)[0] == doctest::Approx(1.0));
}

TEST_CASE("single-trial likelihood") {
  // Equal expectancies with a bias giving the first-listed option p = .9975.
  ChoiceData d;
  d.option_ids = {"1H", "1L"};
  RunChoices run;
  run.run = 1;
  ChoiceTrial t;
  t.phase = Phase::transfer;
  t.offered = {0, 1, 0};
  t.chosen = 0;
  run.trials.push_back(t);
  d.runs.push_back(run);
  ModelParams p;
  p.beta_train = p.beta_transfer = 3.0;
  p.bias = std::log(0.9975 / 0.0025);
  CHECK(negative_log_likelihood(p, ModelVariant::parse("ABS"), d) == doctest::Approx(0.002503).epsilon(1e-3));
  CHECK(std::abs(negative_log_likelihood(p, ModelVariant::parse("ABS"), d) + std::log(0.9975)) < 1e-12);
}

TEST_CASE("softmax properties over random cases") {
  Rng rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = 2 + rng.uniform_index(2);
    EncodingState s(n);
    std::vector<std::size_t> offered(n);
    std::iota(offered.begin(), offered.end(), 0);
    for (std::size_t k = 0; k < n; ++k) s.set_q(k, rng.uniform01());
    const double beta = rng.uniform01() * 100, bias = rng.normal(0, 3);
    const auto p = choice_probabilities(s, offered, beta, bias);
    double sum = 0;
    for (double x : p) {
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 1.0);
      sum += x;
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-12);

    // Adding a constant to every expectancy leaves the probabilities alone.
    const double shift = rng.normal(0, 5);
    EncodingState shifted(n);
    for (std::size_t k = 0; k < n; ++k) shifted.set_q(k, s.q(k) + shift);
    const auto q = choice_probabilities(shifted, offered, beta, bias);
    for (std::size_t k = 0; k < n; ++k) REQUIRE(std::abs(p[k] - q[k]) < 1e-9);
  }
}

TEST_CASE("expectancies stay in [0, 1]") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    ModelParams p;
    p.omega = rng.uniform01();
    p.alpha_con = rng.uniform01();
    p.alpha_dis = rng.uniform01();
    p.beta_train = p.beta_transfer = rng.uniform01() * 50;
    Learner learner(p, 4);
    for (int t = 0; t < 5; ++t) {
      const std::array<std::size_t, 2> offered{rng.uniform_index(2), 2 + rng.uniform_index(2)};
      const std::array<double, 2> outcomes{rng.normal(0, 20), rng.normal(0, 20)};
      std::optional<std::size_t> chosen;
      if (rng.uniform01() < 0.9) chosen = rng.uniform_index(2);
      learner.learn(offered, chosen, outcomes);
    }
    for (double q : learner.state().q()) {
      REQUIRE(q >= 0.0);
      REQUIRE(q <= 1.0);
    }
  }
}

TEST_CASE("parameter validation and variants") {
  ModelParams p;
  p.omega = 1.2;
  CHECK_THROWS_AS(p.validate(), Error);
  p.omega = 0.5;
  p.beta_train = -1;
  CHECK_THROWS_AS(p.validate(), Error);

  CHECK(ModelVariant::all().size() == 8);
  CHECK(ModelVariant::parse("relfull").n_params() == 6);
  CHECK(ModelVariant::parse("ABS").n_params() == 3);
  CHECK(ModelVariant::parse("REL-2a").name() == "REL-2a");
  CHECK_THROWS_AS(ModelVariant::parse("XYZ"), ConfigError);

  ModelParams q;
  q.omega = 0.4;
  q.alpha_con = 0.3;
  q.alpha_dis = 0.1;
  q.beta_train = 3;
  q.beta_transfer = 7;
  const auto c = q.constrained(ModelVariant::parse("ABS"));
  CHECK(c.omega == 0.0);
  CHECK(c.alpha_dis == c.alpha_con);
  CHECK(c.beta_transfer == c.beta_train);
}

TEST_CASE("likelihood") {
  const auto& hw = relval::test::task("HW2023a");
  ModelParams truth;
  truth.omega = 0.6;
  truth.alpha_con = 0.5;
  truth.alpha_dis = 0.17;
  truth.beta_train = truth.beta_transfer = 10;
  truth.bias = 1.2;
  const auto full = ModelVariant::parse("REL-full");
  const auto data = simulate_choice_data(hw, {}, full, truth, 8, 17);

  SUBCASE("fast replay matches the Learner path") {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
      ModelParams p;
      p.omega = rng.uniform01();
      p.alpha_con = rng.uniform01();
      p.alpha_dis = rng.uniform01();
      p.beta_train = rng.uniform01() * 20;
      p.beta_transfer = rng.uniform01() * 20;
      p.bias = rng.normal(0, 1);
      CHECK(std::abs(negative_log_likelihood(p, full, data) - learner_nll(p, data)) < 1e-8);
    }
  }

  SUBCASE("beta = 0 gives N ln 2") {
    ModelParams flat = truth;
    flat.beta_train = flat.beta_transfer = 0;
    flat.bias = 0;
    const double n = static_cast<double>(data.n_valid_choices());
    CHECK(std::abs(negative_log_likelihood(flat, full, data) - n * std::log(2.0)) < 1e-9);
  }

  SUBCASE("truth beats perturbations") {
    const auto big = simulate_choice_data(hw, {}, full, truth, 60, 5);
    const double at_truth = negative_log_likelihood(truth, full, big);
    Rng rng(9);
    int better = 0;
    const int n = 40;
    for (int i = 0; i < n; ++i) {
      ModelParams p = truth;
      p.omega = std::clamp(p.omega + rng.normal(0, 0.2), 0.0, 1.0);
      p.alpha_con = std::clamp(p.alpha_con + rng.normal(0, 0.2), 0.01, 1.0);
      p.alpha_dis = std::clamp(p.alpha_dis + rng.normal(0, 0.2), 0.01, 1.0);
      p.beta_train = p.beta_transfer = std::max(0.5, p.beta_train + rng.normal(0, 4));
      p.bias += rng.normal(0, 0.5);
      better += at_truth <= negative_log_likelihood(p, full, big);
    }
    CHECK(better >= n * 95 / 100);
  }

  SUBCASE("invalid trials still learn") {
    auto gappy = data;
    for (auto& run : gappy.runs)
      for (std::size_t t = 0; t < run.trials.size(); t += 5) run.trials[t].chosen = -1;
    CHECK(std::abs(negative_log_likelihood(truth, full, gappy) - learner_nll(truth, gappy)) < 1e-8);
    CHECK(gappy.n_valid_choices() < data.n_valid_choices());
  }

  SUBCASE("empty data") {
    ChoiceData none;
    none.option_ids = data.option_ids;
    CHECK_THROWS_AS(negative_log_likelihood(truth, full, none), Error);
  }
}

}
