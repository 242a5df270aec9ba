#include <doctest.h>

#include <cmath>
#include <random>

#include "mmtpp/quadrature.hpp"
#include "oracles.hpp"
#include "mmtpp/tpp_models.hpp"

using namespace mmtpp;
using testing::quadrature_loglik;
using testing::random_events;
using testing::random_hawkes;

namespace {

EventSequence seq_of(std::vector<std::pair<double, int>> evs, double horizon, int types) {
  EventSequence s;
  s.horizon = horizon;
  s.type_count = types;
  for (auto [t, e] : evs) s.events.push_back({t, e, "", std::nullopt});
  return s;
}

}  // namespace

TEST_CASE("adaptive quadrature against known integrals") {
  CHECK(integrate_adaptive([](double x) { return std::exp(-x); }, 0.0, 30.0).value ==
        doctest::Approx(1.0 - std::exp(-30.0)).epsilon(1e-12));
  CHECK(integrate_adaptive([](double x) { return std::sqrt(x); }, 0.0, 1.0).value ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-10));
  CHECK(integrate_adaptive([](double) { return 1.0; }, 2.0, 2.0).value == 0.0);
  CHECK_THROWS_AS(
      integrate_adaptive([](double x) { return std::sin(1.0 / x) / x; }, 1e-9, 1.0, 1e-14, 8),
      Error);
}

TEST_CASE("Poisson closed form") {
  const auto m = IntensityModel::poisson({2.5});
  const auto s = seq_of({{0.3, 0}, {1.1, 0}, {2.0, 0}}, 4.0, 1);
  CHECK(loglik(m, s).total == doctest::Approx(3 * std::log(2.5) - 2.5 * 4.0).epsilon(1e-14));
  const auto empty = seq_of({}, 4.0, 1);
  CHECK(loglik(m, empty).total == doctest::Approx(-10.0).epsilon(1e-15));

  const auto m2 = IntensityModel::poisson({1.0, 3.0});
  const auto s2 = seq_of({{0.5, 1}, {0.9, 0}, {1.4, 1}}, 2.0, 2);
  CHECK(loglik(m2, s2).total ==
        doctest::Approx(2 * std::log(3.0) + std::log(1.0) - 4.0 * 2.0).epsilon(1e-14));
}

TEST_CASE("report decomposes exactly") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_hawkes(rng, 3);
    const auto s = random_events(rng, 15, 3);
    const auto rep = loglik(m, s);
    double sum = 0.0;
    for (double v : rep.time_terms) sum += v;
    for (double v : rep.type_terms) sum += v;
    CHECK(rep.total == sum + rep.survival_term);
    CHECK(rep.time_terms.size() == s.size());
    for (double v : rep.type_terms) CHECK(v <= 0.0);
  }
}

TEST_CASE("two-event Hawkes matches quadrature") {
  const auto m = IntensityModel::hawkes(Eigen::VectorXd::Constant(1, 0.5),
                                        Eigen::MatrixXd::Constant(1, 1, 0.2), 1.0);
  const auto s = seq_of({{1.0, 0}, {2.0, 0}}, 3.0, 1);
  const double closed = std::log(0.5) + std::log(0.5 + 0.2 * std::exp(-1.0)) -
                        (1.5 + 0.2 * (1 - std::exp(-2.0)) + 0.2 * (1 - std::exp(-1.0)));
  CHECK(std::abs(loglik(m, s).total - quadrature_loglik(m, s)) <= 1e-8);
  CHECK(loglik(m, s).total == doctest::Approx(closed).epsilon(1e-14));
}

TEST_CASE("Hawkes closed form matches quadrature on random sequences") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int types = 1 + trial % 3;
    const auto m = random_hawkes(rng, types);
    const auto s = random_events(rng, 1 + trial % 20, types);
    CHECK(std::abs(loglik(m, s).total - quadrature_loglik(m, s)) <= 1e-8);
  }
}

TEST_CASE("Hawkes with zero excitation equals Poisson bit for bit") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_events(rng, 25, 2);
    const std::vector<double> rates{0.7 + trial * 0.1, 1.3};
    const auto p = IntensityModel::poisson(rates);
    const auto h = IntensityModel::hawkes(p.base, Eigen::MatrixXd::Zero(2, 2), 1.7);
    CHECK(loglik(p, s).total == loglik(h, s).total);
  }
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(99);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int types = 1 + trial % 3;
    const auto m = random_hawkes(rng, types);
    const auto s = random_events(rng, 12, types);
    const double rel = testing::loglik_gradient_error(m, s);
    CHECK(rel < 1e-5);
    ++checked;
  }
  CHECK(checked == 100);

  const auto p = IntensityModel::poisson({0.8, 2.0});
  const auto s = random_events(rng, 10, 2);
  const auto g = loglik_gradient(p, s).gradient;
  int n0 = 0;
  for (const auto& ev : s.events) n0 += ev.type_id == 0;
  CHECK(g[0] == doctest::Approx(n0 / 0.8 - s.horizon).epsilon(1e-12));
}

TEST_CASE("stability check") {
  const auto unstable = IntensityModel::hawkes(Eigen::VectorXd::Constant(1, 0.5),
                                               Eigen::MatrixXd::Constant(1, 1, 1.5), 1.0);
  CHECK_FALSE(unstable.stable());
  const auto s = seq_of({{1.0, 0}}, 2.0, 1);
  CHECK(loglik(unstable, s).unstable);
  CHECK_THROWS_AS(simulate(unstable, 10.0, 1), Error);
  const std::vector<EventSequence> data{s};
  try {
    fit_mle(data, ModelVariant::ExpHawkes, &unstable);
    FAIL("expected UnstableModel");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnstableModel);
  }
  CHECK_THROWS_AS(IntensityModel::hawkes(Eigen::VectorXd::Constant(1, 0.5),
                                         Eigen::MatrixXd::Constant(1, 1, 0.1), -1.0),
                  Error);
}

TEST_CASE("simulation") {
  const auto m = IntensityModel::poisson({3.0});
  const auto s = simulate(m, 2000.0, 7);
  CHECK_FALSE(validate_sequence(s).has_value());
  const double expected = 6000.0;
  CHECK(std::abs(static_cast<double>(s.size()) - expected) < 3 * std::sqrt(expected));
  CHECK(simulate(m, 50.0, 3) == simulate(m, 50.0, 3));
  CHECK(simulate(m, 50.0, 3) != simulate(m, 50.0, 4));

  const auto dead = IntensityModel::hawkes(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2),
                                           1.0);
  CHECK(simulate(dead, 100.0, 1).empty());

  const auto h = IntensityModel::hawkes(Eigen::Vector2d(0.3, 0.2),
                                        Eigen::Matrix2d{{0.3, 0.1}, {0.2, 0.4}}, 1.5);
  const auto hs = simulate(h, 500.0, 11);
  CHECK_FALSE(validate_sequence(hs).has_value());
  for (const auto& ev : hs.events) CHECK((ev.time > 0.0 && ev.time <= 500.0));
}

TEST_CASE("MLE recovers a Poisson rate") {
  const auto truth = IntensityModel::poisson({2.0});
  std::vector<EventSequence> data;
  double count = 0.0;
  for (int i = 0; i < 100; ++i) {
    data.push_back(simulate(truth, 50.0, 1000 + i));
    count += static_cast<double>(data.back().size());
  }
  const auto fit = fit_mle(data, ModelVariant::Poisson);
  CHECK(fit.trace.converged);
  CHECK(fit.model.base[0] == doctest::Approx(count / 5000.0).epsilon(1e-6));
  CHECK(std::abs(fit.model.base[0] - 2.0) / 2.0 < 0.05);
}

TEST_CASE("ascent from the truth never decreases the log-likelihood") {
  const auto truth = IntensityModel::hawkes(Eigen::VectorXd::Constant(1, 0.5),
                                            Eigen::MatrixXd::Constant(1, 1, 0.8), 1.2);
  std::vector<EventSequence> data{simulate(truth, 300.0, 21), simulate(truth, 300.0, 22)};
  FitConfig cfg;
  cfg.max_iters = 200;
  const auto fit = fit_mle(data, ModelVariant::ExpHawkes, &truth, cfg);
  for (std::size_t i = 1; i < fit.trace.loglik.size(); ++i) {
    CHECK(fit.trace.loglik[i] >= fit.trace.loglik[i - 1]);
  }
}

TEST_CASE("fit rejects empty input") {
  std::vector<EventSequence> data{seq_of({}, 1.0, 1)};
  CHECK_THROWS_AS(fit_mle(data, ModelVariant::Poisson), Error);
}

TEST_CASE("next-event prediction") {
  const auto m = IntensityModel::poisson({4.0});
  const auto s = seq_of({{0.5, 0}, {0.7, 0}}, 2.0, 1);
  CHECK(next_event_predict(m, s, 2).interval == doctest::Approx(0.25).epsilon(1e-9));

  const auto two = IntensityModel::poisson({1.0, 3.0});
  CHECK(next_event_predict(two, seq_of({}, 1.0, 2), 0).type_id == 1);

  const auto h = IntensityModel::hawkes(Eigen::VectorXd::Constant(1, 0.2),
                                        Eigen::MatrixXd::Constant(1, 1, 0.9), 1.0);
  const auto burst = seq_of({{1.0, 0}, {1.1, 0}, {1.2, 0}, {1.3, 0}}, 2.0, 1);
  const auto pred = next_event_predict(h, burst, 4);
  CHECK(pred.interval < 1.0 / 0.2);

  // Oracle: E[tau] = int_0^inf S(s) ds by boost quadrature.
  using boost::math::quadrature::gauss_kronrod;
  const double oracle = gauss_kronrod<double, 61>::integrate(
      [&](double x) { return survival_probability(h, burst, 4, x); }, 0.0, 400.0, 25, 1e-13);
  CHECK(pred.interval == doctest::Approx(oracle).epsilon(1e-8));

  // The density integrates to 1 - S(cut) over (0, cut].
  for (double cut : {0.5, 5.0, 50.0}) {
    const double mass = gauss_kronrod<double, 61>::integrate(
        [&](double x) { return predictive_density(h, burst, 4, x); }, 0.0, cut, 25, 1e-14);
    CHECK(mass <= 1.0 + 1e-12);
    CHECK(mass == doctest::Approx(1.0 - survival_probability(h, burst, 4, cut)).epsilon(1e-10));
  }
}

TEST_CASE("model JSON round-trip") {
  const auto h = IntensityModel::hawkes(Eigen::Vector2d(0.3, 0.2),
                                        Eigen::Matrix2d{{0.3, 0.1}, {0.2, 0.4}}, 1.5);
  CHECK(model_from_json(model_to_json(h)) == h);
  const auto p = IntensityModel::poisson({1.0, 2.0, 3.0});
  CHECK(model_from_json(model_to_json(p)) == p);
  CHECK_THROWS_AS(model_from_json(nlohmann::json{{"variant", "poisson"}}), Error);
}

TEST_CASE("MLE recovers a one-type Hawkes process") {
  const auto truth = IntensityModel::hawkes(Eigen::VectorXd::Constant(1, 0.5),
                                            Eigen::MatrixXd::Constant(1, 1, 0.8), 1.2);
  std::vector<EventSequence> data;
  std::size_t n = 0;
  for (int i = 0; i < 10; ++i) {
    data.push_back(simulate(truth, 1000.0, 500 + i));
    n += data.back().size();
  }
  REQUIRE(n >= 5000);
  const auto fit = fit_mle(data, ModelVariant::ExpHawkes);
  CHECK(fit.trace.converged);
  const Eigen::VectorXd got = fit.model.parameters();
  const Eigen::VectorXd want = truth.parameters();
  for (Eigen::Index k = 0; k < got.size(); ++k) {
    CHECK(std::abs(got[k] - want[k]) / want[k] < 0.15);
  }
}
