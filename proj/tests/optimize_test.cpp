#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "qalopt/estimators.hpp"
#include "qalopt/optimize.hpp"

using namespace qalopt;

namespace {

double angle_deg(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
  return std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / M_PI;
}

Objective sphere_target(std::vector<double> target) {
  return [target = std::move(target)](const std::vector<double>& eta) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < eta.size(); ++k)
      d2 += (eta[k] - target[k]) * (eta[k] - target[k]);
    return -d2;
  };
}

SearchConfig small_search(std::uint64_t seed) {
  SearchConfig cfg;
  cfg.population = 40;
  cfg.generations = 50;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("one-dimensional search is exhaustive over the signs") {
  SearchConfig cfg = small_search(1);
  const SearchResult plus =
      maximize([](const std::vector<double>& e) { return e[0]; }, 1, cfg);
  CHECK(plus.eta == std::vector<double>{1.0});
  CHECK(plus.value == Catch::Approx(1.0));
  const SearchResult minus =
      maximize([](const std::vector<double>& e) { return -e[0]; }, 1, cfg);
  CHECK(minus.eta == std::vector<double>{-1.0});
}

TEST_CASE("recovers a known optimum on the sphere") {
  std::vector<double> target{1.0, -1.0, -1.0};
  const double nrm = std::sqrt(3.0);
  for (double& v : target) v /= nrm;
  const SearchResult res = maximize(sphere_target(target), 3, small_search(3));
  CHECK(angle_deg(res.eta, target) < 1.0);
  CHECK(res.evaluations > 0);
}

TEST_CASE("search invariances") {
  std::vector<double> target{0.2, 0.5, -0.8};
  double nrm = 0.0;
  for (double v : target) nrm += v * v;
  nrm = std::sqrt(nrm);
  for (double& v : target) v /= nrm;
  const Objective obj = sphere_target(target);

  SECTION("positive scaling of the initial point changes nothing") {
    const std::vector<double> init{0.1, 0.9, 0.0};
    const std::vector<double> scaled{0.4, 3.6, 0.0};
    const SearchResult a = maximize(obj, 3, small_search(7), &init);
    const SearchResult b = maximize(obj, 3, small_search(7), &scaled);
    CHECK(a.eta == b.eta);
    CHECK(a.value == b.value);
  }
  SECTION("identical seeds are bit-identical") {
    const SearchResult a = maximize(obj, 3, small_search(11));
    const SearchResult b = maximize(obj, 3, small_search(11));
    CHECK(a.eta == b.eta);
    CHECK(a.value == b.value);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t t = 0; t < a.trace.size(); ++t)
      CHECK(a.trace[t].best == b.trace[t].best);
  }
  SECTION("per-generation best fitness never decreases") {
    const SearchResult res = maximize(obj, 3, small_search(13));
    for (std::size_t t = 1; t < res.trace.size(); ++t)
      CHECK(res.trace[t].best >= res.trace[t - 1].best);
  }
  SECTION("cache avoids re-evaluating elites") {
    const SearchResult res = maximize(obj, 3, small_search(17));
    CHECK(res.cache_hits > 0);
  }
}

TEST_CASE("failure handling") {
  SECTION("objectives that always throw") {
    const Objective bad = [](const std::vector<double>&) -> double {
      throw std::runtime_error("nope");
    };
    CHECK_THROWS_WITH(maximize(bad, 3, small_search(1)),
                      Catch::Matchers::ContainsSubstring("every candidate"));
  }
  SECTION("invalid configuration") {
    SearchConfig cfg;
    cfg.population = 2;
    CHECK_THROWS_AS(maximize(sphere_target({1.0, 0.0}), 2, cfg),
                    std::invalid_argument);
  }
  SECTION("trace serialization") {
    const SearchResult res =
        maximize(sphere_target({1.0, 0.0}), 2, small_search(5));
    const std::string csv = trace_csv(res.trace);
    CHECK(csv.rfind("generation,best,mean\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') ==
          static_cast<long>(res.trace.size()) + 1);
  }
}

namespace {

HazardFit null_treat() {
  HazardFit fit;
  fit.kind = HazardFit::Kind::oracle;
  fit.oracle = [](int, const std::vector<double>&, int) { return 0.0; };
  return fit;
}

Panel untreated_panel() {
  Panel panel;
  Landmarks lm;
  lm.K = 1;
  lm.gap = 10.0;
  lm.times = {0.0, 10.0};
  lm.tau = 30.0;
  panel.landmarks = lm;
  panel.covariate_names = {"z1"};
  const std::vector<double> times{4.0, 9.0, 14.0, 22.0, 27.0};
  for (std::size_t i = 0; i < times.size(); ++i) {
    SubjectTrajectory s;
    s.id = "u" + std::to_string(i);
    s.event_time = times[i];
    s.event_observed = true;
    const int m = times[i] >= 10.0 ? 2 : 1;
    for (int j = 0; j < m; ++j) {
      s.z.push_back({0.1 * static_cast<double>(i)});
      s.a.push_back(0);
      s.q.push_back(1.0);
    }
    panel.subjects.push_back(std::move(s));
  }
  return panel;
}

}  // namespace

TEST_CASE("fixed-regime report") {
  const Panel panel = untreated_panel();
  const HazardFit fit_a = null_treat();
  HazardFit fit_c = null_treat();
  fit_c.role = HazardRole::censoring;
  const double L_U = 20.0;

  const NamedRegime never{"never", Regime::normalized({-1.0}, {-1})};
  const NamedRegime always{"always", Regime::normalized({1.0}, {-1})};

  SECTION("never-treat on an untreated uncensored panel is the restricted mean") {
    const auto rows = fixed_regimes_report(panel, fit_a, fit_c, {never}, L_U,
                                           EstimatorMode::ipw);
    REQUIRE(rows.size() == 1);
    double expect = 0.0;
    for (const auto& s : panel.subjects)
      expect += std::min(s.event_time, L_U) / 5.0;
    CHECK(rows[0].rhat == Catch::Approx(expect));
    CHECK(rows[0].note.empty());
  }
  SECTION("smoothed mode falls back to IPW for constant-score rules") {
    const auto rows = fixed_regimes_report(panel, fit_a, fit_c, {never}, L_U,
                                           EstimatorMode::bc_ipw);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].note ==
          "constant score; reduced to IPW");
    const auto ipw = fixed_regimes_report(panel, fit_a, fit_c, {never}, L_U,
                                          EstimatorMode::ipw);
    CHECK(rows[0].rhat == ipw[0].rhat);
  }
  SECTION("duplicate regimes produce identical rows") {
    const auto rows = fixed_regimes_report(
        panel, fit_a, fit_c, {never, {"never2", never.regime}}, L_U,
        EstimatorMode::ipw);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].rhat == rows[1].rhat);
    CHECK(rows[0].se == rows[1].se);
  }
  SECTION("always-treat with no compliant subjects past a breakpoint") {
    Panel late;
    late.landmarks = panel.landmarks;
    late.covariate_names = panel.covariate_names;
    for (const auto& s : panel.subjects)
      if (s.num_at_risk() == 2) late.subjects.push_back(s);
    CHECK_THROWS_WITH(fixed_regimes_report(late, fit_a, fit_c, {always}, L_U,
                                           EstimatorMode::ipw),
                      Catch::Matchers::ContainsSubstring(
                          "no effective observations"));
  }
}
