#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "qalopt/csv_io.hpp"
#include "qalopt/simgen.hpp"

using namespace qalopt;

namespace {

std::string panel_fingerprint(const Panel& panel) {
  std::ostringstream p, s;
  write_panel_csv(panel, p, s);
  return p.str() + "|" + s.str();
}

}  // namespace

TEST_CASE("simulation configurations") {
  SECTION("landmark designs") {
    const SimConfig k6 = SimConfig::landmark_design(1, 6, 500, 1);
    CHECK(k6.L == 60.0);
    CHECK(k6.G == 10.0);
    CHECK(k6.L_U == 26.0);
    CHECK(k6.kappa[0] == Catch::Approx(-0.1));
    CHECK(k6.nu_c[0] == Catch::Approx(-2.05));
    CHECK(k6.transform == ObservedTransform::identity);
    const SimConfig k25 = SimConfig::landmark_design(2, 25, 500, 1);
    CHECK(k25.G == 4.0);
    CHECK(k25.L_U == 36.0);
    CHECK(k25.kappa[0] == Catch::Approx(-2.0));
    CHECK(k25.transform == ObservedTransform::quadratic);
    CHECK_THROWS_AS(SimConfig::landmark_design(1, 7, 500, 1),
                    std::invalid_argument);
  }
  SECTION("grid consistency is enforced") {
    SimConfig cfg;
    cfg.L = 55.0;
    cfg.G = 10.0;
    CHECK_THROWS_AS(cfg.finalize(), std::invalid_argument);
  }
  SECTION("observed columns track the transform") {
    const SimConfig s1 = SimConfig::landmark_design(1, 6, 100, 1);
    CHECK(s1.observed_columns() == std::vector<int>{0, 1, 2});
    CHECK(s1.covariate_names() == std::vector<std::string>{"z1", "z2", "z3"});
    const SimConfig s2 = SimConfig::landmark_design(2, 6, 100, 1);
    CHECK(s2.observed_columns() == std::vector<int>{3, 4, 5});
    CHECK(s2.covariate_names().size() == 6);
  }
}

TEST_CASE("panel generation") {
  const SimConfig cfg = SimConfig::landmark_design(1, 6, 2000, 42);

  SECTION("fixed seeds reproduce bit-identical panels") {
    const Panel a = generate_panel(cfg, 7);
    const Panel b = generate_panel(cfg, 7);
    CHECK(panel_fingerprint(a) == panel_fingerprint(b));
    const Panel c = generate_panel(cfg, 8);
    CHECK(panel_fingerprint(a) != panel_fingerprint(c));
  }
  SECTION("generated panels satisfy every structural invariant") {
    const Panel panel = generate_panel(cfg, 3);
    CHECK(panel.n() == 2000);
    CHECK(validate_panel(panel).empty());
  }
  SECTION("baseline covariates are uniform(0.6, 1)") {
    const Panel panel = generate_panel(SimConfig::landmark_design(1, 6, 10000, 5), 5);
    double mean[3] = {0, 0, 0};
    for (const auto& s : panel.subjects)
      for (int k = 0; k < 3; ++k) mean[k] += s.z[0][k] / 10000.0;
    for (int k = 0; k < 3; ++k) CHECK(mean[k] == Catch::Approx(0.8).margin(0.005));
  }
  SECTION("scenario 2 exposes a deterministic transform of the same latent draws") {
    const SimConfig c1 = SimConfig::landmark_design(1, 6, 200, 9);
    const SimConfig c2 = SimConfig::landmark_design(2, 6, 200, 9);
    const Panel p1 = generate_panel(c1, 9);
    const Panel p2 = generate_panel(c2, 9);
    REQUIRE(p1.n() == p2.n());
    for (std::size_t i = 0; i < p1.n(); ++i) {
      REQUIRE(p1.subjects[i].z.size() == p2.subjects[i].z.size());
      for (std::size_t j = 0; j < p1.subjects[i].z.size(); ++j) {
        const auto& lat = p1.subjects[i].z[j];
        const auto& obs = p2.subjects[i].z[j];
        REQUIRE(obs.size() == 6);
        for (int k = 0; k < 3; ++k) CHECK(obs[k] == lat[k]);
        const double z1 = lat[0], z2 = lat[1];
        CHECK(obs[3] == (z1 + z2 - 1.0) * (z1 + z2 - 1.0));
        CHECK(obs[4] == (z1 - 0.5) * (z1 - 0.5));
        CHECK(obs[5] == lat[2]);
      }
    }
  }
  SECTION("deep non-compliance exhausts the quality range and is logged") {
    const SimConfig k25 = SimConfig::landmark_design(1, 25, 500, 2);
    const Regime always = Regime::normalized({1.0, 0.0, 0.0},
                                             SimConfig::regime_columns());
    SimStats stats;
    Rng rng(99);
    for (int i = 0; i < 500; ++i) simulate_subject(k25, rng, &always, &stats);
    CHECK(stats.clamped_quality_bounds > 0);
  }
}

TEST_CASE("Monte Carlo oracle truths") {
  SECTION("restricted QAL under the optimal rule") {
    const SimConfig k6 = SimConfig::landmark_design(1, 6, 500, 0);
    const OracleValue v6 = oracle_rqal(k6, k6.eta_opt, 20000, 17);
    CHECK(v6.value == Catch::Approx(21.15).margin(0.2));
    CHECK(v6.mc_se > 0.0);
    CHECK(v6.mc_se < 0.1);
    const SimConfig k25 = SimConfig::landmark_design(1, 25, 500, 0);
    const OracleValue v25 = oracle_rqal(k25, k25.eta_opt, 20000, 17);
    CHECK(v25.value == Catch::Approx(31.82).margin(0.25));
  }
  SECTION("the optimal rule beats its antipode") {
    const SimConfig k6 = SimConfig::landmark_design(1, 6, 500, 0);
    const OracleValue good = oracle_rqal(k6, k6.eta_opt, 20000, 23);
    const OracleValue bad =
        oracle_rqal(k6, {-1.0, 1.0, 1.0}, 20000, 23);
    CHECK(bad.value < good.value - 5.0 * (good.mc_se + bad.mc_se));
  }
  SECTION("oracle values are stable across seeds") {
    const SimConfig k6 = SimConfig::landmark_design(1, 6, 500, 0);
    const OracleValue a = oracle_rqal(k6, k6.eta_opt, 20000, 101);
    const OracleValue b = oracle_rqal(k6, k6.eta_opt, 20000, 202);
    CHECK(std::abs(a.value - b.value) < 4.0 * (a.mc_se + b.mc_se));
  }
  SECTION("sample size guard") {
    const SimConfig k6 = SimConfig::landmark_design(1, 6, 500, 0);
    CHECK_THROWS_AS(oracle_rqal(k6, k6.eta_opt, 100, 1), std::invalid_argument);
  }
}

TEST_CASE("misclassification rate of candidate rules") {
  const SimConfig cfg = SimConfig::landmark_design(1, 6, 500, 0);
  CHECK(misclassification_rate(cfg, cfg.eta_opt, 10000, 31) == 0.0);
  const double flipped =
      misclassification_rate(cfg, {-1.0, 1.0, 1.0}, 10000, 31);
  CHECK(flipped > 40.0);
  CHECK(flipped <= 100.0);
}

TEST_CASE("replicate study harness") {
  SimConfig cfg = SimConfig::landmark_design(1, 6, 200, 77);
  StudyOptions opts;
  opts.mc_n_oracle = 10000;
  opts.mc_n_rep = 10000;
  opts.search.population = 8;
  opts.search.generations = 6;
  opts.search.patience = 3;
  const std::vector<MethodSpec> methods{
      {"logit-ipw", MethodSpec::Nuisance::logistic, EstimatorMode::ipw}};

  SECTION("a single replicate aggregates to itself") {
    const McReport rep = mc_study(cfg, 1, methods, opts);
    REQUIRE(rep.rows.size() == 1);
    REQUIRE(rep.detail.size() == 1);
    const RepMethodResult& r = rep.detail[0][0];
    REQUIRE(r.ok);
    CHECK(rep.rows[0].rhat_mean == r.rhat);
    CHECK(rep.rows[0].se_mean == r.se);
    CHECK(rep.rows[0].mr_mean == r.mr);
    CHECK(rep.rows[0].n_ok == 1);
    CHECK(rep.rows[0].cp ==
          ((r.ci_lo <= rep.r_opt && rep.r_opt <= r.ci_hi) ? 1.0 : 0.0));
    CHECK(rep.reps == 1);
    CHECK(rep.r_opt == Catch::Approx(21.15).margin(0.3));

    const std::string csv = mc_report_csv(rep);
    CHECK(csv.find("logit-ipw") != std::string::npos);
    const nlohmann::json j = mc_report_json(rep);
    CHECK(j["rows"].size() == 1);
    CHECK(j["replicates"].size() == 1);
  }
  SECTION("replicate seeds are deterministic") {
    CHECK(replicate_seed(cfg, 3) == replicate_seed(cfg, 3));
    CHECK(replicate_seed(cfg, 3) != replicate_seed(cfg, 4));
    const auto a = mc_replicate(cfg, methods, opts, 0);
    const auto b = mc_replicate(cfg, methods, opts, 0);
    REQUIRE(a[0].ok);
    CHECK(a[0].rhat == b[0].rhat);
    CHECK(a[0].eta == b[0].eta);
  }
  SECTION("replicate count guard") {
    CHECK_THROWS_AS(mc_study(cfg, 0, methods, opts), std::invalid_argument);
  }
}

TEST_CASE("one-stage weighted mean of the treated outcome") {
  SECTION("hand-computed ratio") {
    auto [mu, se] = one_stage_ipw({1, 0, 1}, {2.0, 9.0, 4.0},
                                  {0.5, 0.5, 0.5});
    CHECK(mu == Catch::Approx(3.0));
    CHECK(se > 0.0);
  }
  SECTION("no treated subjects") {
    CHECK_THROWS_AS(one_stage_ipw({0, 0}, {1.0, 2.0}, {0.5, 0.5}),
                    std::runtime_error);
  }
  SECTION("small benchmark run reports all four arms") {
    HalOptions hal;
    hal.max_knots_per_section = 15;
    hal.n_lambda = 15;
    const OneStageReport rep = appendix_one_stage_study(150, 4, 11, hal);
    REQUIRE(rep.rows.size() == 4);
    CHECK(rep.rows[0].method == "logit");
    CHECK(rep.rows[3].method == "plug-in-truth");
    CHECK(std::abs(rep.rows[3].bias) < 0.25);
    for (const auto& row : rep.rows) {
      CHECK(row.cp >= 0.0);
      CHECK(row.cp <= 1.0);
    }
    CHECK(std::isfinite(rep.rows[2].lambda_mean));
  }
}

TEST_CASE("multi-stage penalty comparison smoke run") {
  HalOptions hal;
  hal.max_knots_per_section = 10;
  hal.n_lambda = 15;
  const LambdaCompareReport rep =
      appendix_multistage_study(120, 2, 13, hal, 10000);
  CHECK(rep.reps == 2);
  CHECK(rep.r_opt > 15.0);
  CHECK(rep.r_opt < 25.0);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.frac_under_smaller >= 0.0);
  CHECK(rep.frac_under_smaller <= 1.0);
  CHECK(rep.lambda_cv_mean > 0.0);
  CHECK(rep.lambda_under_mean > 0.0);
}
