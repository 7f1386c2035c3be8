#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "qalopt/common.hpp"
#include "qalopt/hal.hpp"

using namespace qalopt;

namespace {

// small nonlinear binary problem for path fits
void make_data(int n, std::uint64_t seed, std::vector<std::vector<double>>& X,
               std::vector<int>& y) {
  Rng rng(seed);
  X.clear();
  y.clear();
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(0.0, 1.0);
    const double v = rng.uniform(0.0, 1.0);
    const double p = logistic_cdf(1.5 * (u > 0.4) - 1.5 * (v > 0.6) - 0.2);
    X.push_back({u, v});
    y.push_back(rng.bernoulli(p) ? 1 : 0);
  }
}

HalOptions fast_options(std::uint64_t seed) {
  HalOptions opt;
  opt.max_knots_per_section = 20;
  opt.n_lambda = 25;
  opt.seed = seed;
  return opt;
}

}  // namespace

TEST_CASE("indicator basis enumeration") {
  const std::vector<std::vector<double>> rows{{0, 0}, {1, 1}, {2, 2}};

  SECTION("sections up to depth two, intercept duplicates dropped") {
    const auto basis = enumerate_basis(rows, 2, 50);
    // 3 knots per section over {0}, {1}, {0,1}; the minimal knot of each
    // section is active on every row and is merged into the intercept
    CHECK(basis.size() == 6);
    for (const auto& bf : basis) {
      bool all_one = true;
      for (const auto& r : rows) all_one = all_one && bf.eval(r);
      CHECK_FALSE(all_one);
    }
  }
  SECTION("depth one has no interaction sections") {
    const auto basis = enumerate_basis(rows, 1, 50);
    CHECK(basis.size() == 4);
    for (const auto& bf : basis) CHECK(bf.section.size() == 1);
  }
  SECTION("constant feature contributes nothing") {
    const std::vector<std::vector<double>> flat{{1.0}, {1.0}, {1.0}};
    CHECK(enumerate_basis(flat, 1, 50).empty());
  }
  SECTION("knot thinning caps the catalog") {
    std::vector<std::vector<double>> many;
    for (int i = 0; i < 100; ++i) many.push_back({static_cast<double>(i)});
    const auto basis = enumerate_basis(many, 1, 10);
    CHECK(basis.size() <= 10);
    CHECK(basis.size() >= 9);
  }
  SECTION("componentwise indicator evaluation") {
    BasisFunction bf{{0, 1}, {1.0, 2.0}};
    CHECK(bf.eval({1.0, 2.0}));
    CHECK(bf.eval({5.0, 5.0}));
    CHECK_FALSE(bf.eval({0.5, 5.0}));
    CHECK_FALSE(bf.eval({5.0, 1.5}));
  }
}

TEST_CASE("penalized path structure") {
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  make_data(300, 21, X, y);
  const HalPath path = fit_hal_path(X, y, fast_options(21));

  SECTION("grid is strictly decreasing") {
    for (std::size_t t = 1; t < path.lambdas.size(); ++t)
      CHECK(path.lambdas[t] < path.lambdas[t - 1]);
  }
  SECTION("full shrinkage at the top of the grid") {
    CHECK(path.models.front().active_count() == 0);
  }
  SECTION("L1 norm grows as the penalty shrinks") {
    for (std::size_t t = 1; t < path.models.size(); ++t)
      CHECK(path.models[t].l1_norm() >=
            path.models[t - 1].l1_norm() - 1e-8);
  }
  SECTION("KKT conditions hold along a tightly solved path") {
    // the default sweep tolerance leaves ~1e-5 residuals at small penalties
    HalOptions tight = fast_options(21);
    tight.tol = 1e-9;
    tight.max_sweeps = 10000;
    const HalPath strict = fit_hal_path(X, y, tight);
    for (int t = 0; t < static_cast<int>(strict.lambdas.size()); t += 6)
      CHECK(hal_kkt_violation(strict, t, X, y) < 1e-6);
  }
  SECTION("cross-validated index minimizes the recorded loss") {
    const double lo =
        *std::min_element(path.cv_loss.begin(), path.cv_loss.end());
    CHECK(path.cv_loss[path.idx_cv] == lo);
  }
  SECTION("single response class is rejected") {
    std::vector<int> ones(y.size(), 1);
    CHECK_THROWS_AS(fit_hal_path(X, ones, fast_options(1)),
                    std::invalid_argument);
  }
}

TEST_CASE("undersmoothed penalty selection") {
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  make_data(400, 33, X, y);
  HalPath path = fit_hal_path(X, y, fast_options(33));
  select_undersmoothed(path, X, y, HazardRole::treatment, 400);

  SECTION("selected penalty is the max of floor and score choices") {
    CHECK(path.lambda_breve() ==
          std::max(path.lambda_floor(), path.lambda_tilde()));
    CHECK(path.idx_breve == std::min(path.idx_tilde, path.idx_floor));
  }
  SECTION("floor respects the active-count cap") {
    const double limit = std::sqrt(400.0);
    CHECK(path.models[path.idx_floor].active_count() < limit);
  }
}

TEST_CASE("penalty floor scan") {
  // hand-built path with active counts (0, 3, 9, 12) over a descending grid
  HalPath path;
  path.lambdas = {1.0, 0.5, 0.25, 0.125};
  for (int count : {0, 3, 9, 12}) {
    HalModel m;
    m.beta.assign(12, 0.0);
    for (int k = 0; k < count; ++k) m.beta[k] = 0.1;
    path.models.push_back(std::move(m));
  }

  SECTION("smallest penalty with J below sqrt(n)") {
    bool warn = true;
    CHECK(lambda_floor_index(path, 100, &warn) == 2);  // J = 9 < 10
    CHECK_FALSE(warn);
  }
  SECTION("huge n admits the smallest grid point") {
    CHECK(lambda_floor_index(path, 1000000) == 3);
  }
  SECTION("no qualifying point falls back to the largest penalty") {
    path.models[0].beta[0] = 0.1;  // counts (1, 3, 9, 12); limit is 1
    bool warn = false;
    CHECK(lambda_floor_index(path, 1, &warn) == 0);
    CHECK(warn);
  }
}

TEST_CASE("link prediction and score diagnostics") {
  SECTION("link sums active coefficients of firing bases") {
    std::vector<BasisFunction> basis{{{0}, {1.0}}, {{0}, {2.0}}};
    HalModel m;
    m.beta0 = 0.25;
    m.beta = {0.5, -2.0};
    CHECK(hal_predict_link(m, basis, {0.0}) == Catch::Approx(0.25));
    CHECK(hal_predict_link(m, basis, {1.5}) == Catch::Approx(0.75));
    CHECK(hal_predict_link(m, basis, {3.0}) == Catch::Approx(-1.25));
  }
  SECTION("intercept-only score equals the absolute mean residual") {
    const std::vector<std::vector<double>> rows{{0.0}, {1.0}, {2.0}, {3.0}};
    const std::vector<int> y{1, 0, 0, 1};
    HalModel m;
    m.beta0 = 0.0;
    m.beta = {0.0};
    const std::vector<BasisFunction> basis{{{0}, {1.0}}};
    const ScoreDiagnostic d = score_diagnostic(m, basis, rows, y);
    CHECK(d.active == 0);
    CHECK(d.min_abs_score == Catch::Approx(0.0).margin(1e-12));  // mean y = 0.5
    CHECK(d.threshold > 0.0);
  }
}
