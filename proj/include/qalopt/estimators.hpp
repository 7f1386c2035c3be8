#pragma once

// Weighted estimating equations for the survival curve of quality-adjusted
// lifetime under a regime, the restricted QAL integral, the conservative
// variance, cross-fitting and the bootstrap.
//
// RqalContext precomputes everything that does not depend on the regime
// coefficients (cumulative hazard products, censoring indicators, the
// exact breakpoint grid), so that repeated evaluation inside the
// optimizer touches only the compliance products.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qalopt/common.hpp"
#include "qalopt/hazards.hpp"
#include "qalopt/panel.hpp"
#include "qalopt/regime.hpp"

namespace qalopt {

enum class EstimatorMode { ipw, bc_ipw };

struct WeightBundle {
  double delta_a = 0.0;  // hard indicator or smoothed value
  int delta_c = 0;
  double H_a = 1.0;
  double H_c = 1.0;
  double indicator = 0.0;  // I(U > x)

  double w() const { return delta_a * delta_c / (H_a * H_c); }
};

struct SurvCurve {
  std::vector<double> grid;
  std::vector<double> S;
  std::vector<double> effective_n;  // sum of weights per grid point
};

struct RqalEstimate {
  double value = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  EstimatorMode mode = EstimatorMode::ipw;
  std::string nuisance_kind;
  double L_U = 0.0;
  std::vector<double> grid;
  int truncation_activations = 0;  // hazard/product floor hits
};

// One x at a time, straight from the definitions. Used by the tests and
// the CLI for single-point queries; the integral path goes through
// RqalContext.
inline std::pair<double, std::vector<WeightBundle>> survival_at(
    const Panel& panel, const HazardFit& fit_a, const HazardFit& fit_c,
    const Regime& regime, double x, EstimatorMode mode, double nu = 0.0) {
  if (mode == EstimatorMode::bc_ipw && !(nu > 0.0))
    throw std::invalid_argument("survival_at: BC-IPW requires nu > 0");
  std::vector<WeightBundle> bundles;
  bundles.reserve(panel.n());
  double num = 0.0, den = 0.0;
  for (const auto& s : panel.subjects) {
    const TargetDerived d = derive_target(s, panel.landmarks, x);
    WeightBundle b;
    b.delta_c = d.delta_c;
    const CumulativeWeights cw =
        subject_hazard_factors(s, fit_a, fit_c).cumulative(d.l_x);
    b.H_a = cw.H_a;
    b.H_c = cw.H_c;
    b.delta_a = mode == EstimatorMode::ipw
                    ? static_cast<double>(compliance(regime, s, d))
                    : smooth_compliance(regime, s, d, nu);
    b.indicator = compute_observed_qal(s, panel.landmarks) > x ? 1.0 : 0.0;
    num += b.w() * b.indicator;
    den += b.w();
    bundles.push_back(b);
  }
  if (den == 0.0)
    throw std::runtime_error("no effective observations at x=" + std::to_string(x));
  return {num / den, std::move(bundles)};
}

inline SurvCurve survival_curve(const Panel& panel, const HazardFit& fit_a,
                                const HazardFit& fit_c, const Regime& regime,
                                const std::vector<double>& grid,
                                EstimatorMode mode, double nu = 0.0,
                                bool isotonic = false) {
  SurvCurve curve;
  curve.grid = grid;
  for (double x : grid) {
    auto [s, bundles] = survival_at(panel, fit_a, fit_c, regime, x, mode, nu);
    double sumw = 0.0;
    for (const auto& b : bundles) sumw += b.w();
    curve.S.push_back(s);
    curve.effective_n.push_back(sumw);
  }
  if (isotonic)  // nonincreasing projection via running minimum
    for (std::size_t i = 1; i < curve.S.size(); ++i)
      curve.S[i] = std::min(curve.S[i], curve.S[i - 1]);
  return curve;
}

// Regime-independent precomputation for the RQAL integral on the exact
// breakpoint grid.
class RqalContext {
 public:
  using FitLookup =
      std::function<std::pair<const HazardFit*, const HazardFit*>(std::size_t)>;

  RqalContext(const Panel& panel, const HazardFit& fit_a,
              const HazardFit& fit_c, double L_U)
      : RqalContext(panel,
                    [&fit_a, &fit_c](std::size_t) {
                      return std::make_pair(&fit_a, &fit_c);
                    },
                    L_U) {}

  // fits may differ per subject (cross-fitting).
  RqalContext(const Panel& panel, const FitLookup& fits, double L_U)
      : panel_(&panel), L_U_(L_U) {
    if (!(L_U > 0.0)) throw std::invalid_argument("RqalContext: L_U must be > 0");
    const Landmarks& lm = panel.landmarks;
    const std::size_t n = panel.n();

    // exact breakpoint grid: 0, observed QAL values, QAL at landmark
    // crossings, L_U
    std::vector<double> pts{0.0, L_U};
    for (const auto& s : panel.subjects) {
      const double u = compute_observed_qal(s, lm);
      if (u > 0.0 && u < L_U) pts.push_back(u);
      double cum = 0.0;
      for (int j = 0; j + 1 < s.num_at_risk(); ++j) {
        cum += s.q[j] * (lm.times[j + 1] - lm.times[j]);
        if (cum > 0.0 && cum < L_U) pts.push_back(cum);
      }
    }
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    grid_ = std::move(pts);

    const std::size_t G = grid_.size();
    w0_.assign(n * G, 0.0);
    lidx_.assign(n * G, 0);
    ind_.assign(n * G, 0);
    max_l_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = panel.subjects[i];
      auto [fa, fc] = fits(i);
      const SubjectHazardFactors f = subject_hazard_factors(s, *fa, *fc);
      const double u_obs = compute_observed_qal(s, lm);
      for (std::size_t g = 0; g < G; ++g) {
        const TargetDerived d = derive_target(s, lm, grid_[g]);
        if (d.delta_c == 1) {
          const CumulativeWeights cw = f.cumulative(d.l_x);
          w0_[i * G + g] = 1.0 / (cw.H_a * cw.H_c);
        }
        const int l_eff = std::min(d.l_x, s.num_at_risk() - 1);
        lidx_[i * G + g] = static_cast<std::uint8_t>(l_eff);
        ind_[i * G + g] = u_obs > grid_[g] ? 1 : 0;
        max_l_[i] = std::max(max_l_[i], l_eff);
      }
    }
  }

  const Panel& panel() const { return *panel_; }
  double L_U() const { return L_U_; }
  const std::vector<double>& grid() const { return grid_; }

  // Per-subject compliance prefix products for a regime: prefix[j] is the
  // (possibly smoothed) product of agreement factors over 1..j.
  void compliance_prefixes(const Regime& regime, EstimatorMode mode, double nu,
                           std::vector<double>& out) const {
    const std::size_t n = panel_->n();
    const int maxK = panel_->landmarks.K;
    out.assign(n * (maxK + 1), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = panel_->subjects[i];
      double* p = &out[i * (maxK + 1)];
      p[0] = 1.0;
      const int m = s.num_at_risk();
      for (int j = 1; j <= max_l_[i] && j < m; ++j) {
        if (mode == EstimatorMode::ipw) {
          const int g = decide(regime, s.z[j], s.a[j - 1]);
          p[j] = p[j - 1] * (s.a[j] == g ? 1.0 : 0.0);
        } else {
          p[j] = p[j - 1] * smooth_factor(regime, s.z[j], s.a[j - 1], s.a[j], nu);
        }
      }
    }
  }

  // Point estimate of R(eta); throws when some grid point has zero total
  // weight.
  double value(const Regime& regime, EstimatorMode mode, double nu = 0.0) const {
    std::vector<double> prefix;
    compliance_prefixes(regime, mode, nu, prefix);
    return integrate(prefix, nullptr, nullptr);
  }

  RqalEstimate estimate(const Regime& regime, EstimatorMode mode,
                        double nu = 0.0) const {
    std::vector<double> prefix;
    compliance_prefixes(regime, mode, nu, prefix);
    std::vector<double> S(grid_.size(), 0.0), meanw(grid_.size(), 0.0);
    RqalEstimate est;
    est.value = integrate(prefix, &S, &meanw);
    est.mode = mode;
    est.L_U = L_U_;
    est.grid = grid_;

    // conservative variance: per-subject integrated influence curve
    const std::size_t n = panel_->n();
    const std::size_t G = grid_.size();
    const int stride = panel_->landmarks.K + 1;
    double sigma2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double ic = 0.0;
      for (std::size_t g = 0; g + 1 < G; ++g) {
        const double w = prefix[i * stride + lidx_[i * G + g]] * w0_[i * G + g];
        if (w != 0.0)
          ic += w * (ind_[i * G + g] - S[g]) / meanw[g] * (grid_[g + 1] - grid_[g]);
      }
      sigma2 += ic * ic;
    }
    sigma2 /= static_cast<double>(n);
    est.se = std::sqrt(sigma2 / static_cast<double>(n));
    est.ci_lo = est.value - 1.959963984540054 * est.se;
    est.ci_hi = est.value + 1.959963984540054 * est.se;
    return est;
  }

  SurvCurve curve(const Regime& regime, EstimatorMode mode,
                  double nu = 0.0) const {
    std::vector<double> prefix;
    compliance_prefixes(regime, mode, nu, prefix);
    std::vector<double> S(grid_.size(), 0.0), meanw(grid_.size(), 0.0);
    integrate(prefix, &S, &meanw);
    SurvCurve c;
    c.grid = grid_;
    c.S = std::move(S);
    c.effective_n.resize(grid_.size());
    for (std::size_t g = 0; g < grid_.size(); ++g)
      c.effective_n[g] = meanw[g] * static_cast<double>(panel_->n());
    return c;
  }

 private:
  double integrate(const std::vector<double>& prefix, std::vector<double>* S_out,
                   std::vector<double>* meanw_out) const {
    const std::size_t n = panel_->n();
    const std::size_t G = grid_.size();
    const int stride = panel_->landmarks.K + 1;
    std::vector<double> num(G, 0.0), den(G, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = &prefix[i * stride];
      const double* w0 = &w0_[i * G];
      const std::uint8_t* l = &lidx_[i * G];
      const std::uint8_t* ind = &ind_[i * G];
      for (std::size_t g = 0; g < G; ++g) {
        const double w = p[l[g]] * w0[g];
        den[g] += w;
        if (ind[g]) num[g] += w;
      }
    }
    double r = 0.0;
    for (std::size_t g = 0; g + 1 < G; ++g) {
      if (den[g] == 0.0)
        throw std::runtime_error("no effective observations at x=" +
                                 std::to_string(grid_[g]));
      r += num[g] / den[g] * (grid_[g + 1] - grid_[g]);
    }
    if (S_out || meanw_out) {
      for (std::size_t g = 0; g < G; ++g) {
        const double S = den[g] > 0.0 ? num[g] / den[g] : 0.0;
        if (S_out) (*S_out)[g] = S;
        if (meanw_out) (*meanw_out)[g] = den[g] / static_cast<double>(n);
      }
    }
    return r;
  }

  const Panel* panel_;
  double L_U_;
  std::vector<double> grid_;
  std::vector<double> w0_;         // delta_c / (H_a H_c), subject-major
  std::vector<std::uint8_t> lidx_;  // l(x) capped at stored landmarks
  std::vector<std::uint8_t> ind_;   // I(U_obs > x)
  std::vector<int> max_l_;
};

inline RqalEstimate rqal(const Panel& panel, const HazardFit& fit_a,
                         const HazardFit& fit_c, const Regime& regime,
                         double L_U, EstimatorMode mode, double nu = 0.0) {
  RqalContext ctx(panel, fit_a, fit_c, L_U);
  return ctx.estimate(regime, mode, nu);
}

// 95% quantile of the observed quality-adjusted lifetime.
inline double default_LU(const Panel& panel) {
  if (panel.n() < 20)
    throw std::invalid_argument("default_LU: needs at least 20 subjects");
  std::vector<double> u;
  u.reserve(panel.n());
  for (const auto& s : panel.subjects)
    u.push_back(compute_observed_qal(s, panel.landmarks));
  return quantile_type7(std::move(u), 0.95);
}

// Nuisance recipe: fits hazards on a training panel.
using NuisanceRecipe =
    std::function<std::pair<HazardFit, HazardFit>(const Panel&)>;

// Cross-fit RQAL: subjects are split into B folds from the run seed;
// each subject's weights come from the fits trained on its complement;
// the pooled ratio solves the averaged estimating equation.
inline RqalEstimate cross_fit_rqal(const Panel& panel,
                                   const NuisanceRecipe& recipe,
                                   const Regime& regime, double L_U,
                                   EstimatorMode mode, int folds,
                                   std::uint64_t seed, double nu = 0.0) {
  if (folds < 2) throw std::invalid_argument("cross_fit: B >= 2 required");
  const std::size_t n = panel.n();
  std::vector<int> fold_of(n);
  {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(mix_seed(seed, 0x63726f7373ULL));
    for (std::size_t i = n; i > 1; --i)
      std::swap(perm[i - 1], perm[rng.below(i)]);
    for (std::size_t i = 0; i < n; ++i) fold_of[perm[i]] = static_cast<int>(i % folds);
  }
  std::vector<std::pair<HazardFit, HazardFit>> fits;
  for (int b = 0; b < folds; ++b) {
    Panel train;
    train.landmarks = panel.landmarks;
    train.covariate_names = panel.covariate_names;
    for (std::size_t i = 0; i < n; ++i)
      if (fold_of[i] != b) train.subjects.push_back(panel.subjects[i]);
    if (train.subjects.size() < 2)
      throw std::runtime_error("cross_fit: fold " + std::to_string(b) +
                               " leaves too little training data");
    try {
      fits.push_back(recipe(train));
    } catch (const std::exception& e) {
      throw std::runtime_error("cross_fit: nuisance fit failed on complement of fold " +
                               std::to_string(b) + ": " + e.what());
    }
  }
  RqalContext ctx(
      panel,
      [&](std::size_t i) {
        const auto& fp = fits[fold_of[i]];
        return std::make_pair(&fp.first, &fp.second);
      },
      L_U);
  return ctx.estimate(regime, mode, nu);
}

struct BootstrapResult {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> replicates;
  int failures = 0;
};

// Nonparametric bootstrap over subjects; the pipeline closure receives a
// resampled panel and returns the statistic.
inline BootstrapResult bootstrap_ci(
    const Panel& panel, const std::function<double(const Panel&)>& pipeline,
    int reps, std::uint64_t seed) {
  if (reps < 1) throw std::invalid_argument("bootstrap: reps >= 1");
  BootstrapResult res;
  const std::size_t n = panel.n();
  std::vector<std::string> failures;
  for (int r = 0; r < reps; ++r) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r) + 0x626f6f74ULL));
    Panel bs;
    bs.landmarks = panel.landmarks;
    bs.covariate_names = panel.covariate_names;
    bs.subjects.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      bs.subjects.push_back(panel.subjects[rng.below(n)]);
    try {
      res.replicates.push_back(pipeline(bs));
    } catch (const std::exception& e) {
      ++res.failures;
      if (failures.size() < 20) failures.push_back(e.what());
    }
  }
  if (res.replicates.empty() ||
      static_cast<double>(res.failures) > 0.1 * static_cast<double>(reps)) {
    std::string log = "bootstrap: replicate failure rate above 10%";
    for (const auto& f : failures) log += "\n  " + f;
    throw std::runtime_error(log);
  }
  res.lo = quantile_type7(res.replicates, 0.025);
  res.hi = quantile_type7(res.replicates, 0.975);
  return res;
}

}  // namespace qalopt
