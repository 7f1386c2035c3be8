#pragma once

// Synthetic longitudinal studies: the landmark data-generating process,
// Monte Carlo oracle truths, full replicate studies and the one-stage
// benchmark with a Gaussian outcome.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qalopt/common.hpp"
#include "qalopt/estimators.hpp"
#include "qalopt/hazards.hpp"
#include "qalopt/optimize.hpp"
#include "qalopt/panel.hpp"
#include "qalopt/regime.hpp"

namespace qalopt {

// Observed covariate columns exposed to the hazard models. The latent
// z columns always come first so the regime class is unchanged.
enum class ObservedTransform {
  identity,    // observed = (z1, z2, z3)
  quadratic,   // adds ((z1+z2-1)^2, (z1-0.5)^2, z3)
  exp_square,  // adds (exp(z1/2), (z1+z2)^2, z3)
};

struct SimConfig {
  int scenario = 1;
  double L = 60.0;
  double G = 10.0;
  int K = 6;
  int n = 500;
  std::uint64_t seed = 0;
  double kappa[3] = {0.0, -0.5, -0.5};   // treatment hazard, kappa0 from K
  double nu_c[3] = {0.0, -1.0, -1.0};    // censoring hazard
  double surv_b0 = -5.0;
  double surv_bt = 0.0;                  // t coefficient, 4.5 / K
  double surv_bz = -0.5;
  double surv_baw = -0.5;
  std::vector<double> eta_opt = {1.0, -1.0, -1.0};  // raw, normalized on use
  double L_U = 26.0;
  bool censoring_enabled = true;
  ObservedTransform transform = ObservedTransform::identity;

  void finalize() {
    K = static_cast<int>(std::lround(L / G));
    if (std::abs(L - G * K) > 1e-9)
      throw std::invalid_argument("sim config: L must equal K * G");
    // per-stage slope of the survival time trend; the trend reaches 4.5
    // at the final stage regardless of the landmark design
    surv_bt = 6.0 * 0.75 / static_cast<double>(K);
  }

  // regime scores are affine in (z1, z2): intercept plus the first two
  // covariate columns
  static std::vector<int> regime_columns() { return {-1, 0, 1}; }

  // the two landmark designs of the main simulation study
  static SimConfig landmark_design(int scenario, int K_, int n_,
                                   std::uint64_t seed_) {
    SimConfig cfg;
    cfg.scenario = scenario;
    if (K_ == 6) {
      cfg.L = 60.0;
      cfg.G = 10.0;
      cfg.L_U = 26.0;
    } else if (K_ == 25) {
      cfg.L = 100.0;
      cfg.G = 4.0;
      cfg.L_U = 36.0;
    } else {
      throw std::invalid_argument("landmark_design: K must be 6 or 25");
    }
    cfg.K = K_;
    cfg.n = n_;
    cfg.seed = seed_;
    cfg.kappa[0] = 0.5 - 0.1 * static_cast<double>(K_);
    cfg.nu_c[0] = -2.0 + 0.5 * cfg.kappa[0];
    cfg.transform = scenario == 2 ? ObservedTransform::quadratic
                                  : ObservedTransform::identity;
    cfg.finalize();
    return cfg;
  }

  // uncensored K=6 design used for the tuning-parameter comparison
  static SimConfig lambda_benchmark(int n_, std::uint64_t seed_) {
    SimConfig cfg;
    cfg.scenario = 2;
    cfg.L = 60.0;
    cfg.G = 10.0;
    cfg.K = 6;
    cfg.n = n_;
    cfg.seed = seed_;
    cfg.kappa[0] = -0.1 * 6.0;
    cfg.kappa[1] = -1.0;
    cfg.kappa[2] = -1.0;
    cfg.censoring_enabled = false;
    cfg.L_U = 25.0;
    cfg.transform = ObservedTransform::exp_square;
    cfg.finalize();
    return cfg;
  }

  Landmarks landmarks() const {
    Landmarks lm = Landmarks::equally_spaced(K, G, L);
    lm.check();
    return lm;
  }

  std::vector<std::string> covariate_names() const {
    std::vector<std::string> names{"z1", "z2", "z3"};
    if (transform != ObservedTransform::identity)
      for (const char* x : {"x1", "x2", "x3"}) names.emplace_back(x);
    return names;
  }

  // columns the hazard models may see (the "observed" covariates)
  std::vector<int> observed_columns() const {
    if (transform == ObservedTransform::identity) return {0, 1, 2};
    return {3, 4, 5};
  }
};

namespace detail {

inline void append_observed(const SimConfig& cfg, std::vector<double>& row) {
  const double z1 = row[0], z2 = row[1], z3 = row[2];
  switch (cfg.transform) {
    case ObservedTransform::identity:
      break;
    case ObservedTransform::quadratic:
      row.push_back((z1 + z2 - 1.0) * (z1 + z2 - 1.0));
      row.push_back((z1 - 0.5) * (z1 - 0.5));
      row.push_back(z3);
      break;
    case ObservedTransform::exp_square:
      row.push_back(std::exp(z1 / 2.0));
      row.push_back((z1 + z2) * (z1 + z2));
      row.push_back(z3);
      break;
  }
}

}  // namespace detail

struct SimStats {
  long clamped_quality_bounds = 0;  // z3 update interval needed clamping
};

// One trajectory. With forced != nullptr every decision follows that
// regime and censoring is off (counterfactual path); otherwise treatment
// and censoring are drawn from the logistic hazards. W tracks agreement
// of the realized history with the optimal rule; every landmark spent
// out of compliance deepens the quality penalty by one notch.
inline SubjectTrajectory simulate_subject(const SimConfig& cfg, Rng& rng,
                                          const Regime* forced = nullptr,
                                          SimStats* stats = nullptr) {
  const Regime opt =
      Regime::normalized(cfg.eta_opt, SimConfig::regime_columns());
  SubjectTrajectory s;
  const double z10 = rng.uniform(0.6, 1.0);
  const double z20 = rng.uniform(0.6, 1.0);
  const double z30 = rng.uniform(0.6, 1.0);

  double z1 = z10, z2 = z20, z3 = z30;
  int a = 0;
  int W = 1;
  int stages_off = 0;  // landmarks spent out of compliance so far
  double T = kInf;

  auto push_state = [&] {
    std::vector<double> row{z1, z2, z3};
    detail::append_observed(cfg, row);
    s.z.push_back(std::move(row));
    s.a.push_back(a);
    // held value; completed intervals are rescored by the assessment at
    // their end once it is drawn
    s.q.push_back(z3 / z30);
  };
  auto survive_interval = [&](int j) {
    // unit-time Bernoulli steps within (jG, (j+1)G]; the time trend is
    // indexed by the stage
    const int steps = static_cast<int>(std::lround(cfg.G));
    const double trend = cfg.surv_bt * static_cast<double>(j + 1);
    for (int step = 1; step <= steps; ++step) {
      const double h =
          logistic_cdf(cfg.surv_b0 + trend + cfg.surv_bz * z1 +
                       cfg.surv_bz * z2 + cfg.surv_baw * a * W);
      if (rng.bernoulli(h)) {
        T = cfg.G * j + step;
        return false;
      }
    }
    return true;
  };

  push_state();
  const double lo_base = 0.4 + 0.02 * static_cast<double>(cfg.K);
  for (int j = 1; j <= cfg.K; ++j) {
    if (!survive_interval(j - 1)) {
      s.event_time = T;
      s.event_observed = true;
      return s;
    }
    // z1 and z2 decline multiplicatively, with the uniform bounds
    // widening in K so the cumulative decline is comparable across
    // landmark designs
    z1 = rng.uniform(lo_base, 1.0) * z1;
    z2 = rng.uniform(lo_base, 1.0) * z2;
    const int a_prev = a;
    std::vector<double> zrow{z1, z2, z3};
    detail::append_observed(cfg, zrow);
    if (forced) {
      a = decide(*forced, zrow, a_prev);
    } else if (a_prev == 1) {
      a = 1;
    } else {
      a = rng.bernoulli(logistic_cdf(cfg.kappa[0] + cfg.kappa[1] * z1 +
                                     cfg.kappa[2] * z2))
              ? 1
              : 0;
    }
    if (a != decide(opt, zrow, a_prev)) W = 0;
    if (W == 0) ++stages_off;

    // quality declines relative to its baseline with a penalty that
    // accumulates over non-compliant landmarks
    const double pen = 0.1 * static_cast<double>(stages_off);
    double lo = lo_base - pen, hi = 1.0 - pen;
    if (lo < 0.0) lo = 0.0;
    if (hi < lo) {
      hi = lo;
      if (stats) ++stats->clamped_quality_bounds;
    }
    z3 = rng.uniform(lo, hi) * z30;
    s.q.back() = z3 / z30;  // score for the interval just completed
    push_state();
    if (!forced && cfg.censoring_enabled &&
        rng.bernoulli(logistic_cdf(cfg.nu_c[0] + cfg.nu_c[1] * z1 +
                                   cfg.nu_c[2] * z2))) {
      s.censor_time = cfg.G * j;
      return s;
    }
  }
  return s;  // alive at the study end
}

inline Panel generate_panel(const SimConfig& cfg, std::uint64_t seed,
                            SimStats* stats = nullptr) {
  Panel panel;
  panel.landmarks = cfg.landmarks();
  panel.covariate_names = cfg.covariate_names();
  panel.subjects.reserve(cfg.n);
  Rng rng(mix_seed(seed, 0x70616e656cULL));
  for (int i = 0; i < cfg.n; ++i) {
    SubjectTrajectory s = simulate_subject(cfg, rng, nullptr, stats);
    s.id = "s" + std::to_string(i + 1);
    panel.subjects.push_back(std::move(s));
  }
  return panel;
}

// True (oracle) hazard fits on the latent z columns; useful for plug-in
// truth arms and weight diagnostics.
inline std::pair<HazardFit, HazardFit> oracle_hazard_fits(const SimConfig& cfg) {
  HazardFit fa;
  fa.kind = HazardFit::Kind::oracle;
  fa.role = HazardRole::treatment;
  const double k0 = cfg.kappa[0], k1 = cfg.kappa[1], k2 = cfg.kappa[2];
  fa.oracle = [k0, k1, k2](int, const std::vector<double>& z, int) {
    return logistic_cdf(k0 + k1 * z[0] + k2 * z[1]);
  };
  HazardFit fc;
  fc.kind = HazardFit::Kind::oracle;
  fc.role = HazardRole::censoring;
  if (cfg.censoring_enabled) {
    const double v0 = cfg.nu_c[0], v1 = cfg.nu_c[1], v2 = cfg.nu_c[2];
    fc.oracle = [v0, v1, v2](int, const std::vector<double>& z, int) {
      return logistic_cdf(v0 + v1 * z[0] + v2 * z[1]);
    };
  } else {
    fc.oracle = [](int, const std::vector<double>&, int) { return 0.0; };
  }
  return {std::move(fa), std::move(fc)};
}

struct OracleValue {
  double value = 0.0;
  double mc_se = 0.0;
};

// Monte Carlo truth R(eta) = E[min(U, L_U)] under forced compliance with
// g^eta and no censoring.
inline OracleValue oracle_rqal(const SimConfig& cfg,
                               const std::vector<double>& eta_raw, long mc_n,
                               std::uint64_t seed) {
  if (mc_n < 10000) throw std::invalid_argument("oracle_rqal: mc_n >= 10^4");
  const Regime regime =
      Regime::normalized(eta_raw, SimConfig::regime_columns());
  const Landmarks lm = cfg.landmarks();
  Rng rng(mix_seed(seed, 0x6f7261636cULL));
  double sum = 0.0, sumsq = 0.0;
  for (long i = 0; i < mc_n; ++i) {
    const SubjectTrajectory s = simulate_subject(cfg, rng, &regime);
    const double v = std::min(compute_qal(s, lm), cfg.L_U);
    sum += v;
    sumsq += v * v;
  }
  const double n = static_cast<double>(mc_n);
  OracleValue out;
  out.value = sum / n;
  out.mc_se = std::sqrt((sumsq / n - out.value * out.value) / n);
  return out;
}

// Percent of fresh paths following the optimal rule on which the
// candidate rule disagrees at any at-risk landmark decision.
inline double misclassification_rate(const SimConfig& cfg,
                                     const std::vector<double>& eta_hat,
                                     long mc_n, std::uint64_t seed) {
  if (mc_n < 10000)
    throw std::invalid_argument("misclassification_rate: mc_n >= 10^4");
  const Regime opt =
      Regime::normalized(cfg.eta_opt, SimConfig::regime_columns());
  const Regime hat =
      Regime::normalized(eta_hat, SimConfig::regime_columns());
  Rng rng(mix_seed(seed, 0x6d69736dULL));
  long disagree = 0;
  for (long i = 0; i < mc_n; ++i) {
    const SubjectTrajectory s = simulate_subject(cfg, rng, &opt);
    for (int j = 1; j < s.num_at_risk(); ++j) {
      if (decide(hat, s.z[j], s.a[j - 1]) != s.a[j]) {
        ++disagree;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(disagree) / static_cast<double>(mc_n);
}

// ---- replicate studies ----

struct MethodSpec {
  enum class Nuisance { logistic, hal_cv, hal_under, oracle };
  std::string name;
  Nuisance nuisance = Nuisance::logistic;
  EstimatorMode mode = EstimatorMode::ipw;
};

struct StudyOptions {
  long mc_n_oracle = 100000;  // for the fixed target R(eta_opt)
  long mc_n_rep = 20000;      // per-replicate R(eta-hat) and MR
  SearchConfig search;        // seed is overridden per replicate
  HalOptions hal;

  StudyOptions() {
    search.patience = 15;
    hal.max_sweeps = 2000;
  }
};

struct RepMethodResult {
  bool ok = false;
  std::string error;
  std::vector<double> eta;
  double rhat = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double true_r = 0.0;
  double mr = 0.0;
  double lambda_cv = std::numeric_limits<double>::quiet_NaN();
  double lambda_sel = std::numeric_limits<double>::quiet_NaN();
};

inline std::uint64_t replicate_seed(const SimConfig& cfg, int rep) {
  return mix_seed(cfg.seed, 0x72657000ULL + static_cast<std::uint64_t>(rep));
}

// Runs one replicate for every method arm; nuisance fits are shared
// between arms that use the same fitting procedure.
inline std::vector<RepMethodResult> mc_replicate(
    const SimConfig& cfg, const std::vector<MethodSpec>& methods,
    const StudyOptions& opts, int rep) {
  const std::uint64_t rseed = replicate_seed(cfg, rep);
  const Panel panel = generate_panel(cfg, rseed);
  const std::vector<int> obs = cfg.observed_columns();

  FeatureSpec logit_spec;  // matches the generating logistic form
  logit_spec.stage_poly = false;
  logit_spec.cov_idx =
      cfg.transform == ObservedTransform::identity ? std::vector<int>{0, 1} : obs;
  FeatureSpec hal_spec;
  hal_spec.stage_poly = false;
  hal_spec.cov_idx = obs;

  std::map<std::string, std::pair<HazardFit, HazardFit>> cache;
  auto nuisance_fits = [&](MethodSpec::Nuisance nk)
      -> const std::pair<HazardFit, HazardFit>& {
    const bool is_hal = nk == MethodSpec::Nuisance::hal_cv ||
                        nk == MethodSpec::Nuisance::hal_under;
    const std::string key = is_hal ? "hal"
                            : nk == MethodSpec::Nuisance::logistic ? "logit"
                                                                   : "oracle";
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::pair<HazardFit, HazardFit> fits;
    if (key == "oracle") {
      fits = oracle_hazard_fits(cfg);
    } else if (key == "logit") {
      fits.first = fit_hazard_logistic(panel, HazardRole::treatment, logit_spec);
      fits.second = cfg.censoring_enabled
                        ? fit_hazard_logistic(panel, HazardRole::censoring,
                                              logit_spec)
                        : oracle_hazard_fits(cfg).second;
    } else {
      HalOptions ho = opts.hal;
      ho.seed = mix_seed(rseed, 0x68616c61ULL);
      fits.first = fit_hazard_hal(panel, HazardRole::treatment, hal_spec, ho);
      if (cfg.censoring_enabled) {
        ho.seed = mix_seed(rseed, 0x68616c63ULL);
        fits.second = fit_hazard_hal(panel, HazardRole::censoring, hal_spec, ho);
      } else {
        fits.second = oracle_hazard_fits(cfg).second;
      }
    }
    return cache.emplace(key, std::move(fits)).first->second;
  };

  std::vector<RepMethodResult> results(methods.size());
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const MethodSpec& method = methods[mi];
    RepMethodResult& res = results[mi];
    try {
      std::pair<HazardFit, HazardFit> fits = nuisance_fits(method.nuisance);
      if (method.nuisance == MethodSpec::Nuisance::hal_cv) {
        if (fits.first.kind == HazardFit::Kind::hal) fits.first.hal_use_cv = true;
        if (fits.second.kind == HazardFit::Kind::hal)
          fits.second.hal_use_cv = true;
      }
      if (fits.first.kind == HazardFit::Kind::hal) {
        const HalPath& p = *fits.first.hal;
        res.lambda_cv = p.lambda_cv();
        res.lambda_sel =
            fits.first.hal_use_cv ? p.lambda_cv() : p.lambda_breve();
      }
      const RqalContext ctx(panel, fits.first, fits.second, cfg.L_U);

      const bool bc = method.mode == EstimatorMode::bc_ipw;
      Objective obj = [&](const std::vector<double>& eta) {
        const Regime r{eta, SimConfig::regime_columns()};
        const double nu = bc ? default_bandwidth(panel, r) : 0.0;
        return ctx.value(r, method.mode, nu);
      };
      SearchConfig sc = opts.search;
      sc.seed = mix_seed(rseed, 0x67610000ULL + mi);
      const SearchResult sr = maximize(obj, 3, sc);
      const Regime best{sr.eta, SimConfig::regime_columns()};
      const double nu = bc ? default_bandwidth(panel, best) : 0.0;
      const RqalEstimate est = ctx.estimate(best, method.mode, nu);

      res.eta = sr.eta;
      res.rhat = est.value;
      res.se = est.se;
      res.ci_lo = est.ci_lo;
      res.ci_hi = est.ci_hi;
      res.true_r =
          oracle_rqal(cfg, sr.eta, opts.mc_n_rep, mix_seed(rseed, 0x7472ULL + mi))
              .value;
      res.mr = misclassification_rate(cfg, sr.eta, opts.mc_n_rep,
                                      mix_seed(rseed, 0x6d7200ULL + mi));
      res.ok = true;
    } catch (const std::exception& e) {
      res.ok = false;
      res.error = e.what();
    }
  }
  return results;
}

struct McRow {
  std::string method;
  // ratio summaries are relative to the corresponding truth ratios, so
  // an unbiased search reports 1.00
  double eta0_mean = 0.0, eta0_sd = 0.0;
  double eta1_mean = 0.0, eta1_sd = 0.0;
  double eta2_mean = 0.0, eta2_sd = 0.0;
  double rhat_mean = 0.0, rhat_sd = 0.0;
  double se_mean = 0.0;
  double cp = 0.0;
  double truer_mean = 0.0, truer_sd = 0.0;
  double mr_mean = 0.0, mr_sd = 0.0;
  double lambda_cv_mean = std::numeric_limits<double>::quiet_NaN();
  double lambda_sel_mean = std::numeric_limits<double>::quiet_NaN();
  int n_ok = 0;
  int n_fail = 0;
};

struct McReport {
  SimConfig cfg;
  int reps = 0;
  double r_opt = 0.0;  // fixed coverage target
  double r_opt_mc_se = 0.0;
  std::vector<McRow> rows;
  std::vector<std::vector<RepMethodResult>> detail;  // [rep][method]
};

inline McReport aggregate_mc(const SimConfig& cfg,
                             const std::vector<MethodSpec>& methods,
                             std::vector<std::vector<RepMethodResult>> detail,
                             const OracleValue& target) {
  McReport rep;
  rep.cfg = cfg;
  rep.reps = static_cast<int>(detail.size());
  rep.r_opt = target.value;
  rep.r_opt_mc_se = target.mc_se;

  const double s3 = std::sqrt(3.0);
  const double t0 = cfg.eta_opt[0] / s3, t1 = cfg.eta_opt[1] / s3,
               t2 = cfg.eta_opt[2] / s3;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    McRow row;
    row.method = methods[mi].name;
    std::vector<double> r0, r1, r2, rhat, se, truer, mr, lcv, lsel;
    int covered = 0;
    for (const auto& reprow : detail) {
      const RepMethodResult& r = reprow[mi];
      if (!r.ok) {
        ++row.n_fail;
        continue;
      }
      ++row.n_ok;
      r0.push_back((r.eta[0] / r.eta[1]) / (t0 / t1));
      r1.push_back((r.eta[1] / r.eta[2]) / (t1 / t2));
      r2.push_back((r.eta[2] / r.eta[0]) / (t2 / t0));
      rhat.push_back(r.rhat);
      se.push_back(r.se);
      truer.push_back(r.true_r);
      mr.push_back(r.mr);
      if (r.ci_lo <= target.value && target.value <= r.ci_hi) ++covered;
      if (!std::isnan(r.lambda_cv)) {
        lcv.push_back(r.lambda_cv);
        lsel.push_back(r.lambda_sel);
      }
    }
    if (row.n_ok > 0) {
      row.eta0_mean = mean_of(r0);
      row.eta1_mean = mean_of(r1);
      row.eta2_mean = mean_of(r2);
      row.rhat_mean = mean_of(rhat);
      row.se_mean = mean_of(se);
      row.truer_mean = mean_of(truer);
      row.mr_mean = mean_of(mr);
      row.cp = static_cast<double>(covered) / static_cast<double>(row.n_ok);
      if (row.n_ok > 1) {
        row.eta0_sd = sd_of(r0);
        row.eta1_sd = sd_of(r1);
        row.eta2_sd = sd_of(r2);
        row.rhat_sd = sd_of(rhat);
        row.truer_sd = sd_of(truer);
        row.mr_sd = sd_of(mr);
      }
      if (!lcv.empty()) {
        row.lambda_cv_mean = mean_of(lcv);
        row.lambda_sel_mean = mean_of(lsel);
      }
    }
    rep.rows.push_back(std::move(row));
  }
  rep.detail = std::move(detail);
  return rep;
}

using McProgress = std::function<void(int rep, int reps)>;

inline McReport mc_study(const SimConfig& cfg, int reps,
                         const std::vector<MethodSpec>& methods,
                         const StudyOptions& opts,
                         const McProgress& progress = nullptr) {
  if (reps < 1) throw std::invalid_argument("mc_study: reps >= 1");
  const OracleValue target =
      oracle_rqal(cfg, cfg.eta_opt, opts.mc_n_oracle, mix_seed(cfg.seed, 1));
  std::vector<std::vector<RepMethodResult>> detail;
  detail.reserve(reps);
  for (int rep = 0; rep < reps; ++rep) {
    detail.push_back(mc_replicate(cfg, methods, opts, rep));
    if (progress) progress(rep + 1, reps);
  }
  McReport report = aggregate_mc(cfg, methods, std::move(detail), target);
  for (const auto& row : report.rows)
    if (row.n_fail > 0 &&
        static_cast<double>(row.n_fail) > 0.1 * static_cast<double>(reps))
      throw std::runtime_error("mc_study: method '" + row.method +
                               "' failed in more than 10% of replicates");
  return report;
}

// table column order: eta ratios, point estimate, SE, CP, truth under the
// selected regime, misclassification rate
inline std::string mc_report_csv(const McReport& rep) {
  std::string out =
      "method,eta0_mean,eta0_sd,eta1_mean,eta1_sd,eta2_mean,eta2_sd,"
      "rhat_mean,rhat_sd,se_mean,cp,truer_mean,truer_sd,mr_mean,mr_sd,"
      "n_ok,n_fail\n";
  for (const auto& r : rep.rows) {
    out += r.method;
    for (double v : {r.eta0_mean, r.eta0_sd, r.eta1_mean, r.eta1_sd,
                     r.eta2_mean, r.eta2_sd, r.rhat_mean, r.rhat_sd, r.se_mean,
                     r.cp, r.truer_mean, r.truer_sd, r.mr_mean, r.mr_sd})
      out += "," + format_double(v);
    out += "," + std::to_string(r.n_ok) + "," + std::to_string(r.n_fail) + "\n";
  }
  return out;
}

inline nlohmann::json mc_report_json(const McReport& rep) {
  nlohmann::json j;
  j["reps"] = rep.reps;
  j["r_opt"] = rep.r_opt;
  j["r_opt_mc_se"] = rep.r_opt_mc_se;
  j["mr_definition"] = "per subject path, any disagreeing decision";
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    j["rows"].push_back({{"method", r.method},
                         {"eta0", {r.eta0_mean, r.eta0_sd}},
                         {"eta1", {r.eta1_mean, r.eta1_sd}},
                         {"eta2", {r.eta2_mean, r.eta2_sd}},
                         {"rhat", {r.rhat_mean, r.rhat_sd}},
                         {"se_mean", r.se_mean},
                         {"cp", r.cp},
                         {"true_r", {r.truer_mean, r.truer_sd}},
                         {"mr", {r.mr_mean, r.mr_sd}},
                         {"lambda_cv_mean", r.lambda_cv_mean},
                         {"lambda_sel_mean", r.lambda_sel_mean},
                         {"n_ok", r.n_ok},
                         {"n_fail", r.n_fail}});
  }
  j["replicates"] = nlohmann::json::array();
  for (const auto& reprow : rep.detail) {
    nlohmann::json jr = nlohmann::json::array();
    for (const auto& r : reprow) {
      nlohmann::json jm;
      jm["ok"] = r.ok;
      if (r.ok) {
        jm["eta"] = r.eta;
        jm["rhat"] = r.rhat;
        jm["se"] = r.se;
        jm["ci"] = {r.ci_lo, r.ci_hi};
        jm["true_r"] = r.true_r;
        jm["mr"] = r.mr;
      } else {
        jm["error"] = r.error;
      }
      jr.push_back(std::move(jm));
    }
    j["replicates"].push_back(std::move(jr));
  }
  return j;
}

// ---- one-stage benchmark with Gaussian outcome ----

struct OneStageRow {
  std::string method;
  double bias = 0.0;
  double sd = 0.0;
  double se_mean = 0.0;
  double cp = 0.0;
  double lambda_mean = std::numeric_limits<double>::quiet_NaN();
};

struct OneStageReport {
  int n = 0;
  int reps = 0;
  std::vector<OneStageRow> rows;
  std::vector<std::vector<double>> estimates;  // [method][rep]
};

// Ratio estimator of E[Y(1)] with an influence-curve standard error that
// treats the fitted propensity as known.
inline std::pair<double, double> one_stage_ipw(const std::vector<int>& a,
                                               const std::vector<double>& y,
                                               const std::vector<double>& ps) {
  const std::size_t n = a.size();
  double sw = 0.0, swy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = a[i] / std::clamp(ps[i], kHazardEps, 1.0 - kHazardEps);
    sw += w;
    swy += w * y[i];
  }
  if (sw == 0.0) throw std::runtime_error("one_stage_ipw: no treated subjects");
  const double mu = swy / sw;
  double s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = a[i] / std::clamp(ps[i], kHazardEps, 1.0 - kHazardEps);
    const double ic = w * (y[i] - mu) / (sw / static_cast<double>(n));
    s2 += ic * ic;
  }
  s2 /= static_cast<double>(n);
  return {mu, std::sqrt(s2 / static_cast<double>(n))};
}

inline OneStageReport appendix_one_stage_study(int n, int reps,
                                               std::uint64_t seed,
                                               const HalOptions& hal_base) {
  if (n < 100) throw std::invalid_argument("one_stage_study: n >= 100");
  const double alpha1 = 1.0, alpha2 = 1.0;
  const double beta1 = -1.5, beta2 = 1.5;
  const double sd0 = std::sqrt(0.5);

  const std::vector<std::string> names{"logit", "cv-hal", "under-hal",
                                       "plug-in-truth"};
  OneStageReport rep;
  rep.n = n;
  rep.reps = reps;
  rep.estimates.assign(names.size(), {});
  std::vector<std::vector<double>> ses(names.size());
  std::vector<std::vector<double>> lambdas(names.size());

  for (int r = 0; r < reps; ++r) {
    Rng rng(mix_seed(seed, 0x6f6e6500ULL + static_cast<std::uint64_t>(r)));
    std::vector<std::vector<double>> X(n, std::vector<double>(2));
    std::vector<int> a(n);
    std::vector<double> y(n), ps_true(n);
    for (int i = 0; i < n; ++i) {
      const double z1 = sd0 * rng.normal();
      const double z2 = sd0 * rng.normal();
      const double eps = sd0 * rng.normal();
      ps_true[i] = logistic_cdf(beta1 * z1 + beta2 * z2);
      a[i] = rng.bernoulli(ps_true[i]) ? 1 : 0;
      y[i] = alpha1 * z1 + alpha2 * z2 + eps;
      X[i][0] = std::exp(z1 / 2.0);
      X[i][1] = (z1 + z2) * (z1 + z2);
    }

    // misspecified logistic on the observed covariates
    {
      const LogisticFit lf = fit_logistic(X, a);
      std::vector<double> ps(n);
      for (int i = 0; i < n; ++i) ps[i] = logistic_predict(lf.beta, X[i]);
      auto [mu, se] = one_stage_ipw(a, y, ps);
      rep.estimates[0].push_back(mu);
      ses[0].push_back(se);
    }
    // one HAL path serves both selection rules
    {
      HalOptions ho = hal_base;
      ho.seed = mix_seed(seed, 0x686f6e65ULL + static_cast<std::uint64_t>(r));
      HalPath path = fit_hal_path(X, a, ho);
      select_undersmoothed(path, X, a, HazardRole::treatment, n);
      for (int which = 0; which < 2; ++which) {
        const HalModel& m = which == 0 ? path.model_cv() : path.model_breve();
        std::vector<double> ps(n);
        for (int i = 0; i < n; ++i)
          ps[i] = logistic_cdf(hal_predict_link(m, path.basis, X[i]));
        auto [mu, se] = one_stage_ipw(a, y, ps);
        rep.estimates[1 + which].push_back(mu);
        ses[1 + which].push_back(se);
        lambdas[1 + which].push_back(m.lambda);
      }
    }
    {
      auto [mu, se] = one_stage_ipw(a, y, ps_true);
      rep.estimates[3].push_back(mu);
      ses[3].push_back(se);
    }
  }

  for (std::size_t mi = 0; mi < names.size(); ++mi) {
    OneStageRow row;
    row.method = names[mi];
    const auto& est = rep.estimates[mi];
    row.bias = mean_of(est);
    row.sd = est.size() > 1 ? sd_of(est) : 0.0;
    row.se_mean = mean_of(ses[mi]);
    int covered = 0;
    for (std::size_t r = 0; r < est.size(); ++r)
      if (std::abs(est[r]) <= 1.959963984540054 * ses[mi][r]) ++covered;
    row.cp = est.empty() ? 0.0
                         : static_cast<double>(covered) /
                               static_cast<double>(est.size());
    if (!lambdas[mi].empty()) row.lambda_mean = mean_of(lambdas[mi]);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// ---- multi-stage tuning-parameter comparison (known optimal rule) ----

struct LambdaCompareReport {
  int n = 0;
  int reps = 0;
  double r_opt = 0.0;
  std::vector<OneStageRow> rows;  // bias/sd/se/cp per method
  double lambda_cv_mean = 0.0;
  double lambda_under_mean = 0.0;
  double frac_under_smaller = 0.0;  // replicates with lambda_breve < lambda_cv
};

inline LambdaCompareReport appendix_multistage_study(int n, int reps,
                                                     std::uint64_t seed,
                                                     const HalOptions& hal_base,
                                                     long mc_n_oracle = 100000) {
  SimConfig cfg = SimConfig::lambda_benchmark(n, seed);
  const OracleValue target =
      oracle_rqal(cfg, cfg.eta_opt, mc_n_oracle, mix_seed(seed, 2));
  const Regime opt =
      Regime::normalized(cfg.eta_opt, SimConfig::regime_columns());

  const std::vector<std::string> names{"logit", "cv-hal", "under-hal"};
  std::vector<std::vector<double>> est(3), ses(3);
  std::vector<double> lcv, lunder;
  int under_smaller = 0;

  FeatureSpec logit_spec, hal_spec;
  logit_spec.stage_poly = false;
  logit_spec.cov_idx = cfg.observed_columns();
  hal_spec = logit_spec;

  for (int r = 0; r < reps; ++r) {
    const std::uint64_t rseed = replicate_seed(cfg, r);
    const Panel panel = generate_panel(cfg, rseed);
    const HazardFit no_censor = oracle_hazard_fits(cfg).second;

    const HazardFit logit_fit =
        fit_hazard_logistic(panel, HazardRole::treatment, logit_spec);
    {
      const RqalEstimate e =
          rqal(panel, logit_fit, no_censor, opt, cfg.L_U, EstimatorMode::ipw);
      est[0].push_back(e.value);
      ses[0].push_back(e.se);
    }
    HalOptions ho = hal_base;
    ho.seed = mix_seed(rseed, 0x686d73ULL);
    HazardFit hal_fit =
        fit_hazard_hal(panel, HazardRole::treatment, hal_spec, ho);
    const HalPath& path = *hal_fit.hal;
    lcv.push_back(path.lambda_cv());
    lunder.push_back(path.lambda_breve());
    if (path.lambda_breve() < path.lambda_cv()) ++under_smaller;
    for (int which = 0; which < 2; ++which) {
      hal_fit.hal_use_cv = which == 0;
      const RqalEstimate e =
          rqal(panel, hal_fit, no_censor, opt, cfg.L_U, EstimatorMode::ipw);
      est[1 + which].push_back(e.value);
      ses[1 + which].push_back(e.se);
    }
  }

  LambdaCompareReport rep;
  rep.n = n;
  rep.reps = reps;
  rep.r_opt = target.value;
  for (int mi = 0; mi < 3; ++mi) {
    OneStageRow row;
    row.method = names[mi];
    row.bias = mean_of(est[mi]) - target.value;
    row.sd = est[mi].size() > 1 ? sd_of(est[mi]) : 0.0;
    row.se_mean = mean_of(ses[mi]);
    int covered = 0;
    for (std::size_t r = 0; r < est[mi].size(); ++r)
      if (std::abs(est[mi][r] - target.value) <=
          1.959963984540054 * ses[mi][r])
        ++covered;
    row.cp = est[mi].empty() ? 0.0
                             : static_cast<double>(covered) /
                                   static_cast<double>(est[mi].size());
    rep.rows.push_back(std::move(row));
  }
  rep.lambda_cv_mean = mean_of(lcv);
  rep.lambda_under_mean = mean_of(lunder);
  rep.frac_under_smaller =
      reps > 0 ? static_cast<double>(under_smaller) / static_cast<double>(reps)
               : 0.0;
  return rep;
}

}  // namespace qalopt
