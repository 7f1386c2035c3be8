#pragma once

// Discrete hazards for treatment initiation and censoring: risk-set
// construction, pooled-logistic and HAL fits behind one predictor
// interface, and the per-subject cumulative weights H_a, H_c.

#include <algorithm>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qalopt/common.hpp"
#include "qalopt/hal.hpp"
#include "qalopt/logistic.hpp"
#include "qalopt/panel.hpp"

namespace qalopt {

inline constexpr double kHazardEps = 1e-3;    // truncation of predicted hazards
inline constexpr double kWeightFloor = 1e-3;  // floor on cumulative products

// Which columns of Z enter the hazard design, plus stage polynomial
// terms (stage, stage^2, stage^3) and optionally the current treatment
// indicator (censoring role only).
struct FeatureSpec {
  std::vector<int> cov_idx;
  bool stage_poly = true;
  bool include_treatment = false;

  std::vector<double> build(int stage, const std::vector<double>& z,
                            int a_j) const {
    std::vector<double> f;
    if (stage_poly) {
      const double s = static_cast<double>(stage);
      f.push_back(s);
      f.push_back(s * s);
      f.push_back(s * s * s);
    }
    for (int idx : cov_idx) {
      if (idx < 0 || idx >= static_cast<int>(z.size()))
        throw std::invalid_argument("feature spec: covariate index out of range");
      f.push_back(z[idx]);
    }
    if (include_treatment) f.push_back(static_cast<double>(a_j));
    return f;
  }

  std::size_t dim() const {
    return cov_idx.size() + (stage_poly ? 3 : 0) + (include_treatment ? 1 : 0);
  }
};

struct RiskSetRow {
  std::string subject_id;
  int subject_index = 0;
  int stage = 0;
  std::vector<double> features;
  int response = 0;
};

struct RiskSetDiagnostics {
  std::vector<int> rows_per_stage;  // indexed 1..K
  std::vector<std::string> warnings;
};

// Treatment rows: (subject, j) with Y_j = 1, A_{j-1} = 0, uncensored
// before l_j; response A_j. Censoring rows: (subject, j) with Y_j = 1,
// uncensored before l_j; response I(censored in [l_j, l_{j+1})).
inline std::vector<RiskSetRow> build_risk_rows(
    const Panel& panel, HazardRole role, const FeatureSpec& spec,
    RiskSetDiagnostics* diag = nullptr) {
  const Landmarks& lm = panel.landmarks;
  std::vector<RiskSetRow> rows;
  std::vector<int> per_stage(lm.K + 1, 0);
  for (std::size_t si = 0; si < panel.subjects.size(); ++si) {
    const auto& s = panel.subjects[si];
    const int m = s.num_at_risk();
    for (int j = 1; j < m; ++j) {
      if (role == HazardRole::treatment) {
        if (s.a[j - 1] == 1) break;  // left the initiation risk set
        rows.push_back({s.id, static_cast<int>(si), j,
                        spec.build(j, s.z[j], s.a[j]), s.a[j]});
      } else {
        const double l_next = (j + 1 <= lm.K) ? lm.times[j + 1] : kInf;
        const bool censored_here = !s.event_observed &&
                                   s.censor_time >= lm.times[j] &&
                                   s.censor_time < l_next;
        rows.push_back({s.id, static_cast<int>(si), j,
                        spec.build(j, s.z[j], s.a[j]), censored_here ? 1 : 0});
      }
      ++per_stage[j];
    }
  }
  if (diag) {
    diag->rows_per_stage = per_stage;
    for (int j = 1; j <= lm.K; ++j)
      if (per_stage[j] == 0)
        diag->warnings.push_back("empty risk set at landmark " + std::to_string(j));
  }
  return rows;
}

// Plug-in hazard for simulation truth: stage, covariates, treatment -> p.
using OracleHazard = std::function<double(int, const std::vector<double>&, int)>;

struct HazardFit {
  enum class Kind { pooled_logistic, hal, oracle };
  Kind kind = Kind::pooled_logistic;
  HazardRole role = HazardRole::treatment;
  FeatureSpec spec;
  std::optional<LogisticFit> logistic;
  std::optional<HalPath> hal;     // selection indices decide the model used
  bool hal_use_cv = false;        // predict from lambda_CV instead of breve
  OracleHazard oracle;            // not serializable

  // Predicted discrete hazard; fitted kinds are truncated to [eps, 1-eps],
  // oracle hazards are returned exactly.
  double predict(int stage, const std::vector<double>& z, int a_j) const {
    double p;
    if (kind == Kind::oracle) {
      return oracle(stage, z, a_j);
    } else {
      const auto f = spec.build(stage, z, a_j);
      if (kind == Kind::pooled_logistic) {
        p = logistic_predict(logistic->beta, f);
      } else {
        const HalModel& m = hal_use_cv ? hal->model_cv() : hal->model_breve();
        p = logistic_cdf(hal_predict_link(m, hal->basis, f));
      }
    }
    return std::clamp(p, kHazardEps, 1.0 - kHazardEps);
  }
};

inline HazardFit fit_hazard_logistic(const Panel& panel, HazardRole role,
                                     const FeatureSpec& spec) {
  const auto rows = build_risk_rows(panel, role, spec);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  X.reserve(rows.size());
  for (const auto& r : rows) {
    X.push_back(r.features);
    y.push_back(r.response);
  }
  HazardFit fit;
  fit.kind = HazardFit::Kind::pooled_logistic;
  fit.role = role;
  fit.spec = spec;
  fit.logistic = fit_logistic(X, y);
  return fit;
}

// Fits the HAL path on the risk rows, then applies the undersmoothing
// selection with n_units subjects (J < sqrt(n)).
inline HazardFit fit_hazard_hal(const Panel& panel, HazardRole role,
                                const FeatureSpec& spec, const HalOptions& opt,
                                bool use_cv = false) {
  const auto rows = build_risk_rows(panel, role, spec);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  X.reserve(rows.size());
  for (const auto& r : rows) {
    X.push_back(r.features);
    y.push_back(r.response);
  }
  HazardFit fit;
  fit.kind = HazardFit::Kind::hal;
  fit.role = role;
  fit.spec = spec;
  fit.hal = fit_hal_path(X, y, opt);
  select_undersmoothed(*fit.hal, X, y, role, panel.n());
  fit.hal_use_cv = use_cv;
  return fit;
}

struct CumulativeWeights {
  double H_a = 1.0;
  double H_c = 1.0;
};

// Per-landmark hazard factors for one subject; cumulative products over
// j <= l(x) give H_a(x) and H_c(x). Post-initiation treatment factors
// are 1 by convention.
struct SubjectHazardFactors {
  std::vector<double> pa;  // pa[j] = P(A_j = a_j | history), j = 1..m-1
  std::vector<double> pc;  // pc[j] = 1 - h_c,j

  CumulativeWeights cumulative(int l_x) const {
    CumulativeWeights w;
    const int upto = std::min<int>(l_x, static_cast<int>(pa.size()) - 1);
    for (int j = 1; j <= upto; ++j) {
      w.H_a *= pa[j];
      w.H_c *= pc[j];
    }
    w.H_a = std::max(w.H_a, kWeightFloor);
    w.H_c = std::max(w.H_c, kWeightFloor);
    return w;
  }
};

inline SubjectHazardFactors subject_hazard_factors(const SubjectTrajectory& s,
                                                   const HazardFit& fit_a,
                                                   const HazardFit& fit_c) {
  const int m = s.num_at_risk();
  SubjectHazardFactors f;
  f.pa.assign(m, 1.0);
  f.pc.assign(m, 1.0);
  for (int j = 1; j < m; ++j) {
    if (s.a[j - 1] == 0) {
      const double p = fit_a.predict(j, s.z[j], s.a[j]);
      f.pa[j] = s.a[j] == 1 ? p : 1.0 - p;
    }
    f.pc[j] = 1.0 - fit_c.predict(j, s.z[j], s.a[j]);
  }
  return f;
}

inline std::vector<CumulativeWeights> cumulative_weights(
    const Panel& panel, const HazardFit& fit_a, const HazardFit& fit_c,
    double x) {
  std::vector<CumulativeWeights> out;
  out.reserve(panel.n());
  for (const auto& s : panel.subjects) {
    const TargetDerived d = derive_target(s, panel.landmarks, x);
    out.push_back(subject_hazard_factors(s, fit_a, fit_c).cumulative(d.l_x));
  }
  return out;
}

// ---- JSON serialization (bit-exact via binary double encoding) ----

namespace detail {

inline nlohmann::json double_bits(double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  return nlohmann::json{{"v", v}, {"bits", bits}};
}

inline double double_from_bits(const nlohmann::json& j) {
  const std::uint64_t bits = j.at("bits").get<std::uint64_t>();
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

inline nlohmann::json doubles_to_json(const std::vector<double>& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : v) arr.push_back(double_bits(x));
  return arr;
}

inline std::vector<double> doubles_from_json(const nlohmann::json& arr) {
  std::vector<double> v;
  for (const auto& j : arr) v.push_back(double_from_bits(j));
  return v;
}

}  // namespace detail

inline nlohmann::json hazard_fit_to_json(const HazardFit& fit) {
  nlohmann::json j;
  j["kind"] = fit.kind == HazardFit::Kind::pooled_logistic ? "pooled-logistic"
                                                           : "hal";
  if (fit.kind == HazardFit::Kind::oracle)
    throw std::invalid_argument("oracle hazard fits are not serializable");
  j["role"] = fit.role == HazardRole::treatment ? "treatment" : "censoring";
  j["feature_spec"] = {{"cov_idx", fit.spec.cov_idx},
                       {"stage_poly", fit.spec.stage_poly},
                       {"include_treatment", fit.spec.include_treatment}};
  if (fit.kind == HazardFit::Kind::pooled_logistic) {
    j["coefficients"] = detail::doubles_to_json(fit.logistic->beta);
  } else {
    const HalPath& p = *fit.hal;
    nlohmann::json basis = nlohmann::json::array();
    for (const auto& bf : p.basis)
      basis.push_back({{"section", bf.section},
                       {"knots", detail::doubles_to_json(bf.knots)}});
    j["basis"] = basis;
    j["lambdas"] = detail::doubles_to_json(p.lambdas);
    j["idx_cv"] = p.idx_cv;
    j["idx_tilde"] = p.idx_tilde;
    j["idx_floor"] = p.idx_floor;
    j["idx_breve"] = p.idx_breve;
    j["use_cv"] = fit.hal_use_cv;
    const HalModel& m = fit.hal_use_cv ? p.model_cv() : p.model_breve();
    j["model"] = {{"beta0", detail::double_bits(m.beta0)},
                  {"beta", detail::doubles_to_json(m.beta)},
                  {"lambda", detail::double_bits(m.lambda)}};
  }
  return j;
}

inline HazardFit hazard_fit_from_json(const nlohmann::json& j) {
  HazardFit fit;
  fit.role = j.at("role") == "treatment" ? HazardRole::treatment
                                         : HazardRole::censoring;
  fit.spec.cov_idx = j.at("feature_spec").at("cov_idx").get<std::vector<int>>();
  fit.spec.stage_poly = j.at("feature_spec").at("stage_poly").get<bool>();
  fit.spec.include_treatment =
      j.at("feature_spec").at("include_treatment").get<bool>();
  if (j.at("kind") == "pooled-logistic") {
    fit.kind = HazardFit::Kind::pooled_logistic;
    LogisticFit lf;
    lf.beta = detail::doubles_from_json(j.at("coefficients"));
    fit.logistic = lf;
  } else {
    fit.kind = HazardFit::Kind::hal;
    HalPath p;
    for (const auto& bj : j.at("basis")) {
      BasisFunction bf;
      bf.section = bj.at("section").get<std::vector<int>>();
      bf.knots = detail::doubles_from_json(bj.at("knots"));
      p.basis.push_back(std::move(bf));
    }
    p.lambdas = detail::doubles_from_json(j.at("lambdas"));
    p.idx_cv = j.at("idx_cv").get<int>();
    p.idx_tilde = j.at("idx_tilde").get<int>();
    p.idx_floor = j.at("idx_floor").get<int>();
    p.idx_breve = j.at("idx_breve").get<int>();
    fit.hal_use_cv = j.at("use_cv").get<bool>();
    HalModel m;
    m.beta0 = detail::double_from_bits(j.at("model").at("beta0"));
    m.beta = detail::doubles_from_json(j.at("model").at("beta"));
    m.lambda = detail::double_from_bits(j.at("model").at("lambda"));
    // the serialized model occupies every path slot it may be read from
    p.models.assign(p.lambdas.size(), HalModel{});
    const int use_idx = fit.hal_use_cv ? p.idx_cv : p.idx_breve;
    p.models[use_idx] = std::move(m);
    fit.hal = std::move(p);
  }
  return fit;
}

}  // namespace qalopt
