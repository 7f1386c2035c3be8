#pragma once

// Highly adaptive lasso: zero-order indicator basis expansion over
// covariate sections, an L1-penalized logistic path solved by cyclic
// coordinate descent with warm starts, cross-validated tuning and the
// score-based undersmoothing criteria.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "qalopt/common.hpp"

namespace qalopt {

// phi_{s,i}(u) = I(u_s >= knot_s componentwise)
struct BasisFunction {
  std::vector<int> section;   // feature indices, |section| <= max_depth
  std::vector<double> knots;  // same length as section

  bool eval(const std::vector<double>& u) const {
    for (std::size_t k = 0; k < section.size(); ++k)
      if (u[section[k]] < knots[k]) return false;
    return true;
  }
};

struct HalModel {
  double beta0 = 0.0;
  std::vector<double> beta;  // aligned with the basis catalog
  double lambda = 0.0;

  double l1_norm() const {
    double s = std::abs(beta0);
    for (double b : beta) s += std::abs(b);
    return s;
  }
  int active_count() const {
    int j = 0;
    for (double b : beta) j += b != 0.0;
    return j;
  }
  std::vector<int> active_set() const {
    std::vector<int> out;
    for (std::size_t k = 0; k < beta.size(); ++k)
      if (beta[k] != 0.0) out.push_back(static_cast<int>(k));
    return out;
  }
};

enum class HazardRole { treatment, censoring };

struct HalOptions {
  int max_depth = 2;
  int max_knots_per_section = 50;
  int n_lambda = 50;
  double lambda_min_ratio = 1e-4;
  int cv_folds = 5;
  std::uint64_t seed = 0;
  double tol = 1e-7;
  int max_sweeps = 2000;
};

// Enumerates sections up to max_depth over the observed rows; knots are
// deduplicated observed vectors, thinned to evenly spaced empirical
// quantiles when a section exceeds max_knots_per_section. Bases active
// on every observed row duplicate the intercept and are dropped.
inline std::vector<BasisFunction> enumerate_basis(
    const std::vector<std::vector<double>>& rows, int max_depth,
    int max_knots_per_section) {
  if (rows.empty()) return {};
  if (max_depth < 1) throw std::invalid_argument("enumerate_basis: max_depth >= 1");
  const int d = static_cast<int>(rows[0].size());
  std::vector<std::vector<int>> sections;
  std::vector<int> current;
  // depth-first enumeration of index subsets with |s| <= max_depth
  auto recurse = [&](auto&& self, int start) -> void {
    if (!current.empty()) sections.push_back(current);
    if (static_cast<int>(current.size()) == max_depth) return;
    for (int f = start; f < d; ++f) {
      current.push_back(f);
      self(self, f + 1);
      current.pop_back();
    }
  };
  recurse(recurse, 0);

  std::vector<BasisFunction> out;
  for (const auto& s : sections) {
    std::set<std::vector<double>> distinct;
    for (const auto& r : rows) {
      std::vector<double> knot(s.size());
      for (std::size_t k = 0; k < s.size(); ++k) knot[k] = r[s[k]];
      distinct.insert(std::move(knot));
    }
    std::vector<std::vector<double>> knots(distinct.begin(), distinct.end());
    if (static_cast<int>(knots.size()) > max_knots_per_section) {
      std::vector<std::vector<double>> thinned;
      const int m = max_knots_per_section;
      const double step = static_cast<double>(knots.size() - 1) / (m - 1);
      int prev = -1;
      for (int k = 0; k < m; ++k) {
        const int idx = static_cast<int>(std::llround(k * step));
        if (idx != prev) thinned.push_back(knots[idx]);
        prev = idx;
      }
      knots = std::move(thinned);
    }
    for (auto& knot : knots) {
      BasisFunction bf{s, std::move(knot)};
      // drop bases that are 1 on every observed row
      bool all_one = true;
      for (const auto& r : rows)
        if (!bf.eval(r)) {
          all_one = false;
          break;
        }
      if (!all_one) out.push_back(std::move(bf));
    }
  }
  return out;
}

// Column-compressed binary design: per basis, the list of row indices
// on which it is active.
struct HalDesign {
  std::vector<BasisFunction> basis;
  std::vector<std::vector<int>> cols;
  std::size_t nrows = 0;

  static HalDesign build(const std::vector<std::vector<double>>& rows,
                         std::vector<BasisFunction> catalog) {
    HalDesign dz;
    dz.nrows = rows.size();
    dz.basis = std::move(catalog);
    dz.cols.resize(dz.basis.size());
    for (std::size_t k = 0; k < dz.basis.size(); ++k)
      for (std::size_t i = 0; i < rows.size(); ++i)
        if (dz.basis[k].eval(rows[i])) dz.cols[k].push_back(static_cast<int>(i));
    return dz;
  }
};

namespace detail {

// Penalized logistic coordinate descent on a binary design with a fixed
// 1/4 curvature bound; warm-started from the supplied model. Rows may be
// restricted to a subset (training fold) via the mask.
class HalSolver {
 public:
  HalSolver(const HalDesign& design, const std::vector<int>& y,
            const std::vector<int>& row_subset)
      : design_(design), y_(y), rows_(row_subset) {
    in_subset_.assign(design.nrows, 0);
    for (int i : rows_) in_subset_[i] = 1;
    n_ = static_cast<double>(rows_.size());
    lp_.assign(design.nrows, 0.0);
    resid_.assign(design.nrows, 0.0);
    counts_.resize(design.cols.size());
    for (std::size_t k = 0; k < design.cols.size(); ++k) {
      int c = 0;
      for (int i : design.cols[k]) c += in_subset_[i];
      counts_[k] = c;
    }
  }

  // Smallest penalty at which every basis coefficient is zero.
  double lambda_max() {
    double ybar = 0.0;
    for (int i : rows_) ybar += y_[i];
    ybar /= n_;
    double lmax = 0.0;
    for (std::size_t k = 0; k < design_.cols.size(); ++k) {
      double g = 0.0;
      for (int i : design_.cols[k])
        if (in_subset_[i]) g += y_[i] - ybar;
      lmax = std::max(lmax, std::abs(g) / n_);
    }
    return std::max(lmax, 1e-10);
  }

  HalModel solve(double lambda, const HalModel& warm, const HalOptions& opt) {
    HalModel m = warm;
    if (m.beta.size() != design_.cols.size())
      m.beta.assign(design_.cols.size(), 0.0);
    m.lambda = lambda;
    reset_state(m);
    int sweeps = 0;
    bool full_pass = true;
    for (;;) {
      double max_delta = 0.0;
      max_delta = std::max(max_delta, update_intercept(m));
      for (std::size_t k = 0; k < design_.cols.size(); ++k) {
        if (!full_pass && m.beta[k] == 0.0) continue;
        if (counts_[k] == 0) continue;
        max_delta = std::max(max_delta, update_coord(m, static_cast<int>(k), lambda));
      }
      ++sweeps;
      if (sweeps >= opt.max_sweeps) break;
      if (max_delta < opt.tol) {
        if (full_pass) break;  // converged on a full sweep
        full_pass = true;
      } else {
        full_pass = false;
      }
    }
    return m;
  }

  // max KKT violation: active |g_k| should equal lambda, inactive stay below.
  double kkt_violation(const HalModel& m, double lambda) {
    reset_state(m);
    double worst = std::abs(mean_resid());
    for (std::size_t k = 0; k < design_.cols.size(); ++k) {
      if (counts_[k] == 0) continue;
      const double g = col_grad(static_cast<int>(k));
      if (m.beta[k] != 0.0)
        worst = std::max(worst, std::abs(g - lambda * (m.beta[k] > 0 ? 1.0 : -1.0)));
      else
        worst = std::max(worst, std::max(0.0, std::abs(g) - lambda));
    }
    return worst;
  }

  // mean negative log-likelihood of model m over the given rows
  static double nll(const HalDesign& design, const std::vector<int>& y,
                    const std::vector<int>& rows, const HalModel& m) {
    std::vector<double> lp(design.nrows, m.beta0);
    for (std::size_t k = 0; k < design.cols.size(); ++k)
      if (m.beta[k] != 0.0)
        for (int i : design.cols[k]) lp[i] += m.beta[k];
    double s = 0.0;
    for (int i : rows) {
      const double p = std::clamp(logistic_cdf(lp[i]), 1e-10, 1.0 - 1e-10);
      s -= y[i] ? std::log(p) : std::log1p(-p);
    }
    return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
  }

 private:
  void reset_state(const HalModel& m) {
    std::fill(lp_.begin(), lp_.end(), m.beta0);
    for (std::size_t k = 0; k < design_.cols.size(); ++k)
      if (m.beta[k] != 0.0)
        for (int i : design_.cols[k]) lp_[i] += m.beta[k];
    for (int i : rows_) resid_[i] = y_[i] - logistic_cdf(lp_[i]);
  }

  double mean_resid() {
    double s = 0.0;
    for (int i : rows_) s += resid_[i];
    return s / n_;
  }

  double col_grad(int k) {
    double g = 0.0;
    for (int i : design_.cols[k])
      if (in_subset_[i]) g += resid_[i];
    return g / n_;
  }

  double update_intercept(HalModel& m) {
    const double g = mean_resid();
    const double delta = 4.0 * g;  // curvature bound 1/4
    if (delta == 0.0) return 0.0;
    m.beta0 += delta;
    for (int i : rows_) {
      lp_[i] += delta;
      resid_[i] = y_[i] - logistic_cdf(lp_[i]);
    }
    return std::abs(delta);
  }

  double update_coord(HalModel& m, int k, double lambda) {
    const double h = static_cast<double>(counts_[k]) / (4.0 * n_);
    const double g = col_grad(k);
    const double bnew = soft_threshold(h * m.beta[k] + g, lambda) / h;
    const double delta = bnew - m.beta[k];
    if (delta == 0.0) return 0.0;
    m.beta[k] = bnew;
    for (int i : design_.cols[k]) {
      if (!in_subset_[i]) continue;
      lp_[i] += delta;
      resid_[i] = y_[i] - logistic_cdf(lp_[i]);
    }
    // rows outside the subset still need lp for later predictions; keep
    // lazy: lp_ outside subset is unused until reset_state.
    return std::abs(delta);
  }

  const HalDesign& design_;
  const std::vector<int>& y_;
  std::vector<int> rows_;
  std::vector<std::uint8_t> in_subset_;
  double n_ = 0.0;
  std::vector<double> lp_;
  std::vector<double> resid_;
  std::vector<int> counts_;
};

}  // namespace detail

struct HalFoldFit {
  std::vector<int> train_rows;
  std::vector<int> val_rows;
  std::vector<HalModel> models;  // one per lambda
};

struct HalPath {
  std::vector<BasisFunction> basis;
  std::vector<double> lambdas;   // strictly decreasing
  std::vector<HalModel> models;  // full-data fit per lambda
  std::vector<double> cv_loss;   // mean validation NLL per lambda
  int idx_cv = 0;                // lambda_CV position
  int idx_tilde = -1;            // score-criterion minimizer
  int idx_floor = -1;            // smallest lambda with J < sqrt(n_units)
  int idx_breve = -1;            // selected undersmoothed lambda
  bool floor_warning = false;
  std::vector<HalFoldFit> folds;

  double lambda_cv() const { return lambdas[idx_cv]; }
  double lambda_tilde() const { return lambdas[idx_tilde]; }
  double lambda_floor() const { return lambdas[idx_floor]; }
  double lambda_breve() const { return lambdas[idx_breve]; }
  const HalModel& model_cv() const { return models[idx_cv]; }
  const HalModel& model_breve() const { return models[idx_breve]; }
};

inline double hal_predict_link(const HalModel& m,
                               const std::vector<BasisFunction>& basis,
                               const std::vector<double>& u) {
  double lp = m.beta0;
  for (std::size_t k = 0; k < m.beta.size(); ++k)
    if (m.beta[k] != 0.0 && basis[k].eval(u)) lp += m.beta[k];
  return lp;
}

// Fits the full lambda path with warm starts plus one path per CV fold,
// and records the CV loss curve. Fold assignment is deterministic in the
// seed.
inline HalPath fit_hal_path(const std::vector<std::vector<double>>& rows,
                            const std::vector<int>& y, const HalOptions& opt) {
  if (rows.empty() || rows.size() != y.size())
    throw std::invalid_argument("fit_hal_path: empty or mismatched data");
  int n1 = 0;
  for (int yi : y) n1 += yi;
  if (n1 == 0 || n1 == static_cast<int>(y.size()))
    throw std::invalid_argument("fit_hal_path: single response class");
  if (opt.cv_folds < 2) throw std::invalid_argument("fit_hal_path: cv_folds >= 2");

  HalPath path;
  path.basis = enumerate_basis(rows, opt.max_depth, opt.max_knots_per_section);
  HalDesign design = HalDesign::build(rows, path.basis);

  std::vector<int> all_rows(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) all_rows[i] = static_cast<int>(i);

  detail::HalSolver full(design, y, all_rows);
  const double lmax = full.lambda_max();
  path.lambdas.resize(opt.n_lambda);
  const double lratio = std::log(opt.lambda_min_ratio);
  for (int t = 0; t < opt.n_lambda; ++t)
    path.lambdas[t] =
        lmax * std::exp(lratio * static_cast<double>(t) /
                        static_cast<double>(opt.n_lambda - 1));

  HalModel warm;
  for (double lam : path.lambdas) {
    warm = full.solve(lam, warm, opt);
    path.models.push_back(warm);
  }

  // deterministic fold assignment by shuffled index
  Rng rng(mix_seed(opt.seed, 0x68616c6376ULL));
  std::vector<int> perm = all_rows;
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.below(i)]);
  path.folds.resize(opt.cv_folds);
  for (std::size_t i = 0; i < perm.size(); ++i)
    path.folds[i % opt.cv_folds].val_rows.push_back(perm[i]);
  for (auto& f : path.folds) {
    std::sort(f.val_rows.begin(), f.val_rows.end());
    std::set<int> val(f.val_rows.begin(), f.val_rows.end());
    for (int i : all_rows)
      if (!val.count(i)) f.train_rows.push_back(i);
  }

  path.cv_loss.assign(opt.n_lambda, 0.0);
  for (auto& f : path.folds) {
    detail::HalSolver solver(design, y, f.train_rows);
    HalModel w;
    for (int t = 0; t < opt.n_lambda; ++t) {
      w = solver.solve(path.lambdas[t], w, opt);
      f.models.push_back(w);
      path.cv_loss[t] +=
          detail::HalSolver::nll(design, y, f.val_rows, w) / opt.cv_folds;
    }
  }
  path.idx_cv = static_cast<int>(
      std::min_element(path.cv_loss.begin(), path.cv_loss.end()) -
      path.cv_loss.begin());
  return path;
}

// Score-based undersmoothing criterion: per fold, the L1-weighted sum of
// absolute validation-fold score equations over the active set, with the
// divisor convention fixed by the role (predicted probability of the
// "positive" response: h for treatment, 1-h for censoring).
inline int undersmooth_score_index(const HalPath& path,
                                   const std::vector<std::vector<double>>& rows,
                                   const std::vector<int>& y, HazardRole role) {
  const int nl = static_cast<int>(path.lambdas.size());
  double best = kInf;
  int best_idx = -1;
  for (int t = 0; t < nl; ++t) {
    double crit = 0.0;
    int used_folds = 0;
    for (const auto& f : path.folds) {
      const HalModel& m = f.models[t];
      const double l1 = m.l1_norm();
      if (l1 == 0.0) continue;
      double sum = 0.0;
      const auto active = m.active_set();
      const double nv = static_cast<double>(f.val_rows.size());
      for (int k : active) {
        double acc = 0.0;
        for (int i : f.val_rows) {
          if (!path.basis[k].eval(rows[i])) continue;
          const double h = logistic_cdf(hal_predict_link(m, path.basis, rows[i]));
          if (role == HazardRole::treatment)
            acc += (y[i] - h) / std::max(h, 1e-10);
          else
            acc += ((1 - y[i]) - (1.0 - h)) / std::max(1.0 - h, 1e-10);
        }
        sum += std::abs(acc / nv);
      }
      crit += sum / l1;
      ++used_folds;
    }
    if (used_folds == 0) continue;
    crit /= static_cast<double>(used_folds);
    if (crit < best) {
      best = crit;
      best_idx = t;
    }
  }
  if (best_idx < 0) throw std::runtime_error("undersmooth_score: no usable lambda");
  return best_idx;
}

// Smallest grid lambda whose active count stays below sqrt(n_units).
inline int lambda_floor_index(const HalPath& path, std::size_t n_units,
                              bool* warning = nullptr) {
  const double limit = std::sqrt(static_cast<double>(n_units));
  int best = -1;
  for (int t = 0; t < static_cast<int>(path.lambdas.size()); ++t)
    if (static_cast<double>(path.models[t].active_count()) < limit) best = t;
  if (warning) *warning = best < 0;
  return best < 0 ? 0 : best;  // no grid point qualifies: largest lambda
}

// lambda_breve = max(lambda_floor, lambda_tilde); fills the selection
// fields on the path.
inline void select_undersmoothed(HalPath& path,
                                 const std::vector<std::vector<double>>& rows,
                                 const std::vector<int>& y, HazardRole role,
                                 std::size_t n_units) {
  path.idx_tilde = undersmooth_score_index(path, rows, y, role);
  path.idx_floor = lambda_floor_index(path, n_units, &path.floor_warning);
  // larger lambda == smaller index on the descending grid
  path.idx_breve = std::min(path.idx_tilde, path.idx_floor);
}

struct ScoreDiagnostic {
  double min_abs_score = kInf;  // min over active bases of |P_n phi (y - h)|
  double threshold = 0.0;       // sigma_n / (sqrt(n) log n)
  int active = 0;
};

inline ScoreDiagnostic score_diagnostic(const HalModel& m,
                                        const std::vector<BasisFunction>& basis,
                                        const std::vector<std::vector<double>>& rows,
                                        const std::vector<int>& y) {
  ScoreDiagnostic d;
  const double n = static_cast<double>(rows.size());
  std::vector<double> resid(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    resid[i] = y[i] - logistic_cdf(hal_predict_link(m, basis, rows[i]));
  double sigma2 = 0.0;
  for (double r : resid) sigma2 += r * r;
  const double sigma_n = std::sqrt(sigma2 / n);
  d.threshold = n > 2.0 ? sigma_n / (std::sqrt(n) * std::log(n)) : sigma_n;
  for (int k : m.active_set()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (basis[k].eval(rows[i])) acc += resid[i];
    d.min_abs_score = std::min(d.min_abs_score, std::abs(acc / n));
    ++d.active;
  }
  if (d.active == 0) {
    // intercept-only fit: score per (absent) basis reduces to |mean resid|
    double acc = 0.0;
    for (double r : resid) acc += r;
    d.min_abs_score = std::abs(acc / n);
  }
  return d;
}

// KKT violation of a path point, for verification.
inline double hal_kkt_violation(const HalPath& path, int idx,
                                const std::vector<std::vector<double>>& rows,
                                const std::vector<int>& y) {
  HalDesign design = HalDesign::build(rows, path.basis);
  std::vector<int> all_rows(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) all_rows[i] = static_cast<int>(i);
  detail::HalSolver solver(design, y, all_rows);
  return solver.kkt_violation(path.models[idx], path.lambdas[idx]);
}

}  // namespace qalopt
