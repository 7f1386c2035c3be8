#pragma once

// Derivative-free maximization of regime objectives over the unit sphere,
// plus a small report helper for fixed (named) regimes.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "qalopt/common.hpp"
#include "qalopt/estimators.hpp"
#include "qalopt/regime.hpp"

namespace qalopt {

struct SearchConfig {
  int population = 60;
  int generations = 80;
  double mutation_scale = 0.2;
  double mutation_decay = 0.97;
  double elite_fraction = 0.1;
  int tournament = 3;
  std::uint64_t seed = 0;
  bool polish = true;
  int patience = 0;  // stop after this many stagnant generations; 0 = never

  void check() const {
    if (population < 8) throw std::invalid_argument("search: population >= 8");
    if (generations < 1) throw std::invalid_argument("search: generations >= 1");
  }
};

struct TracePoint {
  int generation = 0;
  double best = 0.0;
  double mean = 0.0;
};

struct SearchResult {
  std::vector<double> eta;  // unit norm
  double value = 0.0;
  std::vector<TracePoint> trace;
  int evaluations = 0;
  int cache_hits = 0;
};

// Objective over a unit-norm coefficient vector. Exceptions inside the
// objective count as -inf fitness.
using Objective = std::function<double(const std::vector<double>&)>;

namespace detail {

inline bool normalize_vec(std::vector<double>& v) {
  double nrm = 0.0;
  for (double x : v) nrm += x * x;
  if (!(nrm > 0.0) || !std::isfinite(nrm)) return false;
  nrm = std::sqrt(nrm);
  for (double& x : v) x /= nrm;
  return true;
}

class FitnessCache {
 public:
  explicit FitnessCache(const Objective& obj) : obj_(&obj) {}

  // Evaluates on the normalized vector; caches on a 1e-10 quantization.
  double eval(std::vector<double> v, SearchResult& stats) {
    if (!normalize_vec(v)) return -std::numeric_limits<double>::infinity();
    std::vector<std::int64_t> key(v.size());
    for (std::size_t k = 0; k < v.size(); ++k)
      key[k] = static_cast<std::int64_t>(std::llround(v[k] * 1e10));
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      ++stats.cache_hits;
      return it->second;
    }
    double f;
    try {
      f = (*obj_)(v);
      if (!std::isfinite(f)) f = -std::numeric_limits<double>::infinity();
    } catch (const std::exception&) {
      f = -std::numeric_limits<double>::infinity();
    }
    ++stats.evaluations;
    cache_.emplace(std::move(key), f);
    return f;
  }

 private:
  const Objective* obj_;
  std::map<std::vector<std::int64_t>, double> cache_;
};

// Nelder-Mead on raw vectors; the objective normalizes internally, so the
// simplex can roam freely.
inline void nelder_mead(FitnessCache& cache, SearchResult& stats,
                        std::vector<double>& best, double& best_f,
                        int max_iter = 200) {
  const std::size_t d = best.size();
  std::vector<std::vector<double>> sx(d + 1, best);
  std::vector<double> sf(d + 1);
  for (std::size_t k = 0; k < d; ++k) sx[k + 1][k] += 0.05;
  for (std::size_t k = 0; k <= d; ++k) sf[k] = -cache.eval(sx[k], stats);

  auto order = [&] {
    for (std::size_t a = 0; a <= d; ++a)
      for (std::size_t b = a + 1; b <= d; ++b)
        if (sf[b] < sf[a]) {
          std::swap(sf[a], sf[b]);
          std::swap(sx[a], sx[b]);
        }
  };
  for (int it = 0; it < max_iter; ++it) {
    order();
    if (sf[d] - sf[0] < 1e-12) break;
    std::vector<double> centroid(d, 0.0);
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t m = 0; m < d; ++m) centroid[m] += sx[k][m] / static_cast<double>(d);
    auto blend = [&](double t) {
      std::vector<double> p(d);
      for (std::size_t m = 0; m < d; ++m) p[m] = centroid[m] + t * (sx[d][m] - centroid[m]);
      return p;
    };
    std::vector<double> xr = blend(-1.0);
    double fr = -cache.eval(xr, stats);
    if (fr < sf[0]) {
      std::vector<double> xe = blend(-2.0);
      double fe = -cache.eval(xe, stats);
      if (fe < fr) { sx[d] = xe; sf[d] = fe; } else { sx[d] = xr; sf[d] = fr; }
    } else if (fr < sf[d - 1]) {
      sx[d] = xr;
      sf[d] = fr;
    } else {
      std::vector<double> xc = blend(0.5);
      double fc = -cache.eval(xc, stats);
      if (fc < sf[d]) {
        sx[d] = xc;
        sf[d] = fc;
      } else {
        for (std::size_t k = 1; k <= d; ++k) {
          for (std::size_t m = 0; m < d; ++m) sx[k][m] = 0.5 * (sx[k][m] + sx[0][m]);
          sf[k] = -cache.eval(sx[k], stats);
        }
      }
    }
  }
  order();
  if (-sf[0] > best_f) {
    best = sx[0];
    normalize_vec(best);
    best_f = -sf[0];
  }
}

}  // namespace detail

inline SearchResult maximize(const Objective& objective, int dim,
                             const SearchConfig& cfg,
                             const std::vector<double>* init = nullptr) {
  cfg.check();
  if (dim < 1) throw std::invalid_argument("maximize: dim >= 1");
  SearchResult res;
  detail::FitnessCache cache(objective);

  if (dim == 1) {  // the sphere is {+1, -1}
    const double fp = cache.eval({1.0}, res);
    const double fm = cache.eval({-1.0}, res);
    if (std::isinf(fp) && std::isinf(fm))
      throw std::runtime_error("maximize: objective failed on every candidate");
    res.eta = {fp >= fm ? 1.0 : -1.0};
    res.value = std::max(fp, fm);
    res.trace.push_back({0, res.value, 0.5 * (fp + fm)});
    return res;
  }

  const int P = cfg.population;
  std::vector<std::vector<double>> pop(P, std::vector<double>(dim));
  std::vector<double> fit(P);
  {
    Rng rng(mix_seed(cfg.seed, 0x696e6974ULL));
    for (int i = 0; i < P; ++i) {
      for (int k = 0; k < dim; ++k) pop[i][k] = rng.normal();
      if (!detail::normalize_vec(pop[i])) pop[i][0] = 1.0;
    }
    if (init) {
      pop[0] = *init;
      if (!detail::normalize_vec(pop[0]))
        throw std::invalid_argument("maximize: zero initial vector");
    }
  }

  std::vector<double> best;
  double best_f = -std::numeric_limits<double>::infinity();
  const int n_elite = std::max(1, static_cast<int>(cfg.elite_fraction * P));
  double scale = cfg.mutation_scale;
  int stagnant = 0;

  for (int gen = 0; gen < cfg.generations; ++gen) {
    // independent per-candidate streams keyed by (seed, gen, slot)
    double sum = 0.0;
    int n_ok = 0;
    for (int i = 0; i < P; ++i) {
      fit[i] = cache.eval(pop[i], res);
      if (std::isfinite(fit[i])) {
        sum += fit[i];
        ++n_ok;
      }
    }
    if (n_ok == 0)
      throw std::runtime_error("maximize: objective failed on every candidate");

    std::vector<int> order(P);
    for (int i = 0; i < P; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return fit[a] > fit[b]; });
    const double gen_best = fit[order[0]];
    if (gen_best > best_f + 1e-14) {
      best = pop[order[0]];
      detail::normalize_vec(best);
      best_f = gen_best;
      stagnant = 0;
    } else {
      ++stagnant;
    }
    res.trace.push_back({gen, best_f, n_ok ? sum / n_ok : 0.0});
    if (cfg.patience > 0 && stagnant >= cfg.patience) break;
    if (gen + 1 == cfg.generations) break;

    std::vector<std::vector<double>> next;
    next.reserve(P);
    for (int e = 0; e < n_elite; ++e) next.push_back(pop[order[e]]);
    for (int slot = n_elite; slot < P; ++slot) {
      Rng rng(mix_seed(cfg.seed,
                       0x67656eULL ^ (static_cast<std::uint64_t>(gen) << 20) ^
                           static_cast<std::uint64_t>(slot)));
      auto pick = [&] {
        int bi = static_cast<int>(rng.below(static_cast<std::size_t>(P)));
        for (int t = 1; t < cfg.tournament; ++t) {
          int c = static_cast<int>(rng.below(static_cast<std::size_t>(P)));
          if (fit[c] > fit[bi]) bi = c;
        }
        return bi;
      };
      const auto& pa = pop[pick()];
      const auto& pb = pop[pick()];
      std::vector<double> child(dim);
      const double alpha = rng.uniform();
      for (int k = 0; k < dim; ++k)
        child[k] = alpha * pa[k] + (1.0 - alpha) * pb[k] + scale * rng.normal();
      if (!detail::normalize_vec(child)) child[0] = 1.0;
      next.push_back(std::move(child));
    }
    pop = std::move(next);
    scale *= cfg.mutation_decay;
  }

  if (best.empty())
    throw std::runtime_error("maximize: objective failed on every candidate");
  if (cfg.polish) detail::nelder_mead(cache, res, best, best_f);
  res.eta = std::move(best);
  res.value = best_f;
  return res;
}

inline std::string trace_csv(const std::vector<TracePoint>& trace) {
  std::string out = "generation,best,mean\n";
  for (const auto& t : trace)
    out += std::to_string(t.generation) + "," + format_double(t.best) + "," +
           format_double(t.mean) + "\n";
  return out;
}

struct NamedRegime {
  std::string name;
  Regime regime;
};

struct RegimeRow {
  std::string name;
  double rhat = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::string note;  // e.g. BC fallback for constant-score rules
};

// R-hat and SE per named regime. Constant-score rules (always / never
// treat) have no smoothing bandwidth, so BC-IPW falls back to plain IPW
// there with a note in the row.
inline std::vector<RegimeRow> fixed_regimes_report(
    const Panel& panel, const HazardFit& fit_a, const HazardFit& fit_c,
    const std::vector<NamedRegime>& regimes, double L_U, EstimatorMode mode,
    double nu = 0.0) {
  RqalContext ctx(panel, fit_a, fit_c, L_U);
  std::vector<RegimeRow> rows;
  for (const auto& nr : regimes) {
    RegimeRow row;
    row.name = nr.name;
    EstimatorMode m = mode;
    double nu_use = nu;
    if (mode == EstimatorMode::bc_ipw) {
      if (nu_use <= 0.0) {
        try {
          nu_use = default_bandwidth(panel, nr.regime);
        } catch (const std::invalid_argument&) {
          m = EstimatorMode::ipw;
          row.note = "constant score; reduced to IPW";
        }
      }
    }
    const RqalEstimate est = ctx.estimate(nr.regime, m, nu_use);
    row.rhat = est.value;
    row.se = est.se;
    row.ci_lo = est.ci_lo;
    row.ci_hi = est.ci_hi;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace qalopt
