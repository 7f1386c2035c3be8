#pragma once

// Monotone treatment-length decision rules g^eta, compliance indicators
// and their normal-CDF smoothed counterparts.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "qalopt/common.hpp"
#include "qalopt/panel.hpp"

namespace qalopt {

struct Regime {
  std::vector<double> eta;          // unit L2 norm
  std::vector<int> covariate_subset;  // Z column indices; -1 is the constant 1

  static Regime normalized(std::vector<double> raw, std::vector<int> subset) {
    double nrm = 0.0;
    for (double v : raw) nrm += v * v;
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) throw std::invalid_argument("regime: zero coefficient vector");
    for (double& v : raw) v /= nrm;
    if (raw.size() != subset.size())
      throw std::invalid_argument("regime: eta/covariate_subset dimension mismatch");
    return Regime{std::move(raw), std::move(subset)};
  }

  double score(const std::vector<double>& z) const {
    double s = 0.0;
    for (std::size_t k = 0; k < eta.size(); ++k) {
      const int idx = covariate_subset[k];
      if (idx < -1 || idx >= static_cast<int>(z.size()))
        throw std::invalid_argument("regime: covariate index out of range");
      s += eta[k] * (idx == -1 ? 1.0 : z[idx]);
    }
    return s;
  }
};

struct SmoothingConfig {
  double nu = 0.0;
};

// g^eta_j = I[(eta'z_j)^{1-a_prev} >= 0]; exponent zero forces 1 once
// treatment has started.
inline int decide(const Regime& regime, const std::vector<double>& z_j,
                  int a_prev) {
  if (a_prev == 1) return 1;
  return regime.score(z_j) >= 0.0 ? 1 : 0;
}

// Product over j = 1..l_x of I(A_j = g^eta_j) on the observed history.
inline int compliance(const Regime& regime, const SubjectTrajectory& traj,
                      const TargetDerived& derived) {
  const int upto = std::min(derived.l_x, traj.num_at_risk() - 1);
  for (int j = 1; j <= upto; ++j) {
    if (traj.a[j] != decide(regime, traj.z[j], traj.a[j - 1])) return 0;
  }
  return 1;
}

// nu = n^{-1/3} sd(scores) / K over all observed subject-landmark scores
// at j >= 1.
inline double default_bandwidth(const Panel& panel, const Regime& regime) {
  std::vector<double> scores;
  for (const auto& s : panel.subjects)
    for (int j = 1; j < s.num_at_risk(); ++j)
      scores.push_back(regime.score(s.z[j]));
  if (scores.size() < 2)
    throw std::invalid_argument("default_bandwidth: fewer than 2 observed scores");
  const double sd = sd_of(scores);
  if (sd == 0.0)
    throw std::invalid_argument("default_bandwidth: degenerate score distribution");
  const double n = static_cast<double>(panel.n());
  return std::pow(n, -1.0 / 3.0) * sd / static_cast<double>(panel.landmarks.K);
}

// Smoothed per-landmark factor: A_j Phi(score/nu) + (1-A_j){1 - Phi(score/nu)}
// with score = (eta'z_j)^{1-A_{j-1}}, i.e. score := 1 after initiation.
inline double smooth_factor(const Regime& regime, const std::vector<double>& z_j,
                            int a_prev, int a_j, double nu) {
  const double score = (a_prev == 1) ? 1.0 : regime.score(z_j);
  const double phi = norm_cdf(score / nu);
  return a_j == 1 ? phi : 1.0 - phi;
}

inline double smooth_compliance(const Regime& regime,
                                const SubjectTrajectory& traj,
                                const TargetDerived& derived, double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("smooth_compliance: nu must be > 0");
  double prod = 1.0;
  const int upto = std::min(derived.l_x, traj.num_at_risk() - 1);
  for (int j = 1; j <= upto; ++j)
    prod *= smooth_factor(regime, traj.z[j], traj.a[j - 1], traj.a[j], nu);
  return prod;
}

}  // namespace qalopt
