#pragma once

// Longitudinal panel data model: landmark grid, per-subject trajectories,
// the quality-adjusted-lifetime transform and the censoring bookkeeping
// induced by a target quality-adjusted time x.

#include <cmath>
#include <string>
#include <vector>

#include "qalopt/common.hpp"

namespace qalopt {

struct Landmarks {
  int K = 0;                   // number of post-baseline landmarks
  double gap = 0.0;            // G, only meaningful for equally spaced grids
  std::vector<double> times;   // l_0 = 0 < l_1 < ... < l_K
  double tau = 0.0;            // end of follow-up, l_K <= tau

  static Landmarks equally_spaced(int K, double G, double tau = -1.0) {
    Landmarks lm;
    lm.K = K;
    lm.gap = G;
    lm.times.resize(K + 1);
    for (int j = 0; j <= K; ++j) lm.times[j] = G * j;
    lm.tau = tau < 0.0 ? G * (K + 1) : tau;
    return lm;
  }

  void check() const {
    if (static_cast<int>(times.size()) != K + 1)
      throw std::invalid_argument("landmarks: times must have length K+1");
    if (times[0] != 0.0)
      throw std::invalid_argument("landmarks: times[0] must be 0");
    for (int j = 1; j <= K; ++j)
      if (times[j] <= times[j - 1])
        throw std::invalid_argument("landmarks: times must be strictly increasing");
    if (times[K] > tau)
      throw std::invalid_argument("landmarks: l_K must not exceed tau");
  }
};

// One subject. Vectors are ragged: entries exist only for landmarks at
// which the subject was still at risk (Y_j = 1); the shared length is
// last_at_risk + 1.
struct SubjectTrajectory {
  std::string id;
  std::vector<std::vector<double>> z;  // covariates per at-risk landmark
  std::vector<int> a;                  // treatment indicators, a[0] = 0
  std::vector<double> q;               // quality scores in [0,1]
  double event_time = kInf;            // T; +inf when unknown (censored)
  double censor_time = kInf;           // C; +inf when never censored
  bool event_observed = false;         // I(T < C)

  int num_at_risk() const { return static_cast<int>(a.size()); }
  double observed_time() const { return std::min(event_time, censor_time); }
};

struct Panel {
  Landmarks landmarks;
  std::vector<SubjectTrajectory> subjects;
  std::vector<std::string> covariate_names;

  std::size_t n() const { return subjects.size(); }
};

// Per-subject quantities derived from a target quality-adjusted time x.
struct TargetDerived {
  double x = 0.0;
  double U = 0.0;        // QAL computed through min(T, tau)
  double s_star = kInf;  // minimum original time to accumulate x
  double T_x = kInf;     // min(T, s_star)
  double tilde_T_x = kInf;
  int delta_c = 1;       // I(C > T(x))
  int l_x = 0;           // max{j : tilde_T_x >= l_j}
  std::vector<int> c;    // C_0(x)..C_K(x), with l_{K+1} = +inf
};

namespace detail {

// Iterates the piecewise-constant quality path of a trajectory:
// segment j covers [l_j, min(l_{j+1}, stop)) at quality q_j, with the
// last stored quality held through stop = min(T, tau).
template <class F>
void for_each_quality_segment(const SubjectTrajectory& traj,
                              const Landmarks& lm, double stop, F&& f) {
  const int m = traj.num_at_risk();  // stored landmarks 0..m-1
  for (int j = 0; j < m; ++j) {
    const double seg_lo = lm.times[j];
    double seg_hi = (j + 1 < m) ? lm.times[j + 1] : stop;
    if (j + 1 < m) seg_hi = std::min(seg_hi, stop);
    if (seg_hi <= seg_lo) continue;
    if (!f(traj.q[j], seg_lo, seg_hi)) return;
    if (seg_hi >= stop) return;
  }
}

}  // namespace detail

// U = integral of the quality score over [0, min(T, tau)).
inline double compute_qal(const SubjectTrajectory& traj, const Landmarks& lm) {
  for (double qj : traj.q)
    if (qj < 0.0 || qj > 1.0)
      throw std::invalid_argument("quality score outside [0,1]");
  const double stop = std::min(traj.event_time, lm.tau);
  if (stop <= 0.0 || traj.q.empty()) return 0.0;
  double u = 0.0;
  detail::for_each_quality_segment(traj, lm, stop,
                                   [&](double q, double lo, double hi) {
                                     u += q * (hi - lo);
                                     return true;
                                   });
  return u;
}

// Observed QAL: the quality integral truncated at min(T, C, tau).
inline double compute_observed_qal(const SubjectTrajectory& traj,
                                   const Landmarks& lm) {
  const double stop = std::min(traj.observed_time(), lm.tau);
  if (stop <= 0.0 || traj.q.empty()) return 0.0;
  double u = 0.0;
  detail::for_each_quality_segment(traj, lm, stop,
                                   [&](double q, double lo, double hi) {
                                     u += q * (hi - lo);
                                     return true;
                                   });
  return u;
}

// s*(x) = inf{s : cumulative quality through s >= x}; +inf when the
// total attainable QAL falls short of x.
inline double qal_inverse(const SubjectTrajectory& traj, const Landmarks& lm,
                          double x) {
  if (x < 0.0) throw std::invalid_argument("qal_inverse: x must be >= 0");
  if (x == 0.0) return 0.0;
  const double stop = std::min(traj.event_time, lm.tau);
  double cum = 0.0;
  double result = kInf;
  detail::for_each_quality_segment(traj, lm, stop,
                                   [&](double q, double lo, double hi) {
                                     if (q > 0.0) {
                                       const double gain = q * (hi - lo);
                                       if (cum + gain >= x) {
                                         // exact crossing at the segment end:
                                         // avoid the division round-off so the
                                         // infimum lands on the boundary
                                         result = cum + gain == x
                                                      ? hi
                                                      : lo + (x - cum) / q;
                                         return false;
                                       }
                                       cum += gain;
                                     }
                                     return true;
                                   });
  return result;
}

inline TargetDerived derive_target(const SubjectTrajectory& traj,
                                   const Landmarks& lm, double x) {
  if (x < 0.0) throw std::invalid_argument("derive_target: x must be >= 0");
  TargetDerived d;
  d.x = x;
  d.U = compute_qal(traj, lm);
  d.s_star = qal_inverse(traj, lm, x);
  d.T_x = std::min(traj.event_time, d.s_star);
  d.tilde_T_x = std::min(d.T_x, traj.censor_time);
  // a subject who is never censored stays uncensored even when both
  // times are infinite, so survivors past their attainable QAL keep
  // contributing to the at-risk denominator
  d.delta_c =
      std::isinf(traj.censor_time) || traj.censor_time > d.T_x ? 1 : 0;
  d.l_x = 0;
  for (int j = 0; j <= lm.K; ++j)
    if (d.tilde_T_x >= lm.times[j]) d.l_x = j;
  d.c.assign(lm.K + 1, 0);
  if (d.delta_c == 0) {
    for (int j = 0; j <= lm.K; ++j) {
      const double l_next = (j + 1 <= lm.K) ? lm.times[j + 1] : kInf;
      d.c[j] = d.tilde_T_x < l_next ? 1 : 0;
    }
  }
  return d;
}

struct PanelViolation {
  std::string subject_id;
  std::string message;
};

// Structural checks; violations are returned as data, never thrown.
inline std::vector<PanelViolation> validate_panel(const Panel& panel) {
  std::vector<PanelViolation> out;
  const Landmarks& lm = panel.landmarks;
  for (const auto& s : panel.subjects) {
    auto bad = [&](const std::string& msg) {
      out.push_back({s.id, msg});
    };
    const std::size_t m = s.a.size();
    if (s.q.size() != m || s.z.size() != m) {
      bad("ragged lengths of a/q/z disagree");
      continue;
    }
    if (m == 0) {
      bad("empty trajectory");
      continue;
    }
    if (s.a[0] != 0) bad("A_0 must be 0");
    for (std::size_t j = 1; j < m; ++j)
      if (s.a[j] < s.a[j - 1]) bad("non-monotone treatment at j=" + std::to_string(j));
    for (std::size_t j = 0; j < m; ++j) {
      if (s.q[j] < 0.0 || s.q[j] > 1.0)
        bad("quality outside [0,1] at j=" + std::to_string(j));
      if (lm.times[j] >= s.event_time && s.q[j] != 0.0)
        bad("quality after absorbing state at j=" + std::to_string(j));
    }
    // at-risk consistency: stored landmarks must match observed time
    const double to = s.observed_time();
    for (std::size_t j = 0; j < m; ++j)
      if (to < lm.times[j]) bad("entry at landmark past exit, j=" + std::to_string(j));
    // entries are required while strictly alive at the visit; a subject
    // whose event lands exactly on a landmark makes no decision there
    if (m <= static_cast<std::size_t>(lm.K)) {
      const bool censored_at = !s.event_observed && s.censor_time == lm.times[m];
      if (to > lm.times[m] || censored_at)
        bad("missing entry at at-risk landmark j=" + std::to_string(m));
    }
    if (s.event_time <= 0.0) bad("event_time must be positive");
    if (s.event_observed && !(s.event_time < s.censor_time))
      bad("event_observed inconsistent with times");
  }
  return out;
}

}  // namespace qalopt
