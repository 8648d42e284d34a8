#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "drql/core.hpp"

namespace drql {

/// Discrete distribution handed to the dual solvers. `ambient_min` is the
/// minimum of the value function over the FULL ambient space (all states, or
/// the declared reward support), which may be below the minimum over these
/// atoms: the TV adversary can place mass on points the nominal never visits.
struct DiscreteDistribution {
  std::vector<double> values;
  std::vector<double> probs;
  double ambient_min = 0.0;
};

/// Worst-case expectation over the ball, plus the maximizing dual variable.
struct DualResult {
  double value = 0.0;
  double alpha_star = 0.0;
};

inline double expectation(const DiscreteDistribution& d) {
  double e = 0.0;
  for (std::size_t i = 0; i < d.values.size(); ++i) e += d.probs[i] * d.values[i];
  return e;
}

/// Componentwise truncation (v)_alpha = min(v, alpha).
inline std::vector<double> truncate(std::span<const double> values, double alpha) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::min(values[i], alpha);
  return out;
}

/// Empirical distribution of a sample batch: equal atom weights, exact-equal
/// values consolidated.
inline DiscreteDistribution make_empirical(std::span<const double> samples, double ambient_min) {
  if (samples.empty()) throw std::invalid_argument("make_empirical: empty sample set");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  DiscreteDistribution d;
  d.ambient_min = ambient_min;
  const double w = 1.0 / static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    d.values.push_back(sorted[i]);
    d.probs.push_back(w * static_cast<double>(j - i));
    i = j;
  }
  return d;
}

namespace detail {

/// Atoms sorted ascending by value, exact duplicates merged, zero-probability
/// atoms dropped, with prefix sums of p, p*v, p*v^2.
struct SortedAtoms {
  std::vector<double> v;
  std::vector<double> p;
  std::vector<double> cum_p;
  std::vector<double> cum_pv;
  std::vector<double> cum_pv2;

  std::size_t size() const { return v.size(); }
};

inline SortedAtoms sort_atoms(const DiscreteDistribution& d) {
  if (d.values.size() != d.probs.size())
    throw std::invalid_argument("DiscreteDistribution: values/probs size mismatch");
  std::vector<std::size_t> idx(d.values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t i, std::size_t j) { return d.values[i] < d.values[j]; });
  SortedAtoms s;
  for (std::size_t k : idx) {
    if (d.probs[k] <= 0.0) continue;
    if (!s.v.empty() && s.v.back() == d.values[k]) {
      s.p.back() += d.probs[k];
    } else {
      s.v.push_back(d.values[k]);
      s.p.push_back(d.probs[k]);
    }
  }
  if (s.v.empty()) throw std::invalid_argument("DiscreteDistribution: no positive-probability atom");
  s.cum_p.resize(s.size());
  s.cum_pv.resize(s.size());
  s.cum_pv2.resize(s.size());
  double cp = 0.0, cpv = 0.0, cpv2 = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cp += s.p[i];
    cpv += s.p[i] * s.v[i];
    cpv2 += s.p[i] * s.v[i] * s.v[i];
    s.cum_p[i] = cp;
    s.cum_pv[i] = cpv;
    s.cum_pv2[i] = cpv2;
  }
  return s;
}

/// Golden-section maximization of a unimodal f on [lo, hi], relative tolerance
/// on the interval width. Returns the best point seen, including endpoints.
/// The floor on the stopping width keeps narrow intervals at large magnitudes
/// from spinning below the representable spacing.
template <typename F>
std::pair<double, double> golden_max(F&& f, double lo, double hi, double rel_tol) {
  constexpr double kInvGolden = 0.6180339887498949;  // (sqrt(5)-1)/2
  double best_x = lo, best_f = f(lo);
  if (const double fh = f(hi); fh > best_f) {
    best_x = hi;
    best_f = fh;
  }
  const double width = hi - lo;
  if (width <= 0.0) return {best_x, best_f};
  const double stop = std::max(rel_tol * width, 8.0 * std::numeric_limits<double>::epsilon() *
                                                    (std::abs(lo) + std::abs(hi) + 1.0));
  double a = lo, b = hi;
  double c = b - kInvGolden * (b - a);
  double d = a + kInvGolden * (b - a);
  double fc = f(c), fd = f(d);
  for (int iter = 0; iter < 200 && b - a > stop; ++iter) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvGolden * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvGolden * (b - a);
      fd = f(d);
    }
    if (fc > best_f) best_f = fc, best_x = c;
    if (fd > best_f) best_f = fd, best_x = d;
  }
  return {best_x, best_f};
}

}  // namespace detail

/// Worst-case expectation over the TV ball via the truncation dual.
///
/// The objective E_p[(v)_alpha] - (sigma/2)(alpha - ambient_min) is concave
/// piecewise-linear in alpha with kinks exactly at atom values, so the outer
/// maximum is found exactly by evaluating every distinct atom value plus
/// ambient_min; smallest maximizer wins on ties.
inline DualResult worst_case_tv(const DiscreteDistribution& dist, double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("worst_case_tv: sigma must be >= 0");
  const auto s = detail::sort_atoms(dist);
  const double m = dist.ambient_min;
  const std::size_t n = s.size();

  const auto objective = [&](double alpha) {
    // k = number of atoms with value <= alpha
    const std::size_t k =
        std::upper_bound(s.v.begin(), s.v.end(), alpha) - s.v.begin();
    const double below_pv = k > 0 ? s.cum_pv[k - 1] : 0.0;
    const double below_p = k > 0 ? s.cum_p[k - 1] : 0.0;
    return below_pv + alpha * (1.0 - below_p) - 0.5 * sigma * (alpha - m);
  };

  DualResult best{objective(m), m};
  for (std::size_t i = 0; i < n; ++i) {
    if (s.v[i] == m) continue;
    const double f = objective(s.v[i]);
    if (f > best.value) best = {f, s.v[i]};
  }
  return best;
}

/// Worst-case expectation over the chi-square ball via the dual
/// max_alpha E_p[(v)_alpha] - sqrt(sigma * Var_p[(v)_alpha]).
///
/// Between consecutive atom values the truncation pattern is fixed, making the
/// objective smooth and concave there (linear mean minus the sqrt of a convex
/// quadratic), so each interval is searched by golden section; breakpoints are
/// evaluated exactly.
inline DualResult worst_case_chi2(const DiscreteDistribution& dist, double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("worst_case_chi2: sigma must be >= 0");
  const auto s = detail::sort_atoms(dist);
  const std::size_t n = s.size();
  if (sigma == 0.0) return {s.cum_pv[n - 1], s.v[n - 1]};  // plain expectation

  // Truncation set for alpha in [v_k, v_{k+1}) is the first k+1 atoms. The
  // variance is taken two-pass around the truncated mean: the prefix-sum
  // shortcut E[X^2] - E[X]^2 loses enough precision near Var = 0 (where the
  // sqrt amplifies it) to break the 1e-9 monotonicity guarantees.
  const auto objective_at = [&](double alpha, std::size_t k) {
    const double below_p = k > 0 ? s.cum_p[k - 1] : 0.0;
    const double below_pv = k > 0 ? s.cum_pv[k - 1] : 0.0;
    const double mean = below_pv + alpha * (1.0 - below_p);
    double var = (1.0 - below_p) * (alpha - mean) * (alpha - mean);
    for (std::size_t i = 0; i < k; ++i) {
      const double d = s.v[i] - mean;
      var += s.p[i] * d * d;
    }
    return mean - std::sqrt(sigma * var);
  };

  DualResult best{objective_at(s.v[0], 1), s.v[0]};
  for (std::size_t i = 1; i < n; ++i) {
    const double f = objective_at(s.v[i], i + 1);
    if (f > best.value) best = {f, s.v[i]};
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const auto [x, f] = detail::golden_max(
        [&](double alpha) { return objective_at(alpha, i + 1); }, s.v[i], s.v[i + 1], 1e-12);
    if (f > best.value) best = {f, x};
  }
  return best;
}

/// Worst-case expectation over the KL ball via the dual
/// max_alpha -alpha log E_p[exp(-v/alpha)] - alpha sigma.
///
/// Only the support of p matters (the KL ball keeps the adversary absolutely
/// continuous w.r.t. p). Evaluated with a log-sum-exp shift at the support
/// minimum; maximized by golden section on (0, alpha_hi] against the explicit
/// alpha -> 0+ limit, which equals the support minimum.
inline DualResult worst_case_kl(const DiscreteDistribution& dist, double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("worst_case_kl: sigma must be >= 0");
  const auto s = detail::sort_atoms(dist);
  if (sigma == 0.0) {
    const std::size_t n = s.size();
    return {s.cum_pv[n - 1], 0.0};
  }
  const double v_min = s.v.front();
  const double v_max = s.v.back();
  if (v_max == v_min) return {v_min, 0.0};  // g(alpha) = v - alpha*sigma, sup at 0+

  const auto g = [&](double alpha) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      acc += s.p[i] * std::exp(-(s.v[i] - v_min) / alpha);
    return v_min - alpha * std::log(acc) - alpha * sigma;
  };

  // The maximizer obeys alpha* <= max v / sigma for nonnegative values; the
  // span form keeps the bracket valid when values go negative.
  const double alpha_hi = std::max(v_max, v_max - v_min) / sigma;
  const double eps_alpha = 1e-12 * (1.0 + std::abs(v_max));
  DualResult best{v_min, 0.0};
  if (alpha_hi > eps_alpha) {
    const auto [x, f] = detail::golden_max(g, eps_alpha, alpha_hi, 1e-12);
    if (f > best.value) best = {f, x};
  }
  return best;
}

/// Dispatch over the divergence kind; used uniformly for the transition term
/// (values = V over next states) and the reward term (values = reward support).
inline DualResult worst_case(const DiscreteDistribution& dist, const UncertaintySpec& spec) {
  switch (spec.divergence) {
    case Divergence::TV: return worst_case_tv(dist, spec.sigma);
    case Divergence::Chi2: return worst_case_chi2(dist, spec.sigma);
    case Divergence::KL: return worst_case_kl(dist, spec.sigma);
  }
  throw std::invalid_argument("worst_case: unknown divergence");
}

/// Worst case of a single-atom distribution. For chi-square and KL the ball
/// around a point mass is the point mass itself, so this returns the value
/// unchanged; the TV adversary can still move mass toward the ambient minimum.
inline DualResult worst_case_point(double value, double ambient_min,
                                   const UncertaintySpec& spec) {
  if (spec.divergence != Divergence::TV || spec.sigma == 0.0) return {value, value};
  DiscreteDistribution d;
  d.values = {value};
  d.probs = {1.0};
  d.ambient_min = ambient_min;
  return worst_case_tv(d, spec.sigma);
}

}  // namespace drql
