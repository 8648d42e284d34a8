#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "drql/core.hpp"
#include "drql/dual.hpp"

namespace drql {

/// Brute-force reference for the dual solvers: minimizes q.v over a regular
/// simplex grid of the given step, keeping q with rho(q, p) <= sigma, where
/// rho is evaluated from the divergence definitions directly. Never calls the
/// dual solvers. For TV the grid ranges over all of the simplex including an
/// ambient-minimum atom of nominal probability zero (the TV ball does not
/// force absolute continuity); for chi-square/KL it ranges over distributions
/// supported on support(p). The nominal p itself is always a candidate, so the
/// result is well-defined even when sigma is below the grid resolution.
///
/// Guarded to support size <= 3 (the grid is combinatorial in the support).
inline double worst_case_oracle(const DiscreteDistribution& dist, const UncertaintySpec& spec,
                                double grid_step) {
  spec.validate();
  if (!(grid_step > 0.0)) throw std::invalid_argument("worst_case_oracle: grid_step must be > 0");

  std::vector<double> v, p;
  for (std::size_t i = 0; i < dist.values.size(); ++i) {
    if (dist.probs[i] > 0.0) {
      v.push_back(dist.values[i]);
      p.push_back(dist.probs[i]);
    }
  }
  if (v.size() > 3)
    throw std::invalid_argument("worst_case_oracle: support size > 3");
  if (spec.divergence == Divergence::TV &&
      dist.ambient_min < *std::min_element(v.begin(), v.end())) {
    v.push_back(dist.ambient_min);
    p.push_back(0.0);
  }

  const int n = static_cast<int>(v.size());
  const long long g = std::llround(1.0 / grid_step);
  const double sigma = spec.sigma;
  const double slack = 1e-12 * (1.0 + sigma);
  const Divergence div = spec.divergence;

  double best = std::numeric_limits<double>::infinity();
  const auto consider = [&](const double* q) {
    double rho = 0.0;
    switch (div) {
      case Divergence::TV:
        // The radius convention under which the truncation dual is exact:
        // ||q - p||_1 <= sigma.
        for (int i = 0; i < n; ++i) rho += std::abs(q[i] - p[i]);
        break;
      case Divergence::Chi2:
        for (int i = 0; i < n; ++i) {
          const double d = q[i] - p[i];
          rho += d * d / p[i];
        }
        break;
      case Divergence::KL:
        for (int i = 0; i < n; ++i) {
          if (q[i] > 0.0) rho += q[i] * std::log(q[i] / p[i]);
        }
        break;
    }
    if (rho > sigma + slack) return;
    double obj = 0.0;
    for (int i = 0; i < n; ++i) obj += q[i] * v[i];
    best = std::min(best, obj);
  };

  consider(p.data());

  double q[4];
  const double inv_g = 1.0 / static_cast<double>(g);
  switch (n) {
    case 1:
      q[0] = 1.0;
      consider(q);
      break;
    case 2:
      for (long long i = 0; i <= g; ++i) {
        q[0] = static_cast<double>(i) * inv_g;
        q[1] = static_cast<double>(g - i) * inv_g;
        consider(q);
      }
      break;
    case 3:
      for (long long i = 0; i <= g; ++i) {
        q[0] = static_cast<double>(i) * inv_g;
        for (long long j = 0; j <= g - i; ++j) {
          q[1] = static_cast<double>(j) * inv_g;
          q[2] = static_cast<double>(g - i - j) * inv_g;
          consider(q);
        }
      }
      break;
    case 4:
      for (long long i = 0; i <= g; ++i) {
        q[0] = static_cast<double>(i) * inv_g;
        for (long long j = 0; j <= g - i; ++j) {
          q[1] = static_cast<double>(j) * inv_g;
          for (long long k = 0; k <= g - i - j; ++k) {
            q[2] = static_cast<double>(k) * inv_g;
            q[3] = static_cast<double>(g - i - j - k) * inv_g;
            consider(q);
          }
        }
      }
      break;
    default:
      throw std::invalid_argument("worst_case_oracle: unsupported atom count");
  }
  return best;
}

}  // namespace drql
