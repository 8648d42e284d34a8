#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "drql/core.hpp"
#include "drql/dual.hpp"

namespace drql {

namespace detail {

/// Distribution of V(s') under the nominal row p_{s,a}; zero-probability
/// states are dropped (the ambient minimum already covers the TV adversary's
/// best off-support target, and chi-square/KL stay on support(p)).
inline DiscreteDistribution transition_value_dist(const TabularMDP& mdp, int s, int a,
                                                  std::span<const double> values,
                                                  double ambient_min) {
  const auto row = mdp.transition_row(s, a);
  DiscreteDistribution d;
  d.ambient_min = ambient_min;
  d.values.reserve(row.size());
  d.probs.reserve(row.size());
  for (int s2 = 0; s2 < mdp.num_states; ++s2) {
    if (row[s2] > 0.0) {
      d.values.push_back(values[s2]);
      d.probs.push_back(row[s2]);
    }
  }
  return d;
}

inline DiscreteDistribution reward_value_dist(const TabularMDP& mdp, int s, int a) {
  const auto row = mdp.reward_row(s, a);
  DiscreteDistribution d;
  d.ambient_min = *std::min_element(mdp.reward_support.begin(), mdp.reward_support.end());
  for (std::size_t k = 0; k < row.size(); ++k) {
    if (row[k] > 0.0) {
      d.values.push_back(mdp.reward_support[k]);
      d.probs.push_back(row[k]);
    }
  }
  return d;
}

/// Worst-case rewards are Q-independent, so iteration loops compute them once.
inline std::vector<double> worst_case_rewards(const TabularMDP& mdp,
                                              const UncertaintySpec& spec) {
  std::vector<double> out(static_cast<std::size_t>(mdp.num_states) * mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a)
      out[static_cast<std::size_t>(s) * mdp.num_actions + a] =
          worst_case(reward_value_dist(mdp, s, a), spec).value;
  return out;
}

inline QTable bellman_sweep(const TabularMDP& mdp, const UncertaintySpec& spec,
                            const std::vector<double>& wc_rewards,
                            std::span<const double> values) {
  const double ambient = *std::min_element(values.begin(), values.end());
  QTable out(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const auto dist = transition_value_dist(mdp, s, a, values, ambient);
      out.at(s, a) = wc_rewards[static_cast<std::size_t>(s) * mdp.num_actions + a] +
                     mdp.gamma * worst_case(dist, spec).value;
    }
  }
  return out;
}

}  // namespace detail

/// Exact robust Bellman optimality operator on the nominal model:
/// worst-case reward plus gamma times the worst case of V = max_a Q over the
/// transition ball.
inline QTable robust_bellman(const QTable& q, const TabularMDP& mdp,
                             const UncertaintySpec& spec) {
  return detail::bellman_sweep(mdp, spec, detail::worst_case_rewards(mdp, spec),
                               value_vector(q));
}

struct ValueIterationResult {
  QTable q;
  long long iterations = 0;
  double residual = 0.0;
};

/// Robust value iteration from Q0 = 0 until the contraction-certified stop
/// ||Q_{k+1} - Q_k||_inf <= tol (1 - gamma) / (2 gamma), which guarantees
/// ||Q_k - Q*||_inf <= tol.
inline ValueIterationResult robust_value_iteration(const TabularMDP& mdp,
                                                   const UncertaintySpec& spec,
                                                   double tol = 1e-8,
                                                   long long max_iter = 1000000) {
  if (!(tol > 0.0)) throw std::invalid_argument("robust_value_iteration: tol must be > 0");
  spec.validate();
  const auto wc_rewards = detail::worst_case_rewards(mdp, spec);
  const double stop = tol * (1.0 - mdp.gamma) / (2.0 * mdp.gamma);
  QTable q(mdp.num_states, mdp.num_actions);
  double residual = 0.0;
  for (long long k = 1; k <= max_iter; ++k) {
    QTable next = detail::bellman_sweep(mdp, spec, wc_rewards, value_vector(q));
    residual = sup_norm_diff(next, q);
    q = std::move(next);
    if (residual <= stop) return {std::move(q), k, residual};
  }
  throw std::runtime_error("robust_value_iteration: no convergence after " +
                           std::to_string(max_iter) +
                           " iterations (residual = " + std::to_string(residual) + ")");
}

/// Worst-case Q-function of a fixed deterministic policy: fixed point of the
/// policy-restricted robust operator, same stopping rule as value iteration.
inline QTable robust_policy_evaluation(const Policy& pi, const TabularMDP& mdp,
                                       const UncertaintySpec& spec, double tol = 1e-8,
                                       long long max_iter = 1000000) {
  if (!(tol > 0.0)) throw std::invalid_argument("robust_policy_evaluation: tol must be > 0");
  spec.validate();
  if (static_cast<int>(pi.action.size()) != mdp.num_states)
    throw std::invalid_argument("robust_policy_evaluation: policy size mismatch");
  for (int a : pi.action)
    if (a < 0 || a >= mdp.num_actions)
      throw std::invalid_argument("robust_policy_evaluation: invalid action index");

  const auto wc_rewards = detail::worst_case_rewards(mdp, spec);
  const double stop = tol * (1.0 - mdp.gamma) / (2.0 * mdp.gamma);
  QTable q(mdp.num_states, mdp.num_actions);
  std::vector<double> w(mdp.num_states);
  double residual = 0.0;
  for (long long k = 1; k <= max_iter; ++k) {
    for (int s = 0; s < mdp.num_states; ++s) w[s] = q.at(s, pi.action[s]);
    QTable next = detail::bellman_sweep(mdp, spec, wc_rewards, w);
    residual = sup_norm_diff(next, q);
    q = std::move(next);
    if (residual <= stop) return q;
  }
  throw std::runtime_error("robust_policy_evaluation: no convergence after " +
                           std::to_string(max_iter) +
                           " iterations (residual = " + std::to_string(residual) + ")");
}

/// Scalar summary used in traces and CSVs: mean over states of Q(s, pi(s)).
inline double policy_value_mean(const QTable& q, const Policy& pi) {
  double acc = 0.0;
  for (int s = 0; s < q.num_states; ++s) acc += q.at(s, pi.action[s]);
  return acc / static_cast<double>(q.num_states);
}

/// Mean over states of max_a Q(s, a); the baseline counterpart of
/// policy_value_mean.
inline double optimal_value_mean(const QTable& q) {
  const auto v = value_vector(q);
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(q.num_states);
}

}  // namespace drql
