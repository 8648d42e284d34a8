#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace drql {

/// Divergence defining the shape of the (s,a)-rectangular uncertainty ball.
enum class Divergence { TV, Chi2, KL };

inline const char* to_string(Divergence d) {
  switch (d) {
    case Divergence::TV: return "tv";
    case Divergence::Chi2: return "chi2";
    case Divergence::KL: return "kl";
  }
  return "?";
}

/// Uncertainty ball descriptor: divergence kind and radius sigma >= 0.
struct UncertaintySpec {
  Divergence divergence = Divergence::TV;
  double sigma = 0.0;

  void validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("UncertaintySpec: sigma must be >= 0");
  }
};

/// Row-stochasticity tolerance used at construction.
inline constexpr double kRowSumTol = 1e-9;

/// Shape and scalar constants of an MDP, sufficient for the model-free side
/// (the learner never needs the kernels themselves).
struct MdpShape {
  int num_states = 0;
  int num_actions = 0;
  double gamma = 0.0;
  double r_max = 0.0;
  double reward_floor = 0.0;  // min of the declared reward support
};

/// Finite MDP with a nominal transition kernel and finite-support nominal
/// reward distributions. Immutable after construction; construction rejects
/// malformed rows rather than renormalizing.
struct TabularMDP {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> transition;      // [s*A*S + a*S + s2]
  std::vector<double> reward_support;  // ordered, distinct, within [0, r_max]
  std::vector<double> reward_dist;     // [s*A*K + a*K + k]
  double gamma = 0.9;
  double r_max = 1.0;

  TabularMDP(int states, int actions, std::vector<double> trans,
             std::vector<double> support, std::vector<double> rdist, double discount,
             double reward_max)
      : num_states(states),
        num_actions(actions),
        transition(std::move(trans)),
        reward_support(std::move(support)),
        reward_dist(std::move(rdist)),
        gamma(discount),
        r_max(reward_max) {
    validate();
  }

  std::span<const double> transition_row(int s, int a) const {
    return {transition.data() + (static_cast<std::size_t>(s) * num_actions + a) * num_states,
            static_cast<std::size_t>(num_states)};
  }

  std::span<const double> reward_row(int s, int a) const {
    const std::size_t k = reward_support.size();
    return {reward_dist.data() + (static_cast<std::size_t>(s) * num_actions + a) * k, k};
  }

  MdpShape shape() const {
    return {num_states, num_actions, gamma, r_max,
            *std::min_element(reward_support.begin(), reward_support.end())};
  }

  void validate() const {
    if (num_states < 1 || num_actions < 1)
      throw std::invalid_argument("TabularMDP: need at least one state and action");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("TabularMDP: gamma must lie in (0, 1)");
    if (!(r_max > 0.0)) throw std::invalid_argument("TabularMDP: r_max must be > 0");
    if (reward_support.empty())
      throw std::invalid_argument("TabularMDP: empty reward support");
    const std::size_t sa = static_cast<std::size_t>(num_states) * num_actions;
    if (transition.size() != sa * num_states)
      throw std::invalid_argument("TabularMDP: transition size mismatch");
    if (reward_dist.size() != sa * reward_support.size())
      throw std::invalid_argument("TabularMDP: reward_dist size mismatch");
    for (double r : reward_support) {
      if (!(r >= 0.0 && r <= r_max))
        throw std::invalid_argument("TabularMDP: reward support value outside [0, r_max]");
    }
    for (std::size_t i = 0; i + 1 < reward_support.size(); ++i) {
      for (std::size_t j = i + 1; j < reward_support.size(); ++j) {
        if (reward_support[i] == reward_support[j])
          throw std::invalid_argument("TabularMDP: duplicate reward support values");
      }
    }
    for (int s = 0; s < num_states; ++s) {
      for (int a = 0; a < num_actions; ++a) {
        check_row(transition_row(s, a), "transition", s, a);
        check_row(reward_row(s, a), "reward_dist", s, a);
      }
    }
  }

 private:
  static void check_row(std::span<const double> row, const char* what, int s, int a) {
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0))
        throw std::invalid_argument(std::string("TabularMDP: negative ") + what + " entry at (" +
                                    std::to_string(s) + "," + std::to_string(a) + ")");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kRowSumTol)
      throw std::invalid_argument(std::string("TabularMDP: ") + what + " row (" +
                                  std::to_string(s) + "," + std::to_string(a) +
                                  ") sums to " + std::to_string(sum));
  }
};

/// |S| x |A| action-value table. Concurrent reads are safe; writes need
/// exclusive access.
struct QTable {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> values;

  QTable() = default;
  QTable(int states, int actions, double fill = 0.0)
      : num_states(states),
        num_actions(actions),
        values(static_cast<std::size_t>(states) * actions, fill) {}

  double& at(int s, int a) { return values[static_cast<std::size_t>(s) * num_actions + a]; }
  double at(int s, int a) const { return values[static_cast<std::size_t>(s) * num_actions + a]; }

  std::span<const double> row(int s) const {
    return {values.data() + static_cast<std::size_t>(s) * num_actions,
            static_cast<std::size_t>(num_actions)};
  }
};

/// Deterministic policy: one action index per state.
struct Policy {
  std::vector<int> action;
};

/// V(s) = max_a Q(s, a).
inline std::vector<double> value_vector(const QTable& q) {
  std::vector<double> v(q.num_states);
  for (int s = 0; s < q.num_states; ++s) {
    double best = q.at(s, 0);
    for (int a = 1; a < q.num_actions; ++a) best = std::max(best, q.at(s, a));
    v[s] = best;
  }
  return v;
}

/// Greedy action per state; ties broken by the smallest action index so runs
/// are bit-reproducible.
inline Policy greedy_policy(const QTable& q) {
  Policy pi;
  pi.action.resize(q.num_states);
  for (int s = 0; s < q.num_states; ++s) {
    int best = 0;
    for (int a = 1; a < q.num_actions; ++a) {
      if (q.at(s, a) > q.at(s, best)) best = a;
    }
    pi.action[s] = best;
  }
  return pi;
}

/// Smallest strictly positive entry of the nominal kernel; errors on an
/// all-zero kernel.
inline double min_nonzero_entry(const TabularMDP& mdp) {
  double best = std::numeric_limits<double>::infinity();
  for (double p : mdp.transition) {
    if (p > 0.0) best = std::min(best, p);
  }
  if (!std::isfinite(best))
    throw std::invalid_argument("min_nonzero_entry: transition kernel has no positive entry");
  return best;
}

inline double sup_norm_diff(const QTable& a, const QTable& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

}  // namespace drql
