#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "drql/core.hpp"
#include "drql/rng.hpp"

namespace drql {

namespace detail {

/// Ordered distinct support assembled from per-(s,a) reward atoms.
class SupportBuilder {
 public:
  // atoms: (value, prob) pairs; probs must sum to ~1 per cell
  void set(int s, int a, std::vector<std::pair<double, double>> atoms) {
    for (const auto& [value, prob] : atoms) values_.insert({value, 0});
    cells_[{s, a}] = std::move(atoms);
  }

  std::vector<double> support() const {
    std::vector<double> out;
    out.reserve(values_.size());
    for (const auto& [v, unused] : values_) out.push_back(v);
    return out;
  }

  std::vector<double> dist_rows(int num_states, int num_actions) const {
    const auto sup = support();
    std::vector<double> rows(static_cast<std::size_t>(num_states) * num_actions * sup.size(),
                             0.0);
    for (const auto& [cell, atoms] : cells_) {
      const auto [s, a] = cell;
      double* row =
          rows.data() + (static_cast<std::size_t>(s) * num_actions + a) * sup.size();
      for (const auto& [value, prob] : atoms) {
        const std::size_t k =
            std::lower_bound(sup.begin(), sup.end(), value) - sup.begin();
        row[k] += prob;
      }
    }
    return rows;
  }

 private:
  std::map<double, int> values_;
  std::map<std::pair<int, int>, std::vector<std::pair<double, double>>> cells_;
};

}  // namespace detail

struct GarnetOptions {
  /// When set, rewards are per-step stochastic: the cell's normal law is
  /// discretized onto a 10-atom support instead of a single generation-time
  /// draw. Convention knob for sensitivity studies.
  bool stochastic_rewards = false;
};

/// Random Garnet benchmark G(num_states, num_actions). Per (s, a): kernel row
/// = normalized |N(omega, kappa)| draws and reward ~ N(nu, psi) clipped to
/// [0, 200], with omega, kappa, nu, psi ~ Uniform[0, 100]. gamma = 0.9.
inline TabularMDP garnet(int num_states, int num_actions, std::uint64_t seed,
                         GarnetOptions options = {}) {
  if (num_states < 1 || num_actions < 1)
    throw std::invalid_argument("garnet: need at least one state and action");
  constexpr double kRewardMax = 200.0;
  std::vector<double> transition(
      static_cast<std::size_t>(num_states) * num_actions * num_states);
  detail::SupportBuilder rewards;

  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      Rng rng = stream(seed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(a)});
      const double omega = rng.next_uniform(0.0, 100.0);
      const double kappa = rng.next_uniform(0.0, 100.0);
      const double nu = rng.next_uniform(0.0, 100.0);
      const double psi = rng.next_uniform(0.0, 100.0);

      double* row =
          transition.data() + (static_cast<std::size_t>(s) * num_actions + a) * num_states;
      double sum = 0.0;
      for (int attempt = 0; attempt < 10 && sum == 0.0; ++attempt) {
        sum = 0.0;
        for (int s2 = 0; s2 < num_states; ++s2) {
          row[s2] = std::abs(omega + kappa * rng.next_normal());
          sum += row[s2];
        }
      }
      if (sum == 0.0) throw std::runtime_error("garnet: degenerate kernel row");
      for (int s2 = 0; s2 < num_states; ++s2) row[s2] /= sum;

      if (!options.stochastic_rewards) {
        const double r =
            std::clamp(nu + psi * rng.next_normal(), 0.0, kRewardMax);
        rewards.set(s, a, {{r, 1.0}});
      } else {
        // 10 equispaced atoms across +-2.5 std, normal-pdf weighted.
        std::vector<std::pair<double, double>> atoms;
        if (psi < 1e-12) {
          atoms.push_back({std::clamp(nu, 0.0, kRewardMax), 1.0});
        } else {
          double total = 0.0;
          for (int j = 0; j < 10; ++j) {
            const double z = -2.5 + 5.0 * (j + 0.5) / 10.0;
            const double w = std::exp(-0.5 * z * z);
            atoms.push_back({std::clamp(nu + psi * z, 0.0, kRewardMax), w});
            total += w;
          }
          for (auto& [value, prob] : atoms) prob /= total;
        }
        rewards.set(s, a, std::move(atoms));
      }
    }
  }

  return TabularMDP(num_states, num_actions, std::move(transition), rewards.support(),
                    rewards.dist_rows(num_states, num_actions), 0.9, kRewardMax);
}

/// Two-state recycling robot. States {0 = low, 1 = high}, actions {0 =
/// search, 1 = wait, 2 = recharge}. Searching earns 2 while the battery
/// holds; a failed search from low depletes the battery (rescued to high,
/// reward 0 for that step), so the (low, search) reward is the two-atom
/// mixture {2 w.p. alpha, 0 w.p. 1 - alpha}. Waiting earns 1, recharging 0.
inline TabularMDP recycling_robot(double alpha, double beta) {
  if (!(alpha >= 0.0 && alpha <= 1.0 && beta >= 0.0 && beta <= 1.0))
    throw std::invalid_argument("recycling_robot: alpha, beta must lie in [0, 1]");
  constexpr int kLow = 0, kHigh = 1;
  constexpr int kSearch = 0, kWait = 1, kRecharge = 2;
  const int S = 2, A = 3;
  std::vector<double> transition(S * A * S, 0.0);
  const auto p = [&](int s, int a) { return transition.data() + (s * A + a) * S; };
  p(kLow, kSearch)[kLow] = alpha;
  p(kLow, kSearch)[kHigh] = 1.0 - alpha;
  p(kHigh, kSearch)[kHigh] = beta;
  p(kHigh, kSearch)[kLow] = 1.0 - beta;
  p(kLow, kWait)[kLow] = 1.0;
  p(kHigh, kWait)[kHigh] = 1.0;
  p(kLow, kRecharge)[kHigh] = 1.0;
  p(kHigh, kRecharge)[kHigh] = 1.0;

  detail::SupportBuilder rewards;
  rewards.set(kLow, kSearch, {{0.0, 1.0 - alpha}, {2.0, alpha}});
  rewards.set(kHigh, kSearch, {{2.0, 1.0}});
  rewards.set(kLow, kWait, {{1.0, 1.0}});
  rewards.set(kHigh, kWait, {{1.0, 1.0}});
  rewards.set(kLow, kRecharge, {{0.0, 1.0}});
  rewards.set(kHigh, kRecharge, {{0.0, 1.0}});

  return TabularMDP(S, A, std::move(transition), rewards.support(), rewards.dist_rows(S, A),
                    0.9, 2.0);
}

/// Classic 4x4 frozen lake. States are row * 4 + col; actions {0 = up, 1 =
/// down, 2 = left, 3 = right}. The intended move succeeds w.p. 1 - slip, else
/// one of the two perpendicular moves (slip/2 each); walls reflect. Holes at
/// (1,1), (1,3), (2,3), (3,0) and the goal (3,3) absorb. Reward 1 on any
/// transition into the goal from outside it, else 0. gamma = 0.95.
inline TabularMDP frozen_lake_4x4(double slip) {
  if (!(slip >= 0.0 && slip <= 1.0))
    throw std::invalid_argument("frozen_lake_4x4: slip must lie in [0, 1]");
  const int S = 16, A = 4;
  constexpr int kGoal = 15;
  const bool absorbing[16] = {false, false, false, false, false, true,  false, true,
                              false, false, false, true,  true,  false, false, true};

  const auto move = [](int s, int dir) {
    int r = s / 4, c = s % 4;
    switch (dir) {
      case 0: r -= 1; break;
      case 1: r += 1; break;
      case 2: c -= 1; break;
      case 3: c += 1; break;
    }
    if (r < 0 || r > 3 || c < 0 || c > 3) return s;  // wall reflects
    return r * 4 + c;
  };

  std::vector<double> transition(S * A * S, 0.0);
  detail::SupportBuilder rewards;
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      double* row = transition.data() + (s * A + a) * S;
      if (absorbing[s]) {
        row[s] = 1.0;
        rewards.set(s, a, {{0.0, 1.0}});
        continue;
      }
      const int perp0 = a <= 1 ? 2 : 0;
      const int perp1 = a <= 1 ? 3 : 1;
      row[move(s, a)] += 1.0 - slip;
      row[move(s, perp0)] += slip / 2.0;
      row[move(s, perp1)] += slip / 2.0;
      const double p_goal = row[kGoal];
      if (p_goal >= 1.0) {
        rewards.set(s, a, {{1.0, 1.0}});
      } else if (p_goal > 0.0) {
        rewards.set(s, a, {{0.0, 1.0 - p_goal}, {1.0, p_goal}});
      } else {
        rewards.set(s, a, {{0.0, 1.0}});
      }
    }
  }
  return TabularMDP(S, A, std::move(transition), rewards.support(), rewards.dist_rows(S, A),
                    0.95, 1.0);
}

/// Gambler's problem: states 0..goal (both ends absorbing), win probability
/// p_head. Action a bids stake a+1 when legal (stake <= min(s, goal - s)),
/// otherwise the bid falls back to stake 1 to keep the action space
/// rectangular. Reward 1 exactly on reaching the goal. gamma = 0.99.
inline TabularMDP gambler(double p_head, int goal) {
  if (!(p_head > 0.0 && p_head < 1.0))
    throw std::invalid_argument("gambler: p_head must lie in (0, 1)");
  if (goal < 2) throw std::invalid_argument("gambler: goal must be >= 2");
  const int S = goal + 1;
  const int A = std::max(1, goal / 2);

  std::vector<double> transition(static_cast<std::size_t>(S) * A * S, 0.0);
  detail::SupportBuilder rewards;
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      double* row = transition.data() + (static_cast<std::size_t>(s) * A + a) * S;
      if (s == 0 || s == goal) {
        row[s] = 1.0;
        rewards.set(s, a, {{0.0, 1.0}});
        continue;
      }
      const int max_stake = std::min(s, goal - s);
      const int stake = (a + 1 <= max_stake) ? a + 1 : 1;
      row[s + stake] += p_head;
      row[s - stake] += 1.0 - p_head;
      if (s + stake == goal) {
        rewards.set(s, a, {{1.0, p_head}, {0.0, 1.0 - p_head}});
      } else {
        rewards.set(s, a, {{0.0, 1.0}});
      }
    }
  }
  return TabularMDP(S, A, std::move(transition), rewards.support(), rewards.dist_rows(S, A),
                    0.99, 1.0);
}

}  // namespace drql
