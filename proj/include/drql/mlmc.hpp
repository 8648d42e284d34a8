#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "drql/core.hpp"
#include "drql/dual.hpp"
#include "drql/rng.hpp"

namespace drql {

/// Threshold-MLMC estimator parameters: geometric level parameter psi and the
/// truncation threshold N_max above which the correction term is dropped.
struct MLMCConfig {
  double psi = 0.5;
  int n_max = 32;
  /// Sensitivity flag: also pool the base sample into the full empirical
  /// distribution. The default keeps the full distribution on the tail only,
  /// which is the convention the telescoping identity is checked against.
  bool include_base_in_full = false;

  void validate() const {
    if (!(psi > 0.0 && psi < 1.0)) throw std::invalid_argument("MLMCConfig: psi must be in (0,1)");
    if (n_max < 0) throw std::invalid_argument("MLMCConfig: n_max must be >= 0");
  }
};

/// Geometric level N with P(N = n) = psi * (1 - psi)^n, n = 0, 1, 2, ...
inline int sample_level(Rng& rng, double psi) {
  const double u = rng.next_double_open();
  const int n = static_cast<int>(std::floor(std::log(u) / std::log1p(-psi)));
  return std::max(n, 0);
}

/// P_N = psi (1 - psi)^N.
inline double level_probability(int level, double psi) {
  return psi * std::pow(1.0 - psi, level);
}

/// One base sample plus a tail of 2^(level+1) samples; the tail is empty when
/// the drawn level exceeds the threshold.
template <typename T>
struct SampleBatch {
  T base{};
  std::vector<T> tail;
  int level = 0;
};

/// Simulator access to the nominal model: i.i.d. samples at any (s, a).
template <typename G>
concept GenerativeModel = requires(const G& g, int s, int a, Rng& rng) {
  { g.sample_next_state(s, a, rng) } -> std::convertible_to<int>;
  { g.sample_reward(s, a, rng) } -> std::convertible_to<double>;
};

/// Samples from the nominal rows of a TabularMDP.
class MdpGenerativeModel {
 public:
  explicit MdpGenerativeModel(const TabularMDP& mdp) : mdp_(&mdp) {}

  int sample_next_state(int s, int a, Rng& rng) const {
    return sample_index(rng, mdp_->transition_row(s, a));
  }

  double sample_reward(int s, int a, Rng& rng) const {
    return mdp_->reward_support[sample_index(rng, mdp_->reward_row(s, a))];
  }

  const TabularMDP& mdp() const { return *mdp_; }

 private:
  const TabularMDP* mdp_;
};

namespace detail {

inline std::size_t tail_size(int level) {
  if (level > 61) throw std::invalid_argument("tail_size: level too large to materialize");
  return std::size_t{1} << (level + 1);
}

/// Flat tally of sample values keyed by exact value, split by sample-index
/// parity (tail draw i carries sample index i+1). Bounded by the number of
/// distinct values, so arbitrarily large batches never materialize.
struct ParityTally {
  std::vector<double> values;
  std::vector<long long> odd_count;   // odd sample indexes 1, 3, 5, ...
  std::vector<long long> even_count;  // even sample indexes 2, 4, 6, ...

  void add(double v, bool odd_index) {
    const auto it = std::lower_bound(values.begin(), values.end(), v);
    const std::size_t pos = it - values.begin();
    if (it == values.end() || *it != v) {
      values.insert(it, v);
      odd_count.insert(odd_count.begin() + pos, 0);
      even_count.insert(even_count.begin() + pos, 0);
    }
    (odd_index ? odd_count : even_count)[pos] += 1;
  }
};

}  // namespace detail

/// Draws the base sample plus, when level <= n_max, the 2^(level+1)-sample
/// tail. Reward flavor; see draw_state_batch for the transition flavor.
template <GenerativeModel G>
SampleBatch<double> draw_reward_batch(const G& gen, int s, int a, int level,
                                      const MLMCConfig& cfg, Rng& rng) {
  SampleBatch<double> b;
  b.level = level;
  b.base = gen.sample_reward(s, a, rng);
  if (level <= cfg.n_max) {
    const std::size_t n = detail::tail_size(level);
    b.tail.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.tail[i] = gen.sample_reward(s, a, rng);
  }
  return b;
}

template <GenerativeModel G>
SampleBatch<int> draw_state_batch(const G& gen, int s, int a, int level, const MLMCConfig& cfg,
                                  Rng& rng) {
  SampleBatch<int> b;
  b.level = level;
  b.base = gen.sample_next_state(s, a, rng);
  if (level <= cfg.n_max) {
    const std::size_t n = detail::tail_size(level);
    b.tail.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.tail[i] = gen.sample_next_state(s, a, rng);
  }
  return b;
}

/// Empirical distributions of the tail (all samples), and of the odd- and
/// even-indexed halves (tail position i holds sample index i+1).
struct EmpiricalSplits {
  DiscreteDistribution full;
  DiscreteDistribution even;
  DiscreteDistribution odd;
};

inline EmpiricalSplits empirical_splits(const SampleBatch<double>& batch, double ambient_min) {
  if (batch.tail.empty()) throw std::invalid_argument("empirical_splits: empty tail");
  std::vector<double> odd_half, even_half;
  odd_half.reserve(batch.tail.size() / 2 + 1);
  even_half.reserve(batch.tail.size() / 2);
  for (std::size_t i = 0; i < batch.tail.size(); ++i) {
    ((i + 1) % 2 == 1 ? odd_half : even_half).push_back(batch.tail[i]);
  }
  EmpiricalSplits out;
  out.full = make_empirical(batch.tail, ambient_min);
  out.odd = make_empirical(odd_half, ambient_min);
  out.even = make_empirical(even_half, ambient_min);
  return out;
}

/// Telescoping correction: worst_case(full) - (worst_case(even) +
/// worst_case(odd)) / 2, all through the dual solvers.
inline double delta_correction(const DiscreteDistribution& full, const DiscreteDistribution& even,
                               const DiscreteDistribution& odd, const UncertaintySpec& spec) {
  if (full.ambient_min != even.ambient_min || full.ambient_min != odd.ambient_min)
    throw std::invalid_argument("delta_correction: distributions must share ambient_min");
  return worst_case(full, spec).value - 0.5 * worst_case(even, spec).value -
         0.5 * worst_case(odd, spec).value;
}

/// Estimator output: the value, the number of generative samples consumed,
/// and the drawn level (diagnostics).
struct EstimateDetail {
  double value = 0.0;
  long long samples = 0;
  int level = 0;
};

namespace detail {

/// T-MLMC estimate of a worst-case expectation, generic over the sampler.
/// The base term is the dual value of the single-sample empirical
/// distribution (identical to the raw sample under chi-square/KL); the
/// correction rebuilds the full/even/odd duals from a streamed tail.
template <typename SampleValue>
EstimateDetail tmlmc_estimate_at_level(SampleValue&& draw, int level, double ambient_min,
                                       const UncertaintySpec& spec, const MLMCConfig& cfg,
                                       Rng& rng) {
  EstimateDetail out;
  out.level = level;
  const double base = draw(rng);
  out.samples = 1;
  out.value = worst_case_point(base, ambient_min, spec).value;
  if (level > cfg.n_max) return out;  // above threshold the correction is exactly zero

  const std::size_t n = tail_size(level);
  ParityTally tally;
  for (std::size_t i = 0; i < n; ++i) {
    tally.add(draw(rng), /*odd_index=*/(i + 1) % 2 == 1);
  }
  out.samples += static_cast<long long>(n);

  const std::size_t k = tally.values.size();
  DiscreteDistribution full, even, odd;
  full.ambient_min = even.ambient_min = odd.ambient_min = ambient_min;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_half = 2.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < k; ++i) {
    const long long co = tally.odd_count[i];
    const long long ce = tally.even_count[i];
    if (co + ce > 0 && !cfg.include_base_in_full) {
      full.values.push_back(tally.values[i]);
      full.probs.push_back(static_cast<double>(co + ce) * inv_n);
    }
    if (co > 0) {
      odd.values.push_back(tally.values[i]);
      odd.probs.push_back(static_cast<double>(co) * inv_half);
    }
    if (ce > 0) {
      even.values.push_back(tally.values[i]);
      even.probs.push_back(static_cast<double>(ce) * inv_half);
    }
  }
  if (cfg.include_base_in_full) {
    ParityTally pooled = tally;
    pooled.add(base, /*odd_index=*/true);  // parity irrelevant for the pooled view
    const double inv_all = 1.0 / static_cast<double>(n + 1);
    for (std::size_t i = 0; i < pooled.values.size(); ++i) {
      const long long c = pooled.odd_count[i] + pooled.even_count[i];
      full.values.push_back(pooled.values[i]);
      full.probs.push_back(static_cast<double>(c) * inv_all);
    }
  }

  const double delta = delta_correction(full, even, odd, spec);
  out.value += delta / level_probability(level, cfg.psi);
  return out;
}

}  // namespace detail

/// Estimated worst-case reward term: base dual plus the level-N1 correction
/// divided by P_N1. `reward_floor` is the minimum of the
/// declared reward support.
template <GenerativeModel G>
EstimateDetail tmlmc_reward_estimate(const G& gen, int s, int a, double reward_floor,
                                     const UncertaintySpec& spec, const MLMCConfig& cfg,
                                     Rng& rng) {
  const int level = sample_level(rng, cfg.psi);
  return detail::tmlmc_estimate_at_level(
      [&](Rng& r) { return gen.sample_reward(s, a, r); }, level, reward_floor, spec, cfg, rng);
}

/// Estimated worst-case next-state value term: sampled
/// next states are mapped through V before the duals. `value_floor` is the
/// minimum of V over all states.
template <GenerativeModel G>
EstimateDetail tmlmc_value_estimate(const G& gen, int s, int a, std::span<const double> values,
                                    double value_floor, const UncertaintySpec& spec,
                                    const MLMCConfig& cfg, Rng& rng) {
  const int level = sample_level(rng, cfg.psi);
  return detail::tmlmc_estimate_at_level(
      [&](Rng& r) { return values[gen.sample_next_state(s, a, r)]; }, level, value_floor, spec,
      cfg, rng);
}

template <GenerativeModel G>
EstimateDetail tmlmc_value_estimate(const G& gen, int s, int a, const QTable& q,
                                    const UncertaintySpec& spec, const MLMCConfig& cfg,
                                    Rng& rng) {
  const std::vector<double> v = value_vector(q);
  const double floor = *std::min_element(v.begin(), v.end());
  return tmlmc_value_estimate(gen, s, a, std::span<const double>(v), floor, spec, cfg, rng);
}

/// One estimated robust Bellman backup at (s, a): reward estimate plus gamma
/// times the value estimate, with independent level draws and batches.
template <GenerativeModel G>
EstimateDetail tmlmc_operator(const G& gen, int s, int a, std::span<const double> values,
                              double value_floor, const MdpShape& shape,
                              const UncertaintySpec& spec, const MLMCConfig& cfg,
                              Rng& reward_rng, Rng& value_rng) {
  const EstimateDetail r = tmlmc_reward_estimate(gen, s, a, shape.reward_floor, spec, cfg,
                                                 reward_rng);
  const EstimateDetail v =
      tmlmc_value_estimate(gen, s, a, values, value_floor, spec, cfg, value_rng);
  return {r.value + shape.gamma * v.value, r.samples + v.samples, r.level};
}

template <GenerativeModel G>
EstimateDetail tmlmc_operator(const G& gen, int s, int a, const QTable& q, const MdpShape& shape,
                              const UncertaintySpec& spec, const MLMCConfig& cfg, Rng& rng) {
  const std::vector<double> v = value_vector(q);
  const double floor = *std::min_element(v.begin(), v.end());
  return tmlmc_operator(gen, s, a, std::span<const double>(v), floor, shape, spec, cfg, rng, rng);
}

}  // namespace drql
