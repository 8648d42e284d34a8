#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <thread>
#include <vector>

#include "drql/core.hpp"
#include "drql/mlmc.hpp"
#include "drql/robustdp.hpp"
#include "drql/rng.hpp"

namespace drql {

/// Recommended stepsize 2 log T / ((1 - gamma) T), capped at 1.
inline double recommended_stepsize_real(double iterations, double gamma) {
  if (!(iterations >= 2.0))
    throw std::invalid_argument("recommended_stepsize: T must be >= 2");
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("recommended_stepsize: gamma must be in (0, 1)");
  const double beta = 2.0 * std::log(iterations) / ((1.0 - gamma) * iterations);
  return std::min(beta, 1.0);
}

inline double recommended_stepsize(long long iterations, double gamma) {
  return recommended_stepsize_real(static_cast<double>(iterations), gamma);
}

/// Recommended truncation threshold. TV and chi-square use 2 log T / log 2;
/// KL additionally takes the max with log2(1 + p_min^2 log(2|S|) log T) where
/// p_min is the smallest positive kernel entry. `use_proof_constant` switches
/// the KL branch to the alternative constant log(2|S|^2|A|).
inline int recommended_nmax_real(const UncertaintySpec& spec, double iterations,
                                 const TabularMDP* mdp = nullptr,
                                 bool use_proof_constant = false) {
  if (!(iterations >= 2.0)) throw std::invalid_argument("recommended_nmax: T must be >= 2");
  const double log2e = std::log(2.0);
  const double base = 2.0 * std::log(iterations) / log2e;
  double result = base;
  if (spec.divergence == Divergence::KL) {
    if (mdp == nullptr)
      throw std::invalid_argument("recommended_nmax: KL threshold needs the MDP (for p_min)");
    const double p_min = min_nonzero_entry(*mdp);
    const double states = static_cast<double>(mdp->num_states);
    const double log_term = use_proof_constant
                                ? std::log(2.0 * states * states * mdp->num_actions)
                                : std::log(2.0 * states);
    const double kl_branch =
        std::log(1.0 + p_min * p_min * log_term * std::log(iterations)) / log2e;
    result = std::max(result, kl_branch);
  }
  return static_cast<int>(std::ceil(result - 1e-9));
}

inline int recommended_nmax(const UncertaintySpec& spec, long long iterations,
                            const TabularMDP& mdp, bool use_proof_constant = false) {
  return recommended_nmax_real(spec, static_cast<double>(iterations), &mdp, use_proof_constant);
}

/// Stepsize schedule descriptor. The shipped schedules are constant in t;
/// the hook stays per-iteration.
struct StepsizeSchedule {
  enum class Kind { kConstant, kRecommended };
  Kind kind = Kind::kConstant;
  double beta = 0.01;

  static StepsizeSchedule constant(double beta) { return {Kind::kConstant, beta}; }
  static StepsizeSchedule recommended() { return {Kind::kRecommended, 0.0}; }

  double value(long long /*t*/, long long iterations, double gamma) const {
    if (kind == Kind::kConstant) return beta;
    return recommended_stepsize(iterations, gamma);
  }
};

struct LearnerConfig {
  long long iterations = 0;  // T
  StepsizeSchedule stepsize = StepsizeSchedule::constant(0.01);
  MLMCConfig mlmc;
  UncertaintySpec uncertainty;
  std::uint64_t seed = 0;
  bool clamp_q = true;
  long long eval_every = 0;  // 0 disables greedy-policy evaluation
  int num_threads = 1;       // 0 = hardware concurrency

  void validate() const {
    if (iterations < 0) throw std::invalid_argument("LearnerConfig: iterations must be >= 0");
    if (stepsize.kind == StepsizeSchedule::Kind::kConstant &&
        !(stepsize.beta > 0.0 && stepsize.beta <= 1.0))
      throw std::invalid_argument("LearnerConfig: constant stepsize must lie in (0, 1]");
    if (eval_every < 0) throw std::invalid_argument("LearnerConfig: eval_every must be >= 0");
    if (num_threads < 0) throw std::invalid_argument("LearnerConfig: num_threads must be >= 0");
    mlmc.validate();
    uncertainty.validate();
  }
};

struct TraceRecord {
  long long iteration = 0;
  long long cum_samples = 0;
  std::optional<double> q_gap_inf;
  std::optional<double> greedy_robust_value;
};

struct TrainingTrace {
  std::vector<TraceRecord> records;
  /// Drawn-level histogram over all estimator calls (reward and value terms
  /// pooled); diagnostic only.
  std::vector<long long> level_histogram;
};

struct TrainResult {
  QTable q;
  Policy policy;
  TrainingTrace trace;
};

/// Synchronous T-MLMC Q-learning. Every (s, a) entry of sweep t
/// is estimated against the frozen Q_t with a stream keyed (seed, t, s, a,
/// term), so serial and parallel sweeps produce bit-identical tables.
///
/// `baseline` adds ||Q_t - Q*||_inf to trace records; `eval_mdp` enables the
/// greedy-policy robust evaluation every `eval_every` sweeps.
template <GenerativeModel G>
TrainResult run(const G& gen, const MdpShape& shape, const LearnerConfig& cfg,
                const QTable* baseline = nullptr, const TabularMDP* eval_mdp = nullptr,
                double eval_tol = 1e-8) {
  cfg.validate();
  if (cfg.eval_every > 0 && eval_mdp == nullptr)
    throw std::invalid_argument("learner::run: eval_every > 0 requires eval_mdp");

  const int S = shape.num_states;
  const int A = shape.num_actions;
  const std::size_t pairs = static_cast<std::size_t>(S) * A;
  const double q_cap = shape.r_max / (1.0 - shape.gamma);
  const long long T = cfg.iterations;

  QTable q(S, A);
  TrainingTrace trace;
  long long cum_samples = 0;

  const auto record = [&](long long t) {
    TraceRecord rec;
    rec.iteration = t;
    rec.cum_samples = cum_samples;
    if (baseline != nullptr) rec.q_gap_inf = sup_norm_diff(q, *baseline);
    if (cfg.eval_every > 0 && eval_mdp != nullptr) {
      const Policy pi = greedy_policy(q);
      const QTable qpi = robust_policy_evaluation(pi, *eval_mdp, cfg.uncertainty, eval_tol);
      rec.greedy_robust_value = policy_value_mean(qpi, pi);
    }
    trace.records.push_back(rec);
  };

  record(0);

  int threads = cfg.num_threads == 0
                    ? std::max(1u, std::thread::hardware_concurrency())
                    : cfg.num_threads;
  threads = std::min<int>(threads, static_cast<int>(pairs));

  constexpr int kMaxLevelBins = 64;
  trace.level_histogram.assign(kMaxLevelBins, 0);
  std::vector<double> next(pairs);
  std::vector<long long> sweep_samples(std::max(threads, 1), 0);
  std::vector<std::vector<long long>> level_bins(
      std::max(threads, 1), std::vector<long long>(kMaxLevelBins, 0));

  for (long long t = 0; t < T; ++t) {
    const std::vector<double> values = value_vector(q);
    const double floor = *std::min_element(values.begin(), values.end());
    const double beta = cfg.stepsize.value(t, T, shape.gamma);

    const auto update_range = [&](std::size_t begin, std::size_t end, int worker) {
      long long local_samples = 0;
      auto& bins = level_bins[worker];
      for (std::size_t idx = begin; idx < end; ++idx) {
        const int s = static_cast<int>(idx) / A;
        const int a = static_cast<int>(idx) % A;
        Rng reward_rng = stream(cfg.seed, {static_cast<std::uint64_t>(t),
                                           static_cast<std::uint64_t>(s),
                                           static_cast<std::uint64_t>(a), 0});
        Rng value_rng = stream(cfg.seed, {static_cast<std::uint64_t>(t),
                                          static_cast<std::uint64_t>(s),
                                          static_cast<std::uint64_t>(a), 1});
        const EstimateDetail r_est = tmlmc_reward_estimate(gen, s, a, shape.reward_floor,
                                                           cfg.uncertainty, cfg.mlmc,
                                                           reward_rng);
        const EstimateDetail v_est =
            tmlmc_value_estimate(gen, s, a, std::span<const double>(values), floor,
                                 cfg.uncertainty, cfg.mlmc, value_rng);
        double updated = (1.0 - beta) * q.values[idx] +
                         beta * (r_est.value + shape.gamma * v_est.value);
        if (cfg.clamp_q) updated = std::clamp(updated, 0.0, q_cap);
        next[idx] = updated;
        local_samples += r_est.samples + v_est.samples;
        bins[std::min(r_est.level, kMaxLevelBins - 1)] += 1;
        bins[std::min(v_est.level, kMaxLevelBins - 1)] += 1;
      }
      sweep_samples[worker] = local_samples;
    };

    if (threads <= 1) {
      update_range(0, pairs, 0);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(threads);
      const std::size_t chunk = (pairs + threads - 1) / threads;
      for (int w = 0; w < threads; ++w) {
        const std::size_t begin = std::min(pairs, static_cast<std::size_t>(w) * chunk);
        const std::size_t end = std::min(pairs, begin + chunk);
        pool.emplace_back(update_range, begin, end, w);
      }
      for (auto& th : pool) th.join();
    }

    q.values.assign(next.begin(), next.end());
    for (int w = 0; w < threads; ++w) {
      cum_samples += sweep_samples[w];
      sweep_samples[w] = 0;
      for (int b = 0; b < kMaxLevelBins; ++b) {
        trace.level_histogram[b] += level_bins[w][b];
        level_bins[w][b] = 0;
      }
    }

    if (!cfg.clamp_q) {
      for (double x : q.values) {
        if (!std::isfinite(x))
          throw std::runtime_error("learner::run: Q diverged (non-finite entry) at iteration " +
                                   std::to_string(t + 1) + " with clamping disabled");
      }
    }

    const long long done = t + 1;
    if (cfg.eval_every > 0 && done % cfg.eval_every == 0 && done != T) record(done);
  }

  if (T > 0) record(T);
  return {q, greedy_policy(q), std::move(trace)};
}

}  // namespace drql
