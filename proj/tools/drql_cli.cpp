// Command-line harness for the robust Q-learning toolkit: exact baselines,
// seeded T-MLMC training sweeps, estimator bias studies, and the
// threshold-vs-vanilla MLMC comparison, all emitting stable CSV/JSON.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "drql/drql.hpp"

namespace {

using namespace drql;

std::string fmt(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

// --- environment grammar: garnet:S,A,seed | robot:a,b | lake:slip | gambler:p,goal ---

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

TabularMDP parse_env(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);
  const auto parts = split(args, ',');
  try {
    if (kind == "garnet") {
      if (parts.size() != 3 && parts.size() != 4)
        throw std::invalid_argument("garnet takes S,A,seed[,stochastic]");
      GarnetOptions opt;
      if (parts.size() == 4) {
        if (parts[3] != "stochastic")
          throw std::invalid_argument("garnet's 4th argument must be 'stochastic'");
        opt.stochastic_rewards = true;
      }
      return garnet(std::stoi(parts[0]), std::stoi(parts[1]), std::stoull(parts[2]), opt);
    }
    if (kind == "robot") {
      if (parts.size() != 2) throw std::invalid_argument("robot takes alpha,beta");
      return recycling_robot(std::stod(parts[0]), std::stod(parts[1]));
    }
    if (kind == "lake") {
      if (parts.size() != 1) throw std::invalid_argument("lake takes slip");
      return frozen_lake_4x4(std::stod(parts[0]));
    }
    if (kind == "gambler") {
      if (parts.size() != 2) throw std::invalid_argument("gambler takes p,goal");
      return gambler(std::stod(parts[0]), std::stoi(parts[1]));
    }
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("malformed environment spec: " + text);
  }
  throw std::invalid_argument("unknown environment kind: " + kind +
                              " (expected garnet|robot|lake|gambler)");
}

Divergence parse_divergence(const std::string& name) {
  if (name == "tv") return Divergence::TV;
  if (name == "chi2") return Divergence::Chi2;
  if (name == "kl") return Divergence::KL;
  throw std::invalid_argument("unknown divergence: " + name + " (expected tv|chi2|kl)");
}

struct CommonOptions {
  std::string env;
  std::string mdp_file;
  std::string div = "tv";
  double sigma = 0.0;
  double psi = 0.5;
  double gamma_override = -1.0;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string dump_mdp;

  void attach(CLI::App* cmd) {
    cmd->add_option("--env", env, "environment spec: garnet:S,A,seed | robot:a,b | lake:slip | gambler:p,goal");
    cmd->add_option("--mdp-file", mdp_file, "load the MDP from a JSON file instead of --env");
    cmd->add_option("--div", div, "uncertainty divergence: tv|chi2|kl")->capture_default_str();
    cmd->add_option("--sigma", sigma, "uncertainty level")->capture_default_str();
    cmd->add_option("--psi", psi, "geometric level parameter")->capture_default_str();
    cmd->add_option("--gamma-override", gamma_override, "replace the environment's discount factor");
    cmd->add_option("--seed", seed, "master seed; all randomness derives from it")
        ->capture_default_str();
    cmd->add_option("--threads", threads, "worker threads")->capture_default_str();
    cmd->add_option("--dump-mdp", dump_mdp, "also write the constructed MDP as JSON");
    cmd->configurable(true);
  }

  TabularMDP build_mdp() const {
    if (env.empty() == mdp_file.empty())
      throw std::invalid_argument("exactly one of --env / --mdp-file is required");
    TabularMDP mdp = env.empty() ? mdp_from_json(read_json_file(mdp_file)) : parse_env(env);
    if (gamma_override > 0.0) {
      mdp = TabularMDP(mdp.num_states, mdp.num_actions, mdp.transition, mdp.reward_support,
                       mdp.reward_dist, gamma_override, mdp.r_max);
    }
    if (!dump_mdp.empty()) write_json_file(dump_mdp, mdp_to_json(mdp));
    return mdp;
  }

  UncertaintySpec spec() const {
    UncertaintySpec s{parse_divergence(div), sigma};
    s.validate();
    return s;
  }
};

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << contents;
}

/// Nearest-rank percentile of a sorted sample.
double percentile_nearest_rank(std::vector<double> sorted, double pct) {
  const std::size_t n = sorted.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

/// Runs `runs` independent jobs on at most `threads` workers; results land in
/// index order so output never depends on scheduling.
template <typename Job>
void run_indexed(int runs, int threads, Job&& job) {
  if (threads <= 1) {
    for (int i = 0; i < runs; ++i) job(i);
    return;
  }
  std::atomic<int> cursor{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(threads, runs); ++w) {
    pool.emplace_back([&] {
      for (int i = cursor.fetch_add(1); i < runs; i = cursor.fetch_add(1)) job(i);
    });
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------

struct BaselineOptions {
  CommonOptions common;
  double tol = 1e-8;
  long long max_iter = 1000000;
  std::string out;
};

int cmd_baseline(const BaselineOptions& opt) {
  const TabularMDP mdp = opt.common.build_mdp();
  const UncertaintySpec spec = opt.common.spec();
  const ValueIterationResult vi = robust_value_iteration(mdp, spec, opt.tol, opt.max_iter);
  write_json_file(opt.out, baseline_to_json(mdp, spec, vi));
  std::cout << "converged in " << vi.iterations << " iterations, residual "
            << fmt(vi.residual) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  CommonOptions common;
  long long iterations = 1000;
  int runs = 1;
  double beta = 0.01;
  bool beta_auto = false;
  int nmax = 32;
  bool nmax_auto = false;
  long long eval_every = -1;  // <0: default to max(1, T/100)
  double eval_tol = 1e-8;
  std::string baseline_file;
  std::string out;
  std::string summary_out;
  std::string level_hist_out;
  bool include_base_in_full = false;
  bool no_clamp = false;
};

LearnerConfig make_learner_config(const TrainOptions& opt, const TabularMDP& mdp, int nmax) {
  LearnerConfig cfg;
  cfg.iterations = opt.iterations;
  cfg.stepsize = opt.beta_auto
                     ? StepsizeSchedule::constant(
                           recommended_stepsize(std::max<long long>(opt.iterations, 2),
                                                mdp.gamma))
                     : StepsizeSchedule::constant(opt.beta);
  cfg.mlmc.psi = opt.common.psi;
  cfg.mlmc.n_max = nmax;
  cfg.mlmc.include_base_in_full = opt.include_base_in_full;
  cfg.uncertainty = opt.common.spec();
  cfg.clamp_q = !opt.no_clamp;
  cfg.eval_every =
      opt.eval_every < 0 ? std::max<long long>(1, opt.iterations / 100) : opt.eval_every;
  cfg.num_threads = 1;  // replications parallelize instead
  return cfg;
}

std::string default_summary_path(const std::string& out) {
  const auto dot = out.rfind(".csv");
  if (dot != std::string::npos && dot == out.size() - 4)
    return out.substr(0, dot) + "_summary.csv";
  return out + "_summary.csv";
}

int cmd_train(const TrainOptions& opt) {
  const TabularMDP mdp = opt.common.build_mdp();
  const MdpShape shape = mdp.shape();
  const int nmax = opt.nmax_auto
                       ? recommended_nmax(opt.common.spec(),
                                          std::max<long long>(opt.iterations, 2), mdp)
                       : opt.nmax;

  std::optional<QTable> baseline;
  if (!opt.baseline_file.empty())
    baseline = q_from_baseline_json(read_json_file(opt.baseline_file));

  std::vector<TrainResult> results(opt.runs);
  run_indexed(opt.runs, opt.common.threads, [&](int run) {
    LearnerConfig cfg = make_learner_config(opt, mdp, nmax);
    cfg.seed = derive_seed(opt.common.seed, static_cast<std::uint64_t>(run));
    results[run] = drql::run(MdpGenerativeModel(mdp), shape, cfg,
                             baseline ? &*baseline : nullptr,
                             cfg.eval_every > 0 ? &mdp : nullptr, opt.eval_tol);
  });

  std::string csv = "run_id,iteration,cum_samples,q_gap_inf,greedy_robust_value\n";
  for (int run = 0; run < opt.runs; ++run) {
    for (const auto& rec : results[run].trace.records) {
      csv += std::to_string(run) + "," + std::to_string(rec.iteration) + "," +
             std::to_string(rec.cum_samples) + "," + fmt(rec.q_gap_inf) + "," +
             fmt(rec.greedy_robust_value) + "\n";
    }
  }
  write_text_file(opt.out, csv);

  // per-iteration mean / p5 / p95 of the greedy robust value across runs
  std::string summary = "iteration,mean,p5,p95\n";
  if (!results.empty()) {
    for (std::size_t r = 0; r < results[0].trace.records.size(); ++r) {
      std::vector<double> vals;
      for (const auto& res : results)
        if (r < res.trace.records.size() && res.trace.records[r].greedy_robust_value)
          vals.push_back(*res.trace.records[r].greedy_robust_value);
      if (vals.empty()) continue;
      std::sort(vals.begin(), vals.end());
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      summary += std::to_string(results[0].trace.records[r].iteration) + "," + fmt(mean) +
                 "," + fmt(percentile_nearest_rank(vals, 5)) + "," +
                 fmt(percentile_nearest_rank(vals, 95)) + "\n";
    }
  }
  write_text_file(opt.summary_out.empty() ? default_summary_path(opt.out) : opt.summary_out,
                  summary);

  if (!opt.level_hist_out.empty()) {
    std::string hist = "level,count\n";
    std::vector<long long> bins;
    for (const auto& res : results) {
      if (bins.size() < res.trace.level_histogram.size())
        bins.resize(res.trace.level_histogram.size(), 0);
      for (std::size_t b = 0; b < res.trace.level_histogram.size(); ++b)
        bins[b] += res.trace.level_histogram[b];
    }
    for (std::size_t b = 0; b < bins.size(); ++b)
      if (bins[b] > 0) hist += std::to_string(b) + "," + std::to_string(bins[b]) + "\n";
    write_text_file(opt.level_hist_out, hist);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct BiasStudyOptions {
  CommonOptions common;
  std::vector<int> nmax_list = {2, 4, 6, 8};
  long long replications = 100000;
  int state = 0;
  int action = 0;
  double tol = 1e-10;
  std::string baseline_file;
  std::string out;
};

int cmd_bias_study(const BiasStudyOptions& opt) {
  const TabularMDP mdp = opt.common.build_mdp();
  if (static_cast<long long>(mdp.num_states) * mdp.num_actions > 64)
    throw std::invalid_argument("bias-study: environment too large (|S|*|A| > 64)");
  if (opt.state < 0 || opt.state >= mdp.num_states || opt.action < 0 ||
      opt.action >= mdp.num_actions)
    throw std::invalid_argument("bias-study: state/action out of range");

  const UncertaintySpec spec = opt.common.spec();
  const QTable q_fixed = opt.baseline_file.empty()
                             ? robust_value_iteration(mdp, spec, opt.tol).q
                             : q_from_baseline_json(read_json_file(opt.baseline_file));
  const auto values = value_vector(q_fixed);
  const double floor = *std::min_element(values.begin(), values.end());
  const MdpShape shape = mdp.shape();
  const MdpGenerativeModel gen(mdp);
  const double exact = robust_bellman(q_fixed, mdp, spec).at(opt.state, opt.action);

  std::string csv = "n_max,bias_hat,bias_se,var_hat,mean_samples\n";
  for (int nmax : opt.nmax_list) {
    MLMCConfig mlmc;
    mlmc.psi = opt.common.psi;
    mlmc.n_max = nmax;

    const int workers = std::max(opt.common.threads, 1);
    std::vector<double> sums(workers, 0.0), sum_sqs(workers, 0.0);
    std::vector<long long> sample_counts(workers, 0);
    const long long M = opt.replications;
    run_indexed(workers, workers, [&](int w) {
      double sum = 0.0, sum_sq = 0.0;
      long long samples = 0;
      for (long long rep = w; rep < M; rep += workers) {
        // streams keyed by replication only, so the level draws pair up
        // across the n_max sweep
        Rng r_rng = stream(opt.common.seed, {static_cast<std::uint64_t>(rep), 0});
        Rng v_rng = stream(opt.common.seed, {static_cast<std::uint64_t>(rep), 1});
        const auto est =
            tmlmc_operator(gen, opt.state, opt.action, std::span<const double>(values),
                           floor, shape, spec, mlmc, r_rng, v_rng);
        sum += est.value;
        sum_sq += est.value * est.value;
        samples += est.samples;
      }
      sums[w] = sum;
      sum_sqs[w] = sum_sq;
      sample_counts[w] = samples;
    });
    double sum = 0.0, sum_sq = 0.0;
    long long samples = 0;
    for (int w = 0; w < workers; ++w) {
      sum += sums[w];
      sum_sq += sum_sqs[w];
      samples += sample_counts[w];
    }
    const double mean = sum / static_cast<double>(M);
    const double var = std::max(sum_sq / static_cast<double>(M) - mean * mean, 0.0);
    const double se = std::sqrt(var / static_cast<double>(M));
    csv += std::to_string(nmax) + "," + fmt(std::abs(mean - exact)) + "," + fmt(se) + "," +
           fmt(var) + "," + fmt(static_cast<double>(samples) / static_cast<double>(M)) + "\n";
  }
  write_text_file(opt.out, csv);
  return 0;
}

// ---------------------------------------------------------------------------

struct CompareOptions {
  TrainOptions train;
  int vanilla_nmax = 62;  // effectively untruncated at desk scale
};

int cmd_compare_mlmc(const CompareOptions& opt) {
  const TabularMDP mdp = opt.train.common.build_mdp();
  const MdpShape shape = mdp.shape();

  struct Series {
    std::string name;
    int nmax;
  };
  const Series series[] = {{"tmlmc", opt.train.nmax}, {"mlmc", opt.vanilla_nmax}};

  std::vector<std::vector<TrainResult>> results(2);
  for (auto& r : results) r.resize(opt.train.runs);
  for (int which = 0; which < 2; ++which) {
    run_indexed(opt.train.runs, opt.train.common.threads, [&](int run) {
      LearnerConfig cfg = make_learner_config(opt.train, mdp, series[which].nmax);
      // shared per-run seed: both series draw the same levels below the
      // smaller threshold
      cfg.seed = derive_seed(opt.train.common.seed, static_cast<std::uint64_t>(run));
      results[which][run] =
          drql::run(MdpGenerativeModel(mdp), shape, cfg, nullptr,
                    cfg.eval_every > 0 ? &mdp : nullptr, opt.train.eval_tol);
    });
  }

  std::string csv = "series,run_id,iteration,cum_samples,greedy_robust_value\n";
  for (int which = 0; which < 2; ++which) {
    for (int run = 0; run < opt.train.runs; ++run) {
      for (const auto& rec : results[which][run].trace.records) {
        csv += series[which].name + "," + std::to_string(run) + "," +
               std::to_string(rec.iteration) + "," + std::to_string(rec.cum_samples) + "," +
               fmt(rec.greedy_robust_value) + "\n";
      }
    }
  }
  write_text_file(opt.train.out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distributionally robust Q-learning toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "key=value config file with [subcommand] sections; command-line flags win");

  BaselineOptions baseline;
  auto* cmd_base = app.add_subcommand("baseline", "robust value iteration to Q* (JSON out)");
  baseline.common.attach(cmd_base);
  cmd_base->add_option("--tol", baseline.tol, "sup-norm tolerance on Q*")->capture_default_str();
  cmd_base->add_option("--max-iter", baseline.max_iter, "iteration cap")->capture_default_str();
  cmd_base->add_option("--out", baseline.out, "output JSON path")->required();

  TrainOptions train;
  auto* cmd_tr = app.add_subcommand("train", "seeded T-MLMC training replications (CSV out)");
  train.common.attach(cmd_tr);
  cmd_tr->add_option("--T", train.iterations, "iterations per run")->capture_default_str();
  cmd_tr->add_option("--runs", train.runs, "independent replications")->capture_default_str();
  auto* beta_opt = cmd_tr->add_option("--beta", train.beta, "constant stepsize");
  cmd_tr->add_flag("--beta-auto", train.beta_auto, "use the recommended stepsize")
      ->excludes(beta_opt);
  auto* nmax_opt = cmd_tr->add_option("--nmax", train.nmax, "threshold N_max");
  cmd_tr->add_flag("--nmax-auto", train.nmax_auto, "use the recommended threshold")
      ->excludes(nmax_opt);
  cmd_tr->add_option("--eval-every", train.eval_every,
                     "greedy-policy evaluation cadence (0 disables; default T/100)");
  cmd_tr->add_option("--eval-tol", train.eval_tol, "policy-evaluation tolerance")
      ->capture_default_str();
  cmd_tr->add_option("--baseline", train.baseline_file, "baseline JSON for ||Q - Q*|| tracking");
  cmd_tr->add_option("--out", train.out, "per-run CSV path")->required();
  cmd_tr->add_option("--summary-out", train.summary_out,
                     "summary CSV path (default: <out>_summary.csv)");
  cmd_tr->add_option("--level-hist", train.level_hist_out, "optional level histogram CSV");
  cmd_tr->add_flag("--include-base-in-full", train.include_base_in_full,
                   "pool the base sample into the full empirical distribution");
  cmd_tr->add_flag("--no-clamp", train.no_clamp, "disable Q clamping (diagnostics)");

  BiasStudyOptions bias;
  auto* cmd_bias = app.add_subcommand(
      "bias-study", "Monte-Carlo bias/variance of the T-MLMC operator vs the exact one");
  bias.common.attach(cmd_bias);
  cmd_bias->add_option("--nmax-list", bias.nmax_list, "thresholds to sweep")
      ->delimiter(',')
      ->capture_default_str();
  cmd_bias->add_option("--replications", bias.replications, "Monte-Carlo replications")
      ->capture_default_str();
  cmd_bias->add_option("--state", bias.state, "probed state")->capture_default_str();
  cmd_bias->add_option("--action", bias.action, "probed action")->capture_default_str();
  cmd_bias->add_option("--tol", bias.tol, "robust-VI tolerance for the fixed Q")
      ->capture_default_str();
  cmd_bias->add_option("--baseline", bias.baseline_file,
                       "baseline JSON supplying the fixed Q (default: solve Q*)");
  cmd_bias->add_option("--out", bias.out, "output CSV path")->required();

  CompareOptions compare;
  auto* cmd_cmp = app.add_subcommand(
      "compare-mlmc", "T-MLMC vs effectively-untruncated MLMC on shared seeds (CSV out)");
  compare.train.common.attach(cmd_cmp);
  cmd_cmp->add_option("--T", compare.train.iterations, "iterations per run")
      ->capture_default_str();
  cmd_cmp->add_option("--runs", compare.train.runs, "independent replications")
      ->capture_default_str();
  cmd_cmp->add_option("--beta", compare.train.beta, "constant stepsize")->capture_default_str();
  cmd_cmp->add_option("--nmax", compare.train.nmax, "T-MLMC threshold")->capture_default_str();
  cmd_cmp->add_option("--vanilla-nmax", compare.vanilla_nmax, "comparison threshold")
      ->capture_default_str();
  cmd_cmp->add_option("--eval-every", compare.train.eval_every,
                      "evaluation cadence (default T/100)");
  cmd_cmp->add_option("--eval-tol", compare.train.eval_tol, "policy-evaluation tolerance")
      ->capture_default_str();
  cmd_cmp->add_option("--out", compare.train.out, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_base->parsed()) return cmd_baseline(baseline);
    if (cmd_tr->parsed()) return cmd_train(train);
    if (cmd_bias->parsed()) return cmd_bias_study(bias);
    if (cmd_cmp->parsed()) return cmd_compare_mlmc(compare);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
