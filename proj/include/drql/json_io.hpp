#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "drql/core.hpp"
#include "drql/robustdp.hpp"

namespace drql {

/// MDP JSON schema: num_states, num_actions, gamma, r_max, transition
/// ([s][a][s']), reward_support, reward_dist ([s][a][k]).
inline nlohmann::json mdp_to_json(const TabularMDP& mdp) {
  nlohmann::json j;
  j["num_states"] = mdp.num_states;
  j["num_actions"] = mdp.num_actions;
  j["gamma"] = mdp.gamma;
  j["r_max"] = mdp.r_max;
  j["reward_support"] = mdp.reward_support;
  nlohmann::json trans = nlohmann::json::array();
  nlohmann::json rew = nlohmann::json::array();
  for (int s = 0; s < mdp.num_states; ++s) {
    nlohmann::json ts = nlohmann::json::array();
    nlohmann::json rs = nlohmann::json::array();
    for (int a = 0; a < mdp.num_actions; ++a) {
      const auto trow = mdp.transition_row(s, a);
      const auto rrow = mdp.reward_row(s, a);
      ts.push_back(std::vector<double>(trow.begin(), trow.end()));
      rs.push_back(std::vector<double>(rrow.begin(), rrow.end()));
    }
    trans.push_back(std::move(ts));
    rew.push_back(std::move(rs));
  }
  j["transition"] = std::move(trans);
  j["reward_dist"] = std::move(rew);
  return j;
}

inline TabularMDP mdp_from_json(const nlohmann::json& j) {
  const int S = j.at("num_states").get<int>();
  const int A = j.at("num_actions").get<int>();
  const auto support = j.at("reward_support").get<std::vector<double>>();
  std::vector<double> transition;
  std::vector<double> reward_dist;
  transition.reserve(static_cast<std::size_t>(S) * A * S);
  reward_dist.reserve(static_cast<std::size_t>(S) * A * support.size());
  const auto& tj = j.at("transition");
  const auto& rj = j.at("reward_dist");
  if (static_cast<int>(tj.size()) != S || static_cast<int>(rj.size()) != S)
    throw std::invalid_argument("mdp_from_json: state dimension mismatch");
  for (int s = 0; s < S; ++s) {
    if (static_cast<int>(tj[s].size()) != A || static_cast<int>(rj[s].size()) != A)
      throw std::invalid_argument("mdp_from_json: action dimension mismatch");
    for (int a = 0; a < A; ++a) {
      const auto trow = tj[s][a].get<std::vector<double>>();
      const auto rrow = rj[s][a].get<std::vector<double>>();
      if (static_cast<int>(trow.size()) != S || rrow.size() != support.size())
        throw std::invalid_argument("mdp_from_json: row length mismatch");
      transition.insert(transition.end(), trow.begin(), trow.end());
      reward_dist.insert(reward_dist.end(), rrow.begin(), rrow.end());
    }
  }
  return TabularMDP(S, A, std::move(transition), support, std::move(reward_dist),
                    j.at("gamma").get<double>(), j.at("r_max").get<double>());
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

/// Baseline JSON: the converged robust Q*, V*, greedy policy, and solver
/// metadata. Consumed by `train --baseline` for Q-gap tracking.
inline nlohmann::json baseline_to_json(const TabularMDP& mdp, const UncertaintySpec& spec,
                                       const ValueIterationResult& vi) {
  nlohmann::json j;
  j["divergence"] = to_string(spec.divergence);
  j["sigma"] = spec.sigma;
  j["gamma"] = mdp.gamma;
  j["num_states"] = mdp.num_states;
  j["num_actions"] = mdp.num_actions;
  j["iterations"] = vi.iterations;
  j["residual"] = vi.residual;
  nlohmann::json q = nlohmann::json::array();
  for (int s = 0; s < vi.q.num_states; ++s) {
    const auto row = vi.q.row(s);
    q.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["q"] = std::move(q);
  j["v"] = value_vector(vi.q);
  j["policy"] = greedy_policy(vi.q).action;
  return j;
}

inline QTable q_from_baseline_json(const nlohmann::json& j) {
  const int S = j.at("num_states").get<int>();
  const int A = j.at("num_actions").get<int>();
  QTable q(S, A);
  const auto& rows = j.at("q");
  if (static_cast<int>(rows.size()) != S)
    throw std::invalid_argument("baseline json: q row count mismatch");
  for (int s = 0; s < S; ++s) {
    const auto row = rows[s].get<std::vector<double>>();
    if (static_cast<int>(row.size()) != A)
      throw std::invalid_argument("baseline json: q column count mismatch");
    for (int a = 0; a < A; ++a) q.at(s, a) = row[a];
  }
  return q;
}

}  // namespace drql
