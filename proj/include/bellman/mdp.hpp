#pragma once

#include <vector>

#include "bellman/types.hpp"

namespace bellman {

/// Finite discounted MDP with explicit transition tensor and mean rewards.
/// transition[a] is num_states x num_states with rows summing to one;
/// reward_mean is num_actions x num_states; init_dist sums to one.
struct TabularMDP {
  StateAlphabet states;
  int num_actions = 0;
  std::vector<Eigen::MatrixXd> transition;
  Eigen::MatrixXd reward_mean;
  Eigen::VectorXd init_dist;
  double gamma = 0.0;

  int num_states() const { return states.size(); }
  void validate() const;
};

/// V^pi(q)(s) = sum_a pi(a|s) q(a, s). Only actions with positive mass are
/// evaluated, so q need not be defined off the policy support.
double value_under_policy(const QFunction& q, const Policy& pi, int s);

/// Y0 + gamma * V^pi(q)(S1).
double bellman_target(const QFunction& q, const Policy& pi, const Transition& t,
                      double gamma);

/// Exact Q-values under pi via one dense LU solve of the Bellman system.
/// Returned matrix is num_actions x num_states.
Eigen::MatrixXd tabular_q_values(const TabularMDP& mdp, const Policy& pi);

/// As tabular_q_values, wrapped as an evaluable QFunction. The result
/// satisfies the Bellman fixed-point equation to 1e-10 (verified internally).
QFunction tabular_q_solve(const TabularMDP& mdp, const Policy& pi);

/// Discounted state-action occupancy ratio between target and behavior
/// policies, with values clipped at `truncation`.
struct OccupancyRatio {
  Eigen::MatrixXd value;    // (a, s)
  Eigen::MatrixXd clipped;  // 1.0 where truncation was applied
};

OccupancyRatio tabular_occupancy_ratio(const TabularMDP& mdp, const Policy& pi,
                                       const Policy& behavior, double truncation);

}  // namespace bellman
