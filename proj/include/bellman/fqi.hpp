#pragma once

#include <string>
#include <vector>

#include "bellman/features.hpp"
#include "bellman/mdp.hpp"
#include "bellman/regression.hpp"

namespace bellman {

struct FQIConfig {
  double gamma = 0.9;
  /// 0 derives ceil(log(tol)/log(gamma)), capped at 200.
  int max_iters = 0;
  double tol = 1e-6;
  RegressorSpec regressor;
  FeatureMap feature_map;

  int resolved_max_iters() const;
  void validate() const;
};

struct FQIResult {
  QFunction q;
  FittedRegressor model;              // final-iteration regressor
  int iterations = 0;
  double final_increment = 0.0;
  bool converged = false;
  std::vector<double> increments;     // per-iteration ||q_k+1 - q_k||_{P_n}

  std::string diagnostics_json() const;
};

/// Iterative regression solution of the Bellman equation: each iteration
/// regresses Y0 + gamma V^pi(q_k)(S1) on features of (A0, S0). Optional
/// per-record weights feed straight into the weighted regression.
FQIResult fitted_q_iteration(const TransitionDataset& data, const Policy& pi,
                             const FQIConfig& cfg,
                             std::span<const double> weights = {});

}  // namespace bellman
