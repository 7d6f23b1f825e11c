#pragma once

#include <cstdint>
#include <string>

#include "bellman/estimators.hpp"
#include "bellman/fqi.hpp"

namespace bellman {

/// End-to-end estimation driver shared by the CLI, the experiment harness,
/// and the Python bindings. Nuisance Q-functions are cross-fitted over
/// `folds` folds (1 disables cross-fitting); the representer M-estimation
/// honors the same fold masks.
struct PipelineOptions {
  double gamma = 0.8;
  int folds = 5;
  int bootstrap = 0;  // >0 switches plugin-calibrated CIs to the percentile bootstrap
  double level = 0.95;
  std::uint64_t seed = 0;
  RegressorSpec regressor = RegressorSpec::boosted_trees(3, 30, 0.3);
  double truncation = 1e4;
  double ridge_lambda = -1.0;  // representer default 1e-6 * n
  double fqi_tol = 1e-5;
  int fqi_max_iters = 0;
  CalibrationConfig calibration;

  /// "ate" contrasts the two deterministic arm policies; "policy-value"
  /// evaluates the single deterministic arm `arm`.
  std::string estimand = "ate";
  int arm = 1;

  /// drl-robust only: tie the reward regression to T(q_hat), collapsing the
  /// extra correction term.
  bool robust_tie_reward = false;
};

extern const std::vector<std::string> kEstimatorMethods;

bool is_known_method(const std::string& method);

/// method is one of kEstimatorMethods:
/// plugin-calibrated | drl-semi | drl-robust | drl-nonparam.
EstimateReport run_estimator(const TransitionDataset& data,
                             const std::string& method,
                             const PipelineOptions& opts);

}  // namespace bellman
