#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bellman/calibration.hpp"
#include "bellman/features.hpp"
#include "bellman/functional.hpp"
#include "bellman/regression.hpp"

namespace bellman {

/// Estimated Riesz representer alpha and its induced weighting function
/// T(alpha). Per-record arrays are always filled; the global callables are
/// set when a single (non-fold) fit produced the estimate.
struct RieszWeights {
  std::vector<double> weight_at;     // T(alpha)(A0i, S0i)
  std::vector<double> alpha_at;      // alpha(A0i, S0i)
  std::vector<double> v_alpha_next;  // V^pi(alpha)(S1i)

  std::function<double(int a, int s)> weight;
  std::function<double(int a, int s)> alpha;

  Eigen::VectorXd coefficients;  // beta (linear) or level values (dim-reduced)
  std::map<std::string, double> diagnostics;

  void write_csv(const std::string& path) const;
};

/// Riesz representer over a linear feature class, solved in closed form.
/// The inner maximization is realized exactly by a ridge regression of
/// V^pi(alpha)(S1) on phi(A0, S0); the outer quadratic program is one m x m
/// solve. lambda < 0 picks the default 1e-6 * (total weight).
RieszWeights estimate_representer_linear(const TransitionDataset& data,
                                         const Policy& pi,
                                         const FunctionalSpec& functional,
                                         const FeatureMap& features,
                                         double gamma, double lambda = -1.0,
                                         std::span<const double> weights = {},
                                         std::span<const int> folds = {});

/// T_hat(alpha) = alpha - gamma * (regression of V^pi(alpha)(S1) on features).
std::function<double(int, int)> second_stage_regression(
    const TransitionDataset& data, const Policy& pi,
    const std::function<double(int, int)>& alpha, double gamma,
    const FeatureMap& features, const RegressorSpec& spec,
    std::span<const double> weights = {});

/// Dimension-reduced representer over step functions of a calibrated
/// Q-function: an L x L solve on the empirical level-transition matrix.
RieszWeights estimate_representer_dimreduced(const TransitionDataset& data,
                                             const Policy& pi,
                                             const FunctionalSpec& functional,
                                             const CalibratedQ& qstar,
                                             double gamma,
                                             std::span<const double> weights = {});

RieszWeights estimate_representer_dimreduced(const TransitionDataset& data,
                                             const Policy& pi,
                                             const FunctionalSpec& functional,
                                             const CrossFittedCalibration& qstar,
                                             double gamma,
                                             std::span<const double> weights = {});

/// One-hot encoding of the leaf reached in every boosted tree; dim = total
/// leaf count, with exactly one nonzero entry per tree.
FeatureMap tree_leaf_features(const FittedRegressor& model,
                              const FeatureMap& base_features);

}  // namespace bellman
