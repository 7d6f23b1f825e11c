#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bellman/types.hpp"

namespace bellman {

/// Configuration for the pluggable least-squares backends.
struct RegressorSpec {
  enum class Backend { TabularMean, RidgeFeatures, BoostedTrees };

  Backend backend = Backend::TabularMean;
  double ridge_lambda = 0.0;  // RidgeFeatures

  // BoostedTrees
  int tree_depth = 3;
  int tree_rounds = 50;
  double learning_rate = 0.1;
  int max_leaves = 0;  // 0 = limited by depth only
  double min_leaf_weight = 20.0;

  void validate() const;

  static RegressorSpec tabular_mean();
  static RegressorSpec ridge(double lambda);
  static RegressorSpec boosted_trees(int depth, int rounds, double learning_rate,
                                     double min_leaf_weight = 20.0,
                                     int max_leaves = 0);
};

/// Single regression tree with axis-aligned splits, stored flat.
struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
    int leaf_ordinal = -1;
  };
  std::vector<Node> nodes;
  int num_leaves = 0;

  int leaf_of(std::span<const double> x) const;
  double predict(std::span<const double> x) const;
};

/// Additive model of regression trees fit to squared-error residuals.
class BoostedTreesModel {
 public:
  BoostedTreesModel(double base_value, double learning_rate,
                    std::vector<RegressionTree> trees)
      : base_value_(base_value),
        learning_rate_(learning_rate),
        trees_(std::move(trees)) {}

  double predict(std::span<const double> x) const;
  double base_value() const { return base_value_; }
  double learning_rate() const { return learning_rate_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  int total_leaves() const;

 private:
  double base_value_ = 0.0;
  double learning_rate_ = 0.1;
  std::vector<RegressionTree> trees_;
};

/// Immutable fitted regressor; predict is pure. Cheap to copy.
class FittedRegressor {
 public:
  class Impl;

  FittedRegressor() = default;  // unfit; predict throws
  double predict(std::span<const double> x) const;
  double in_sample_mse() const;
  /// Set when a lambda=0 ridge system was rank deficient and solved by
  /// minimum-norm least squares.
  bool rank_deficient() const;
  /// Non-null only for the boosted-trees backend.
  const BoostedTreesModel* trees() const;

  explicit FittedRegressor(std::shared_ptr<const Impl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<const Impl> impl_;
};

class FittedRegressor::Impl {
 public:
  virtual ~Impl() = default;
  virtual double predict(std::span<const double> x) const = 0;
  virtual double in_sample_mse() const = 0;
  virtual bool rank_deficient() const { return false; }
  virtual const BoostedTreesModel* trees() const { return nullptr; }
};

/// Weighted least-squares fit within the backend's class. X is n x d (one row
/// per observation); weights default to one.
FittedRegressor fit_least_squares(const RegressorSpec& spec,
                                  const Eigen::MatrixXd& X,
                                  std::span<const double> y,
                                  std::span<const double> weights = {});

/// Right-continuous non-decreasing step function. With L levels there are
/// L-1 breakpoints; evaluation below the first breakpoint takes the first
/// level and above the last takes the last (histogram-bin clamping).
class StepFunction {
 public:
  StepFunction() : levels_{0.0}, level_weights_{0.0} {}
  StepFunction(std::vector<double> breakpoints, std::vector<double> levels,
               std::vector<double> level_weights = {});

  double operator()(double x) const { return levels_[level_index(x)]; }
  int level_index(double x) const;
  int num_levels() const { return static_cast<int>(levels_.size()); }
  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& levels() const { return levels_; }
  const std::vector<double>& level_weights() const { return level_weights_; }

  static StepFunction identity_on(std::span<const double> values);

  std::string to_json() const;
  static StepFunction from_json(const std::string& text);

 private:
  std::vector<double> breakpoints_;     // strictly increasing
  std::vector<double> levels_;          // non-decreasing
  std::vector<double> level_weights_;   // pooled sample weight per level
};

/// Exact L2 isotonic regression by pool-adjacent-violators, then greedy
/// merging of adjacent levels until every pooled weight reaches
/// min_pool_weight. Ties in x are pre-pooled by weighted mean.
StepFunction pava_isotonic(std::span<const double> x, std::span<const double> y,
                           std::span<const double> w, double min_pool_weight);

}  // namespace bellman
