#pragma once

#include <functional>
#include <optional>
#include <span>
#include <utility>

#include "bellman/features.hpp"
#include "bellman/types.hpp"

namespace bellman {

/// Target linear functional psi = E[m(S0, A0, q)] with q -> m(s, a, q) linear.
///
/// Policy-value and ATE-contrast functionals are point-evaluation
/// combinations m(s, a, q) = sum_a' c(a'|s) q(a', s); eval_coefficients
/// exposes the coefficients so callers can vectorize over bases or levels.
class FunctionalSpec {
 public:
  enum class Kind { PolicyValue, AteContrast, CustomLinear };

  using QEval = std::function<double(int a, int s)>;

  FunctionalSpec() = default;  // empty; assign a factory result before use

  static FunctionalSpec policy_value(Policy pi);
  /// m(s, a, q) = q(treated, s) - q(control, s) applied to a common q.
  static FunctionalSpec ate_contrast(int treated_arm, int control_arm,
                                     int num_actions);
  static FunctionalSpec custom_linear(
      int num_actions, std::function<double(int s, int a, const QEval&)> m);

  Kind kind() const { return kind_; }
  int num_actions() const { return num_actions_; }

  double apply(int s, int a, const QEval& q) const;

  /// Fills coefs (size num_actions) with c(a'|s) when m is a point-evaluation
  /// combination; returns false for custom functionals.
  bool eval_coefficients(int s, int a, std::span<double> coefs) const;

  /// Component-wise application to a feature basis: m(s, a, phi_j) for all j.
  Eigen::VectorXd apply_basis(int s, int a, const FeatureMap& phi) const;

  const Policy& policy() const { return policy_; }
  std::pair<int, int> arms() const { return {treated_, control_}; }

 private:
  Kind kind_ = Kind::PolicyValue;
  int num_actions_ = 0;
  Policy policy_;            // PolicyValue
  int treated_ = 1;          // AteContrast
  int control_ = 0;
  std::function<double(int, int, const QEval&)> custom_;
};

}  // namespace bellman
