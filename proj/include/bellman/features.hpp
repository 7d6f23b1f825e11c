#pragma once

#include <functional>

#include "bellman/types.hpp"

namespace bellman {

/// Feature map phi: (a, s) -> R^dim used by linear representers, FQI
/// regressors, and second-stage regressions.
struct FeatureMap {
  enum class Provenance { Explicit, TreeLeaves };

  int dim = 0;
  Provenance provenance = Provenance::Explicit;
  std::function<Eigen::VectorXd(int a, int s)> phi;

  Eigen::VectorXd operator()(int a, int s) const { return phi(a, s); }

  /// Indicator basis saturating the full state-action grid; dim = A * M.
  static FeatureMap one_hot_grid(int num_actions, int num_states);
  /// Indicators of the (A0, S0) cells present in the data; unobserved cells
  /// map to the zero vector. dim = number of distinct observed cells.
  static FeatureMap one_hot_observed(const TransitionDataset& data);
  /// [a, state coordinates...]; dim = 1 + coord_dim.
  static FeatureMap action_and_coords(const StateAlphabet& states);
  /// Raw [a, s] codes; pairs naturally with the tabular-mean backend.
  static FeatureMap state_action_codes();
};

}  // namespace bellman
