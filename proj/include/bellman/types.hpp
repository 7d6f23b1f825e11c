#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace bellman {

/// Thrown when a linear solve or optimization is numerically unusable
/// (singular system, overlap violation with no truncation, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Registry of discrete states. States are integer codes 0..size()-1; each
/// code carries an integer coordinate tuple used by feature-based regressors.
/// Grid alphabets enumerate a full mixed-radix product of coordinate ranges.
class StateAlphabet {
 public:
  StateAlphabet() = default;

  static StateAlphabet grid(std::vector<int> dims);
  static StateAlphabet indexed(int num_states);

  int size() const { return static_cast<int>(coords_.size()); }
  int coord_dim() const {
    return coords_.empty() ? 0 : static_cast<int>(coords_.front().size());
  }
  std::span<const int> coords(int code) const {
    require(code);
    return coords_[static_cast<std::size_t>(code)];
  }
  /// Inverse of coords() for grid alphabets.
  int code_of(std::span<const int> coords) const;
  const std::vector<int>& grid_dims() const { return dims_; }
  bool is_grid() const { return !dims_.empty(); }

  bool contains(int code) const { return code >= 0 && code < size(); }
  void require(int code) const {
    if (!contains(code))
      throw std::domain_error("state code " + std::to_string(code) +
                              " outside alphabet of size " + std::to_string(size()));
  }

 private:
  std::vector<std::vector<int>> coords_;
  std::vector<int> dims_;  // nonempty only for grid alphabets
};

/// One observed transition (S0, A0, Y0, S1) with integer-coded states.
struct Transition {
  int s0 = 0;
  int a0 = 0;
  double y0 = 0.0;
  int s1 = 0;
};

/// Immutable ordered collection of transitions over a shared state alphabet.
class TransitionDataset {
 public:
  TransitionDataset(StateAlphabet alphabet, int num_actions,
                    std::vector<Transition> records);

  int n() const { return static_cast<int>(records_.size()); }
  const Transition& operator[](int i) const {
    return records_[static_cast<std::size_t>(i)];
  }
  const std::vector<Transition>& records() const { return records_; }
  const StateAlphabet& alphabet() const { return alphabet_; }
  int num_actions() const { return num_actions_; }

  TransitionDataset subset(std::span<const int> indices) const;

 private:
  StateAlphabet alphabet_;
  int num_actions_ = 0;
  std::vector<Transition> records_;
};

/// Conditional action distribution pi(a | s) over a finite action set.
class Policy {
 public:
  Policy() = default;

  static Policy deterministic(int action, int num_actions);
  static Policy uniform(int num_actions);
  /// probs is num_states x num_actions; rows must sum to one.
  static Policy tabular(Eigen::MatrixXd probs);
  /// Same action distribution at every state.
  static Policy state_independent(Eigen::VectorXd probs);

  double prob(int a, int s) const { return prob_(a, s); }
  int num_actions() const { return num_actions_; }

  /// Checks sum-to-one (1e-12) and nonnegativity at every state of the alphabet.
  void validate(const StateAlphabet& states) const;

 private:
  Policy(int num_actions, std::function<double(int, int)> prob)
      : num_actions_(num_actions), prob_(std::move(prob)) {}

  int num_actions_ = 0;
  std::function<double(int, int)> prob_;
};

/// Evaluable map (a, s) -> R. Evaluation is pure; instances are immutable
/// and cheap to copy (shared callable underneath).
class QFunction {
 public:
  enum class Kind { Tabular, Regressor, Calibrated };

  QFunction() : QFunction(Kind::Tabular, [](int, int) { return 0.0; }) {}
  QFunction(Kind kind, std::function<double(int, int)> eval)
      : kind_(kind), eval_(std::make_shared<std::function<double(int, int)>>(
                         std::move(eval))) {}

  double operator()(int a, int s) const { return (*eval_)(a, s); }
  Kind kind() const { return kind_; }

  static QFunction zero() { return QFunction(); }
  /// values is num_actions x num_states; evaluation bounds-checked.
  static QFunction tabular(Eigen::MatrixXd values);

 private:
  Kind kind_ = Kind::Tabular;
  std::shared_ptr<const std::function<double(int, int)>> eval_;
};

/// 64-bit SplitMix step; used to derive independent per-replicate seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace bellman
