#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bellman/mdp.hpp"

namespace bellman {

/// A/B-test data-generating process over the 3^4 customer-state grid
/// (engagement, churn risk, tenure, overlap), one observed transition per
/// unit under static treatment assignment.
struct SimConfig {
  int n = 1000;
  double gamma = 0.8;
  double beta = 0.0;  // overlap parameter in [0, 1]
  double treat_prob = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SimTruth {
  double true_ate = 0.0;
  double psi_treated = 0.0;
  double psi_control = 0.0;
  Eigen::MatrixXd q_values;  // (a, s) under the arm-a policy
};

/// The 81-state alphabet (four trinary coordinates).
StateAlphabet dgp_alphabet();

/// Closed-form transition tensor and Bernoulli mean rewards implied by the
/// state update rules; init vectors are normalized to sum to one.
TabularMDP analytic_mdp(const SimConfig& cfg);

TransitionDataset generate_dataset(const SimConfig& cfg);

/// Exact long-term ATE and per-arm values from the tabular solve.
SimTruth oracle_truth(const SimConfig& cfg);

/// mt19937_64 with hand-rolled uniform/categorical conversions, so generated
/// datasets are byte-stable across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }
  double uniform() {  // [0, 1), 53-bit resolution
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  bool bernoulli(double p) { return uniform() < p; }
  int categorical(std::span<const double> probs);

 private:
  std::mt19937_64 gen_;
};

}  // namespace bellman
