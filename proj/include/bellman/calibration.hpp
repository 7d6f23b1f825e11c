#pragma once

#include <string>
#include <vector>

#include "bellman/mdp.hpp"
#include "bellman/regression.hpp"

namespace bellman {

struct CalibrationConfig {
  int max_iters = 50;
  /// <= 0 picks 1/n.
  double tol = 0.0;
  double min_pool_weight = 20.0;
  /// After the isotonic loop converges, re-solve the per-level values exactly
  /// so the empirical Bellman identity holds to machine precision at the
  /// pooled-level resolution (adjacent levels are merged if the solve breaks
  /// monotonicity).
  bool exact_refinement = true;
};

struct CalibrationReport {
  int iterations = 0;
  double final_increment = 0.0;
  bool converged = false;
  double max_orthogonality = 0.0;
  int levels = 0;
};

/// Monotone step-function recalibration of a base Q-function:
/// evaluate(a, s) = f(base(a, s)).
class CalibratedQ {
 public:
  CalibratedQ() = default;
  CalibratedQ(QFunction base, StepFunction calibrator)
      : base_(std::move(base)), calibrator_(std::move(calibrator)) {}

  double operator()(int a, int s) const { return calibrator_(base_(a, s)); }
  const QFunction& base() const { return base_; }
  const StepFunction& calibrator() const { return calibrator_; }
  QFunction as_qfunction() const;

  std::string to_json() const;

 private:
  QFunction base_;
  StepFunction calibrator_;
};

struct CalibrationResult {
  CalibratedQ calibrated;
  CalibrationReport report;
};

/// Fitted Q-calibration: fixed-point iteration of isotonic regressions of the
/// Bellman target on the base scores, composed with the base Q-function.
CalibrationResult fitted_q_calibration(const TransitionDataset& data,
                                       const Policy& pi, const QFunction& base,
                                       double gamma,
                                       const CalibrationConfig& cfg = {},
                                       std::span<const double> weights = {});

/// Cross-fitted variant: one shared calibrator fit on pooled out-of-fold
/// scores, composed with each fold's base. fold_of_record[i] must index into
/// fold_bases for every record.
struct CrossFittedCalibration {
  std::vector<CalibratedQ> folds;
  std::vector<int> fold_of_record;
  CalibrationReport report;

  double value_for_record(int record, int a, int s) const {
    return folds[static_cast<std::size_t>(fold_of_record[static_cast<std::size_t>(record)])](a, s);
  }
};

CrossFittedCalibration cross_fitted_calibration(
    const TransitionDataset& data, const Policy& pi,
    const std::vector<int>& fold_of_record,
    const std::vector<QFunction>& fold_bases, double gamma,
    const CalibrationConfig& cfg = {}, std::span<const double> weights = {});

/// Max over calibrated levels of |sum of temporal-difference residuals| / n;
/// the finite-sample certificate that the empirical Bellman identity holds.
double check_bellman_orthogonality(const TransitionDataset& data,
                                   const Policy& pi, const CalibratedQ& qstar,
                                   double gamma,
                                   std::span<const double> weights = {});

double check_bellman_orthogonality(const TransitionDataset& data,
                                   const Policy& pi,
                                   const CrossFittedCalibration& qstar,
                                   double gamma,
                                   std::span<const double> weights = {});

namespace detail {

/// Precomputed evaluations feeding the calibration loop; shared by the
/// public entry points and the calibration bootstrap.
struct CalibArrays {
  std::vector<double> x;        // base score at (A0i, S0i)
  std::vector<double> y;        // Y0i
  Eigen::MatrixXd next_score;   // base score at (a', S1i), n x A
  Eigen::MatrixXd pi_next;      // pi(a' | S1i), n x A
};

CalibArrays build_calib_arrays(const TransitionDataset& data, const Policy& pi,
                               const std::vector<int>* fold_of_record,
                               const std::vector<QFunction>& bases);

StepFunction calibrate_arrays(const CalibArrays& arrays,
                              std::span<const double> weights, double gamma,
                              const CalibrationConfig& cfg,
                              CalibrationReport* report);

double orthogonality_from_arrays(const CalibArrays& arrays,
                                 const StepFunction& f,
                                 std::span<const double> weights, double gamma);

}  // namespace detail

}  // namespace bellman
