#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bellman/pipeline.hpp"
#include "bellman/simulation.hpp"

namespace bellman {

/// Monte Carlo grid over (gamma, beta, n) x methods.
struct ExperimentConfig {
  std::vector<double> gammas{0.8};
  std::vector<double> betas{0.0};
  std::vector<int> ns{2000};
  std::vector<std::string> methods{"plugin-calibrated"};
  int reps = 100;
  std::uint64_t seed = 1;
  double treat_prob = 0.25;
  PipelineOptions pipeline;

  void validate() const;
};

/// One estimator run inside one replication. Failed runs carry ok = false and
/// are written as NA rows.
struct ExperimentRow {
  std::string method;
  double gamma = 0.0;
  double beta = 0.0;
  int n = 0;
  int rep = 0;
  bool ok = false;
  std::string error;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool covered = false;
  double truth = 0.0;
  std::uint64_t seed = 0;
};

struct ExperimentSummary {
  std::string method;
  double gamma = 0.0;
  double beta = 0.0;
  int n = 0;
  int reps_ok = 0;
  int reps_failed = 0;
  double truth = 0.0;
  double mean_bias = 0.0;
  double empirical_sd = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;
  std::vector<ExperimentSummary> summaries;
};

/// Runs the grid, reps parallelized with per-rep seeds seed ^ splitmix64(rep).
/// Deterministic for a fixed config, regardless of thread count.
ExperimentResult monte_carlo_experiment(const ExperimentConfig& cfg);

std::string rows_csv(const std::vector<ExperimentRow>& rows);
std::string summaries_csv(const std::vector<ExperimentSummary>& summaries);
/// Bias/SE/coverage arrays indexed by gamma, per (beta, n, method) cell.
std::string plot_data_json(const std::vector<ExperimentSummary>& summaries);

}  // namespace bellman
