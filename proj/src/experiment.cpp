#include "bellman/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>

#include "bellman/parallel.hpp"
#include "json.hpp"

namespace bellman {

void ExperimentConfig::validate() const {
  if (gammas.empty() || betas.empty() || ns.empty())
    throw std::invalid_argument("experiment grid must be nonempty");
  if (methods.empty()) throw std::invalid_argument("experiment needs at least one method");
  for (const std::string& m : methods)
    if (!is_known_method(m)) throw std::invalid_argument("unknown method: " + m);
  if (reps < 1) throw std::invalid_argument("reps must be >= 1");
  for (double g : gammas)
    if (g < 0.0 || g >= 1.0) throw std::invalid_argument("gamma must lie in [0, 1)");
  for (double b : betas)
    if (b < 0.0 || b > 1.0) throw std::invalid_argument("beta must lie in [0, 1]");
  for (int n : ns)
    if (n < 1) throw std::invalid_argument("n must be >= 1");
}

namespace {

struct Cell {
  double gamma;
  double beta;
  int n;
  double truth;
};

}  // namespace

ExperimentResult monte_carlo_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  std::vector<Cell> cells;
  std::map<std::pair<double, double>, double> truth_cache;
  for (double gamma : cfg.gammas) {
    for (double beta : cfg.betas) {
      const auto key = std::make_pair(gamma, beta);
      if (!truth_cache.count(key)) {
        SimConfig sc;
        sc.n = 1;
        sc.gamma = gamma;
        sc.beta = beta;
        sc.treat_prob = cfg.treat_prob;
        truth_cache[key] = oracle_truth(sc).true_ate;
      }
      for (int n : cfg.ns) cells.push_back({gamma, beta, n, truth_cache[key]});
    }
  }

  const int num_methods = static_cast<int>(cfg.methods.size());
  const int tasks = static_cast<int>(cells.size()) * cfg.reps;
  std::vector<ExperimentRow> rows(static_cast<std::size_t>(tasks) *
                                  static_cast<std::size_t>(num_methods));

  parallel_for(tasks, [&](int task) {
    const int cell_idx = task / cfg.reps;
    const int rep = task % cfg.reps;
    const Cell& cell = cells[static_cast<std::size_t>(cell_idx)];
    const std::uint64_t rep_seed = cfg.seed ^ splitmix64(static_cast<std::uint64_t>(rep));

    SimConfig sc;
    sc.n = cell.n;
    sc.gamma = cell.gamma;
    sc.beta = cell.beta;
    sc.treat_prob = cfg.treat_prob;
    sc.seed = rep_seed;
    const TransitionDataset data = generate_dataset(sc);

    PipelineOptions popts = cfg.pipeline;
    popts.gamma = cell.gamma;
    popts.seed = rep_seed;

    for (int mi = 0; mi < num_methods; ++mi) {
      ExperimentRow& row =
          rows[static_cast<std::size_t>(task) * num_methods + static_cast<std::size_t>(mi)];
      row.method = cfg.methods[static_cast<std::size_t>(mi)];
      row.gamma = cell.gamma;
      row.beta = cell.beta;
      row.n = cell.n;
      row.rep = rep;
      row.truth = cell.truth;
      row.seed = rep_seed;
      try {
        const EstimateReport rep_out = run_estimator(data, row.method, popts);
        row.ok = true;
        row.estimate = rep_out.estimate;
        row.se = rep_out.se;
        row.ci_lo = rep_out.ci_lo;
        row.ci_hi = rep_out.ci_hi;
        row.covered = rep_out.ci_lo <= cell.truth && cell.truth <= rep_out.ci_hi;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  });

  ExperimentResult out;
  out.rows = std::move(rows);

  std::map<std::tuple<std::string, double, double, int>, std::vector<const ExperimentRow*>>
      groups;
  for (const ExperimentRow& row : out.rows)
    groups[{row.method, row.gamma, row.beta, row.n}].push_back(&row);
  for (const auto& [key, group] : groups) {
    ExperimentSummary s;
    s.method = std::get<0>(key);
    s.gamma = std::get<1>(key);
    s.beta = std::get<2>(key);
    s.n = std::get<3>(key);
    s.truth = group.front()->truth;
    double sum = 0.0, sum_se = 0.0;
    int covered = 0;
    std::vector<double> estimates;
    for (const ExperimentRow* row : group) {
      if (!row->ok) {
        ++s.reps_failed;
        continue;
      }
      ++s.reps_ok;
      estimates.push_back(row->estimate);
      sum += row->estimate;
      sum_se += row->se;
      covered += row->covered ? 1 : 0;
    }
    if (s.reps_ok > 0) {
      const double mean = sum / s.reps_ok;
      s.mean_bias = mean - s.truth;
      s.mean_se = sum_se / s.reps_ok;
      s.coverage = static_cast<double>(covered) / s.reps_ok;
      double ss = 0.0;
      for (double e : estimates) ss += (e - mean) * (e - mean);
      s.empirical_sd = s.reps_ok > 1 ? std::sqrt(ss / (s.reps_ok - 1)) : 0.0;
    }
    out.summaries.push_back(std::move(s));
  }
  return out;
}

std::string rows_csv(const std::vector<ExperimentRow>& rows) {
  std::string out = "method,gamma,beta,n,rep,estimate,se,ci_lo,ci_hi,covered,truth,seed\n";
  char buf[512];
  for (const ExperimentRow& r : rows) {
    if (r.ok) {
      std::snprintf(buf, sizeof(buf),
                    "%s,%.6g,%.6g,%d,%d,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%llu\n",
                    r.method.c_str(), r.gamma, r.beta, r.n, r.rep, r.estimate, r.se,
                    r.ci_lo, r.ci_hi, r.covered ? 1 : 0, r.truth,
                    static_cast<unsigned long long>(r.seed));
    } else {
      std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%d,%d,NA,NA,NA,NA,NA,%.17g,%llu\n",
                    r.method.c_str(), r.gamma, r.beta, r.n, r.rep, r.truth,
                    static_cast<unsigned long long>(r.seed));
    }
    out += buf;
  }
  return out;
}

std::string summaries_csv(const std::vector<ExperimentSummary>& summaries) {
  std::string out =
      "method,gamma,beta,n,reps_ok,reps_failed,truth,mean_bias,empirical_sd,mean_se,"
      "coverage\n";
  char buf[512];
  for (const ExperimentSummary& s : summaries) {
    std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%.6g\n",
                  s.method.c_str(), s.gamma, s.beta, s.n, s.reps_ok, s.reps_failed,
                  s.truth, s.mean_bias, s.empirical_sd, s.mean_se, s.coverage);
    out += buf;
  }
  return out;
}

std::string plot_data_json(const std::vector<ExperimentSummary>& summaries) {
  // One series per (method, beta, n), arrays indexed by gamma.
  std::map<std::tuple<std::string, double, int>, std::vector<const ExperimentSummary*>>
      series;
  for (const ExperimentSummary& s : summaries)
    series[{s.method, s.beta, s.n}].push_back(&s);

  nlohmann::json out = nlohmann::json::array();
  for (auto& [key, group] : series) {
    std::sort(group.begin(), group.end(),
              [](const ExperimentSummary* a, const ExperimentSummary* b) {
                return a->gamma < b->gamma;
              });
    nlohmann::json j;
    j["method"] = std::get<0>(key);
    j["beta"] = std::get<1>(key);
    j["n"] = std::get<2>(key);
    std::vector<double> gammas, bias, sd, se, coverage, truth;
    for (const ExperimentSummary* s : group) {
      gammas.push_back(s->gamma);
      bias.push_back(s->mean_bias);
      sd.push_back(s->empirical_sd);
      se.push_back(s->mean_se);
      coverage.push_back(s->coverage);
      truth.push_back(s->truth);
    }
    j["gamma"] = gammas;
    j["bias"] = bias;
    j["empirical_sd"] = sd;
    j["mean_se"] = se;
    j["coverage"] = coverage;
    j["truth"] = truth;
    out.push_back(j);
  }
  return out.dump(2);
}

}  // namespace bellman
