#include "bellman/fqi.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"

namespace bellman {

int FQIConfig::resolved_max_iters() const {
  if (max_iters > 0) return max_iters;
  if (gamma <= 0.0) return 1;
  const int k = static_cast<int>(std::ceil(std::log(tol) / std::log(gamma)));
  return std::min(std::max(k, 1), 200);
}

void FQIConfig::validate() const {
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (max_iters < 0) throw std::invalid_argument("max_iters must be >= 0");
  if (!feature_map.phi) throw std::invalid_argument("feature map is required");
  regressor.validate();
}

std::string FQIResult::diagnostics_json() const {
  nlohmann::json j;
  j["iterations"] = iterations;
  j["final_increment"] = final_increment;
  j["converged"] = converged;
  j["increments"] = increments;
  return j.dump();
}

FQIResult fitted_q_iteration(const TransitionDataset& data, const Policy& pi,
                             const FQIConfig& cfg, std::span<const double> weights) {
  cfg.validate();
  if (!weights.empty() && weights.size() != static_cast<std::size_t>(data.n()))
    throw std::invalid_argument("weight length mismatch");
  const int n = data.n();
  const int na = data.num_actions();
  const int d = cfg.feature_map.dim;

  Eigen::MatrixXd x0(n, d);
  for (int i = 0; i < n; ++i)
    x0.row(i) = cfg.feature_map(data[i].a0, data[i].s0).transpose();

  // Features of (a', S1) for every policy-supported action, plus pi masses.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x1(
      static_cast<Eigen::Index>(n) * na, d);
  Eigen::MatrixXd pi1 = Eigen::MatrixXd::Zero(n, na);
  if (cfg.gamma > 0.0) {
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < na; ++a) {
        const double p = pi.prob(a, data[i].s1);
        pi1(i, a) = p;
        if (p > 0.0)
          x1.row(static_cast<Eigen::Index>(i) * na + a) =
              cfg.feature_map(a, data[i].s1).transpose();
      }
    }
  }

  const double total_w =
      weights.empty() ? static_cast<double>(n)
                      : std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total_w > 0.0)) throw std::invalid_argument("weights sum to zero");

  FQIResult result;
  std::vector<double> q_prev(static_cast<std::size_t>(n), 0.0);  // q^(0) = 0
  std::vector<double> v_next(static_cast<std::size_t>(n), 0.0);
  std::vector<double> targets(static_cast<std::size_t>(n));
  const int max_iters = cfg.resolved_max_iters();

  for (int k = 0; k < max_iters; ++k) {
    for (int i = 0; i < n; ++i)
      targets[static_cast<std::size_t>(i)] =
          data[i].y0 + cfg.gamma * v_next[static_cast<std::size_t>(i)];
    FittedRegressor model = fit_least_squares(cfg.regressor, x0, targets, weights);

    double inc2 = 0.0;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd row = x0.row(i);
      const double qi = model.predict(std::span<const double>(row.data(),
                                                              static_cast<std::size_t>(row.size())));
      const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
      const double dq = qi - q_prev[static_cast<std::size_t>(i)];
      inc2 += wi * dq * dq;
      q_prev[static_cast<std::size_t>(i)] = qi;
    }
    const double increment = std::sqrt(inc2 / total_w);
    result.increments.push_back(increment);
    result.iterations = k + 1;
    result.final_increment = increment;
    result.model = model;

    if (cfg.gamma > 0.0) {
      for (int i = 0; i < n; ++i) {
        double v = 0.0;
        for (int a = 0; a < na; ++a) {
          if (pi1(i, a) > 0.0) {
            const double* row = x1.data() +
                (static_cast<Eigen::Index>(i) * na + a) * d;
            v += pi1(i, a) *
                 model.predict(std::span<const double>(row, static_cast<std::size_t>(d)));
          }
        }
        v_next[static_cast<std::size_t>(i)] = v;
      }
    }

    if (increment < cfg.tol) {
      result.converged = true;
      break;
    }
    if (cfg.gamma == 0.0) {
      result.converged = true;  // single regression solves the gamma=0 case
      break;
    }
  }

  const FittedRegressor final_model = result.model;
  const FeatureMap fmap = cfg.feature_map;
  result.q = QFunction(QFunction::Kind::Regressor, [final_model, fmap](int a, int s) {
    Eigen::VectorXd x = fmap(a, s);
    return final_model.predict(std::span<const double>(x.data(),
                                                       static_cast<std::size_t>(x.size())));
  });
  return result;
}

}  // namespace bellman
