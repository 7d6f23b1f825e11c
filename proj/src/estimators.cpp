#include "bellman/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bellman/parallel.hpp"
#include "json.hpp"

namespace bellman {

std::string EstimateReport::to_json(bool include_influence) const {
  nlohmann::json j;
  j["estimate"] = estimate;
  j["se"] = se;
  j["ci"] = {ci_lo, ci_hi};
  j["level"] = level;
  j["method"] = method;
  j["diagnostics"] = diagnostics;
  if (include_influence) j["influence"] = influence;
  return j.dump(2);
}

double eif_variance(std::span<const double> influence) {
  const std::size_t n = influence.size();
  if (n < 2) throw std::invalid_argument("variance needs at least two values");
  double mean = 0.0;
  for (double v : influence) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : influence) ss += (v - mean) * (v - mean);
  const double var = ss / static_cast<double>(n - 1);
  return var / static_cast<double>(n);
}

namespace detail {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("quantile level outside (0,1)");
  // Acklam's rational approximation, |relative error| < 1.2e-9.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > phigh) {
    q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = h - std::floor(h);
  return values[lo] + frac * (values[hi] - values[lo]);
}

EstimateReport drl_core(std::string method, std::span<const double> m_vals,
                        std::span<const double> correction,
                        std::span<const double> weights, double level) {
  const std::size_t n = m_vals.size();
  if (n == 0) throw std::invalid_argument("estimator needs data");
  double sw = 0.0, sw2 = 0.0, acc = 0.0, corr_acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = weights.empty() ? 1.0 : weights[i];
    sw += wi;
    sw2 += wi * wi;
    acc += wi * (m_vals[i] + correction[i]);
    corr_acc += wi * correction[i];
  }
  if (!(sw > 0.0)) throw std::invalid_argument("weights sum to zero");

  EstimateReport rep;
  rep.method = std::move(method);
  rep.level = level;
  rep.estimate = acc / sw;
  rep.influence.resize(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = weights.empty() ? 1.0 : weights[i];
    const double phi = m_vals[i] + correction[i] - rep.estimate;
    rep.influence[i] = phi;
    ss += wi * phi * phi;
  }
  const double denom = sw - sw2 / sw;  // n - 1 under unit weights
  const double var = denom > 0.0 ? ss / denom : 0.0;
  rep.se = std::sqrt(var * sw2) / sw;
  const double z = normal_quantile(0.5 + level / 2.0);
  rep.ci_lo = rep.estimate - z * rep.se;
  rep.ci_hi = rep.estimate + z * rep.se;
  rep.diagnostics["correction_mean"] = corr_acc / sw;
  return rep;
}

}  // namespace detail

namespace {

// Per-record evaluation view over a single or cross-fitted calibrated Q.
struct CalibratedView {
  std::vector<const CalibratedQ*> of_record;

  static CalibratedView single(const CalibratedQ& q, int n) {
    CalibratedView v;
    v.of_record.assign(static_cast<std::size_t>(n), &q);
    return v;
  }
  static CalibratedView cross(const CrossFittedCalibration& q, int n) {
    if (q.folds.empty()) throw std::invalid_argument("empty cross-fitted calibration");
    if (q.fold_of_record.size() != static_cast<std::size_t>(n))
      throw std::invalid_argument("fold assignment length mismatch");
    CalibratedView v;
    v.of_record.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      v.of_record[static_cast<std::size_t>(i)] =
          &q.folds[static_cast<std::size_t>(q.fold_of_record[static_cast<std::size_t>(i)])];
    return v;
  }
};

EstimateReport plugin_core(const TransitionDataset& data, const Policy& pi,
                           const FunctionalSpec& functional,
                           const CalibratedView& view, const RieszWeights& rw,
                           double residual, double gamma,
                           const EstimatorOptions& opts,
                           std::span<const double> weights) {
  const int n = data.n();
  const int na = data.num_actions();
  if (residual > opts.orthogonality_threshold)
    throw std::invalid_argument(
        "calibration certificate failed: orthogonality residual " +
        std::to_string(residual) + " exceeds threshold " +
        std::to_string(opts.orthogonality_threshold));

  std::vector<double> m_vals(static_cast<std::size_t>(n));
  std::vector<double> corr(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Transition& t = data[i];
    const CalibratedQ& q = *view.of_record[static_cast<std::size_t>(i)];
    auto qe = [&q](int a, int s) { return q(a, s); };
    m_vals[static_cast<std::size_t>(i)] = functional.apply(t.s0, t.a0, qe);
    double v = 0.0;
    for (int a = 0; a < na; ++a) {
      const double p = pi.prob(a, t.s1);
      if (p > 0.0) v += p * q(a, t.s1);
    }
    const double td = t.y0 + gamma * v - q(t.a0, t.s0);
    corr[static_cast<std::size_t>(i)] =
        rw.weight_at[static_cast<std::size_t>(i)] * td;
  }

  // The certificate makes the correction vanish; the point estimate is the
  // plain plug-in mean while the influence values keep the weighted TD term.
  EstimateReport rep =
      detail::drl_core("plugin-calibrated", m_vals, corr, weights, opts.level);
  double sw = 0.0, acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    sw += wi;
    acc += wi * m_vals[static_cast<std::size_t>(i)];
  }
  rep.estimate = acc / sw;
  const double z = detail::normal_quantile(0.5 + opts.level / 2.0);
  rep.ci_lo = rep.estimate - z * rep.se;
  rep.ci_hi = rep.estimate + z * rep.se;
  rep.diagnostics["orthogonality_residual"] = residual;
  rep.diagnostics["levels"] = rw.diagnostics.count("levels")
                                  ? rw.diagnostics.at("levels")
                                  : 0.0;
  rep.diagnostics["max_weight"] = rw.diagnostics.count("max_weight")
                                      ? rw.diagnostics.at("max_weight")
                                      : 0.0;
  return rep;
}

}  // namespace

EstimateReport plugin_calibrated(const TransitionDataset& data, const Policy& pi,
                                 const FunctionalSpec& functional,
                                 const CalibratedQ& qstar, double gamma,
                                 const EstimatorOptions& opts,
                                 std::span<const double> weights) {
  const double residual = check_bellman_orthogonality(data, pi, qstar, gamma, weights);
  RieszWeights rw =
      estimate_representer_dimreduced(data, pi, functional, qstar, gamma, weights);
  return plugin_core(data, pi, functional, CalibratedView::single(qstar, data.n()),
                     rw, residual, gamma, opts, weights);
}

EstimateReport plugin_calibrated(const TransitionDataset& data, const Policy& pi,
                                 const FunctionalSpec& functional,
                                 const CrossFittedCalibration& qstar, double gamma,
                                 const EstimatorOptions& opts,
                                 std::span<const double> weights) {
  const double residual = check_bellman_orthogonality(data, pi, qstar, gamma, weights);
  RieszWeights rw =
      estimate_representer_dimreduced(data, pi, functional, qstar, gamma, weights);
  return plugin_core(data, pi, functional, CalibratedView::cross(qstar, data.n()),
                     rw, residual, gamma, opts, weights);
}

namespace {

void require_finite_weights(const std::vector<double>& w) {
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!std::isfinite(w[i]))
      throw NumericalError("non-finite representer weight at record " +
                           std::to_string(i));
}

struct DrlArrays {
  std::vector<double> m_vals;
  std::vector<double> td;
};

DrlArrays drl_arrays(const TransitionDataset& data, const Policy& pi,
                     const FunctionalSpec& functional, const QFunction& q_hat,
                     double gamma) {
  const int n = data.n();
  const int na = data.num_actions();
  DrlArrays arr;
  arr.m_vals.resize(static_cast<std::size_t>(n));
  arr.td.resize(static_cast<std::size_t>(n));
  auto qe = [&q_hat](int a, int s) { return q_hat(a, s); };
  for (int i = 0; i < n; ++i) {
    const Transition& t = data[i];
    arr.m_vals[static_cast<std::size_t>(i)] = functional.apply(t.s0, t.a0, qe);
    double v = 0.0;
    if (gamma > 0.0) {
      for (int a = 0; a < na; ++a) {
        const double p = pi.prob(a, t.s1);
        if (p > 0.0) v += p * q_hat(a, t.s1);
      }
    }
    arr.td[static_cast<std::size_t>(i)] = t.y0 + gamma * v - q_hat(t.a0, t.s0);
  }
  return arr;
}

}  // namespace

EstimateReport drl_semiparametric(const TransitionDataset& data, const Policy& pi,
                                  const FunctionalSpec& functional,
                                  const QFunction& q_hat,
                                  const RieszWeights& weights_hat, double gamma,
                                  const EstimatorOptions& opts,
                                  std::span<const double> weights) {
  const int n = data.n();
  if (weights_hat.weight_at.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("representer weights do not match dataset");
  require_finite_weights(weights_hat.weight_at);

  DrlArrays arr = drl_arrays(data, pi, functional, q_hat, gamma);
  std::vector<double> corr(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    corr[static_cast<std::size_t>(i)] =
        weights_hat.weight_at[static_cast<std::size_t>(i)] *
        arr.td[static_cast<std::size_t>(i)];
  EstimateReport rep =
      detail::drl_core("drl-semi", arr.m_vals, corr, weights, opts.level);
  rep.level = opts.level;
  double max_w = 0.0;
  for (double v : weights_hat.weight_at) max_w = std::max(max_w, std::abs(v));
  rep.diagnostics["max_weight"] = max_w;
  return rep;
}

EstimateReport drl_model_robust(const TransitionDataset& data, const Policy& pi,
                                const FunctionalSpec& functional,
                                const QFunction& q_hat,
                                const RieszWeights& weights_hat,
                                const std::function<double(int, int)>& r_hat,
                                const std::function<double(int, int)>& t_q_hat,
                                double gamma, const EstimatorOptions& opts,
                                std::span<const double> weights) {
  const int n = data.n();
  if (weights_hat.weight_at.size() != static_cast<std::size_t>(n) ||
      weights_hat.alpha_at.size() != static_cast<std::size_t>(n) ||
      weights_hat.v_alpha_next.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("model-robust estimator needs the full representer");
  if (!r_hat || !t_q_hat)
    throw std::invalid_argument("model-robust estimator needs r_hat and t_q_hat");
  require_finite_weights(weights_hat.weight_at);

  DrlArrays arr = drl_arrays(data, pi, functional, q_hat, gamma);
  std::vector<double> corr(static_cast<std::size_t>(n));
  double reward_corr = 0.0, sw = 0.0;
  for (int i = 0; i < n; ++i) {
    const Transition& t = data[i];
    const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    const double w1 = weights_hat.weight_at[static_cast<std::size_t>(i)];
    const double alpha_term =
        weights_hat.alpha_at[static_cast<std::size_t>(i)] -
        gamma * weights_hat.v_alpha_next[static_cast<std::size_t>(i)] - w1;
    const double extra = (r_hat(t.a0, t.s0) - t_q_hat(t.a0, t.s0)) * alpha_term;
    corr[static_cast<std::size_t>(i)] =
        w1 * arr.td[static_cast<std::size_t>(i)] + extra;
    reward_corr += wi * extra;
    sw += wi;
  }
  EstimateReport rep =
      detail::drl_core("drl-robust", arr.m_vals, corr, weights, opts.level);
  rep.diagnostics["reward_correction_mean"] = reward_corr / sw;
  return rep;
}

EstimateReport drl_nonparametric(const TransitionDataset& data, const Policy& pi,
                                 const FunctionalSpec& functional,
                                 const QFunction& q_hat,
                                 const OccupancyRatio& occupancy, double gamma,
                                 const EstimatorOptions& opts,
                                 std::span<const double> weights) {
  const int n = data.n();
  DrlArrays arr = drl_arrays(data, pi, functional, q_hat, gamma);
  std::vector<double> corr(static_cast<std::size_t>(n));
  double sw = 0.0, clipped = 0.0;
  for (int i = 0; i < n; ++i) {
    const Transition& t = data[i];
    const double d = occupancy.value(t.a0, t.s0);
    if (!std::isfinite(d))
      throw NumericalError("non-finite occupancy weight at record " + std::to_string(i));
    corr[static_cast<std::size_t>(i)] = d * arr.td[static_cast<std::size_t>(i)];
    const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    sw += wi;
    if (occupancy.clipped(t.a0, t.s0) != 0.0) clipped += wi;
  }
  EstimateReport rep =
      detail::drl_core("drl-nonparam", arr.m_vals, corr, weights, opts.level);
  rep.diagnostics["clipped_mass_fraction"] = clipped / sw;
  return rep;
}

TabularMDP estimate_empirical_mdp(const TransitionDataset& data, double gamma,
                                  double smoothing) {
  const int m = data.alphabet().size();
  const int na = data.num_actions();
  TabularMDP mdp;
  mdp.states = data.alphabet();
  mdp.num_actions = na;
  mdp.gamma = gamma;
  mdp.transition.assign(static_cast<std::size_t>(na), Eigen::MatrixXd::Zero(m, m));
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(na, m);
  Eigen::MatrixXd reward_sum = Eigen::MatrixXd::Zero(na, m);
  Eigen::VectorXd init = Eigen::VectorXd::Zero(m);
  double y_total = 0.0;
  for (int i = 0; i < data.n(); ++i) {
    const Transition& t = data[i];
    mdp.transition[static_cast<std::size_t>(t.a0)](t.s0, t.s1) += 1.0;
    counts(t.a0, t.s0) += 1.0;
    reward_sum(t.a0, t.s0) += t.y0;
    init(t.s0) += 1.0;
    y_total += t.y0;
  }
  const double y_mean = y_total / data.n();
  mdp.reward_mean = Eigen::MatrixXd::Constant(na, m, y_mean);
  for (int a = 0; a < na; ++a) {
    Eigen::MatrixXd& P = mdp.transition[static_cast<std::size_t>(a)];
    for (int s = 0; s < m; ++s) {
      if (counts(a, s) > 0.0) mdp.reward_mean(a, s) = reward_sum(a, s) / counts(a, s);
      for (int s1 = 0; s1 < m; ++s1)
        if (P(s, s1) == 0.0) P(s, s1) = smoothing;
      const double row_sum = P.row(s).sum();
      if (row_sum > 0.0)
        P.row(s) /= row_sum;
      else
        P.row(s).setConstant(1.0 / m);  // unvisited cell, no smoothing
    }
  }
  mdp.init_dist = init / init.sum();
  return mdp;
}

Policy estimate_behavior_policy(const TransitionDataset& data) {
  const int m = data.alphabet().size();
  const int na = data.num_actions();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(m, na);
  for (int i = 0; i < data.n(); ++i) counts(data[i].s0, data[i].a0) += 1.0;
  for (int s = 0; s < m; ++s) {
    const double total = counts.row(s).sum();
    if (total > 0.0)
      counts.row(s) /= total;
    else
      counts.row(s).setConstant(1.0 / na);
  }
  return Policy::tabular(std::move(counts));
}

BootstrapResult bootstrap_calibration_ci(const TransitionDataset& data,
                                         const Policy& pi,
                                         const FunctionalSpec& functional,
                                         const QFunction& base, double gamma,
                                         int B, double level, std::uint64_t seed,
                                         const CalibrationConfig& cal_cfg) {
  if (B < 2) throw std::invalid_argument("bootstrap needs at least two replicates");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("confidence level outside (0,1)");
  const int n = data.n();
  const int na = data.num_actions();

  std::vector<QFunction> bases{base};
  const detail::CalibArrays arr = detail::build_calib_arrays(data, pi, nullptr, bases);

  // Precompute functional evaluation scores at (a', S0) where representable.
  Eigen::MatrixXd start_coef = Eigen::MatrixXd::Zero(n, na);
  Eigen::MatrixXd start_score = Eigen::MatrixXd::Zero(n, na);
  std::vector<double> coefs(static_cast<std::size_t>(na));
  bool pointwise = true;
  for (int i = 0; i < n && pointwise; ++i) {
    const Transition& t = data[i];
    if (!functional.eval_coefficients(t.s0, t.a0, coefs)) {
      pointwise = false;
      break;
    }
    for (int a = 0; a < na; ++a) {
      start_coef(i, a) = coefs[static_cast<std::size_t>(a)];
      if (coefs[static_cast<std::size_t>(a)] != 0.0) start_score(i, a) = base(a, t.s0);
    }
  }

  BootstrapResult out;
  out.replicates.assign(static_cast<std::size_t>(B), 0.0);
  parallel_for(B, [&](int b) {
    std::mt19937_64 gen(seed ^ splitmix64(static_cast<std::uint64_t>(b)));
    std::vector<double> mult(static_cast<std::size_t>(n), 0.0);
    for (int k = 0; k < n; ++k) {
      const std::uint64_t u = gen();
      mult[static_cast<std::size_t>(u % static_cast<std::uint64_t>(n))] += 1.0;
    }
    StepFunction f = detail::calibrate_arrays(arr, mult, gamma, cal_cfg, nullptr);
    double acc = 0.0, sw = 0.0;
    for (int i = 0; i < n; ++i) {
      const double wi = mult[static_cast<std::size_t>(i)];
      if (wi == 0.0) continue;
      double mi;
      if (pointwise) {
        mi = 0.0;
        for (int a = 0; a < na; ++a)
          if (start_coef(i, a) != 0.0) mi += start_coef(i, a) * f(start_score(i, a));
      } else {
        const Transition& t = data[i];
        auto qe = [&](int a, int s) { return f(base(a, s)); };
        mi = functional.apply(t.s0, t.a0, qe);
      }
      acc += wi * mi;
      sw += wi;
    }
    out.replicates[static_cast<std::size_t>(b)] = acc / sw;
  });

  out.lo = detail::percentile(out.replicates, (1.0 - level) / 2.0);
  out.hi = detail::percentile(out.replicates, 1.0 - (1.0 - level) / 2.0);
  return out;
}

}  // namespace bellman
