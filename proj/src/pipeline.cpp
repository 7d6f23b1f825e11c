#include "bellman/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bellman/parallel.hpp"

namespace bellman {

const std::vector<std::string> kEstimatorMethods = {
    "plugin-calibrated", "drl-semi", "drl-robust", "drl-nonparam"};

bool is_known_method(const std::string& method) {
  return std::find(kEstimatorMethods.begin(), kEstimatorMethods.end(), method) !=
         kEstimatorMethods.end();
}

namespace {

std::vector<int> make_folds(int n, int folds, std::uint64_t seed) {
  std::vector<int> assignment(static_cast<std::size_t>(n), 0);
  if (folds <= 1) return assignment;
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 gen(seed ^ splitmix64(0xF01D5EEDULL));
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(gen() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  for (int i = 0; i < n; ++i)
    assignment[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i % folds;
  return assignment;
}

struct ArmContext {
  int arm = 0;
  Policy pi;
  FunctionalSpec functional;
  std::vector<QFunction> fold_bases;
  FittedRegressor full_model;
  CrossFittedCalibration calibration;  // plugin-calibrated only
  bool has_calibration = false;
};

struct EnsembleArrays {
  std::vector<double> m_vals, q_at, v_next, td;
};

EnsembleArrays ensemble_arrays(const TransitionDataset& data, const ArmContext& ctx,
                               const std::vector<int>& fold, double gamma) {
  const int n = data.n();
  const int na = data.num_actions();
  EnsembleArrays arr;
  arr.m_vals.resize(static_cast<std::size_t>(n));
  arr.q_at.resize(static_cast<std::size_t>(n));
  arr.v_next.resize(static_cast<std::size_t>(n));
  arr.td.resize(static_cast<std::size_t>(n));
  std::vector<double> coefs(static_cast<std::size_t>(na));
  for (int i = 0; i < n; ++i) {
    const Transition& t = data[i];
    const QFunction& base = ctx.fold_bases[static_cast<std::size_t>(
        fold[static_cast<std::size_t>(i)])];
    auto qe = [&base](int a, int s) { return base(a, s); };
    arr.m_vals[static_cast<std::size_t>(i)] = ctx.functional.apply(t.s0, t.a0, qe);
    arr.q_at[static_cast<std::size_t>(i)] = base(t.a0, t.s0);
    double v = 0.0;
    if (gamma > 0.0) {
      for (int a = 0; a < na; ++a) {
        const double p = ctx.pi.prob(a, t.s1);
        if (p > 0.0) v += p * base(a, t.s1);
      }
    }
    arr.v_next[static_cast<std::size_t>(i)] = v;
    arr.td[static_cast<std::size_t>(i)] =
        t.y0 + gamma * v - arr.q_at[static_cast<std::size_t>(i)];
  }
  return arr;
}

EstimateReport run_arm(const TransitionDataset& data, ArmContext& ctx,
                       const std::vector<int>& fold, const std::string& method,
                       const PipelineOptions& opts, const FeatureMap& base_features) {
  const int n = data.n();
  EstimatorOptions eo;
  eo.level = opts.level;

  if (method == "plugin-calibrated") {
    ctx.calibration = cross_fitted_calibration(data, ctx.pi, fold, ctx.fold_bases,
                                               opts.gamma, opts.calibration);
    ctx.has_calibration = true;
    return plugin_calibrated(data, ctx.pi, ctx.functional, ctx.calibration,
                             opts.gamma, eo);
  }

  EnsembleArrays arr = ensemble_arrays(data, ctx, fold, opts.gamma);

  if (method == "drl-nonparam") {
    const TabularMDP emp = estimate_empirical_mdp(data, opts.gamma);
    const Policy behavior = estimate_behavior_policy(data);
    const OccupancyRatio occ =
        tabular_occupancy_ratio(emp, ctx.pi, behavior, opts.truncation);
    std::vector<double> corr(static_cast<std::size_t>(n));
    double clipped = 0.0;
    for (int i = 0; i < n; ++i) {
      const Transition& t = data[i];
      corr[static_cast<std::size_t>(i)] =
          occ.value(t.a0, t.s0) * arr.td[static_cast<std::size_t>(i)];
      if (occ.clipped(t.a0, t.s0) != 0.0) clipped += 1.0;
    }
    EstimateReport rep =
        detail::drl_core("drl-nonparam", arr.m_vals, corr, {}, opts.level);
    rep.diagnostics["clipped_mass_fraction"] = clipped / n;
    return rep;
  }

  // drl-semi / drl-robust share the linear representer on adaptive features.
  FeatureMap features;
  if (opts.regressor.backend == RegressorSpec::Backend::BoostedTrees)
    features = tree_leaf_features(ctx.full_model, base_features);
  else
    features = FeatureMap::one_hot_grid(data.num_actions(), data.alphabet().size());

  std::span<const int> fold_mask;
  if (opts.folds > 1) fold_mask = fold;
  RieszWeights rw =
      estimate_representer_linear(data, ctx.pi, ctx.functional, features,
                                  opts.gamma, opts.ridge_lambda, {}, fold_mask);

  std::vector<double> corr(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    corr[static_cast<std::size_t>(i)] =
        rw.weight_at[static_cast<std::size_t>(i)] * arr.td[static_cast<std::size_t>(i)];

  if (method == "drl-semi") {
    EstimateReport rep = detail::drl_core("drl-semi", arr.m_vals, corr, {}, opts.level);
    rep.diagnostics["max_weight"] = rw.diagnostics["max_weight"];
    rep.diagnostics["representer_condition"] = rw.diagnostics["condition_number"];
    return rep;
  }

  // drl-robust: per-fold reward regression and second-stage T(q_hat), both
  // trained out-of-fold and evaluated in-fold.
  std::vector<double> r_at(static_cast<std::size_t>(n), 0.0);
  std::vector<double> tq_at(static_cast<std::size_t>(n), 0.0);
  const int nfolds = static_cast<int>(ctx.fold_bases.size());
  Eigen::MatrixXd x0(n, base_features.dim);
  for (int i = 0; i < n; ++i)
    x0.row(i) = base_features(data[i].a0, data[i].s0).transpose();

  for (int j = 0; j < nfolds; ++j) {
    std::vector<int> train;
    train.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      if (nfolds == 1 || fold[static_cast<std::size_t>(i)] != j) train.push_back(i);
    Eigen::MatrixXd xt(static_cast<Eigen::Index>(train.size()), base_features.dim);
    std::vector<double> yt(train.size()), vt(train.size());
    const QFunction& base_j = ctx.fold_bases[static_cast<std::size_t>(j)];
    for (std::size_t k = 0; k < train.size(); ++k) {
      const Transition& t = data[train[k]];
      xt.row(static_cast<Eigen::Index>(k)) = x0.row(train[k]);
      yt[k] = t.y0;
      double v = 0.0;
      for (int a = 0; a < data.num_actions(); ++a) {
        const double p = ctx.pi.prob(a, t.s1);
        if (p > 0.0) v += p * base_j(a, t.s1);
      }
      vt[k] = v;
    }
    FittedRegressor r_fit = fit_least_squares(opts.regressor, xt, yt);
    FittedRegressor v_fit = fit_least_squares(opts.regressor, xt, vt);
    for (int i = 0; i < n; ++i) {
      if (nfolds > 1 && fold[static_cast<std::size_t>(i)] != j) continue;
      Eigen::VectorXd row = x0.row(i);
      std::span<const double> xs(row.data(), static_cast<std::size_t>(row.size()));
      r_at[static_cast<std::size_t>(i)] = r_fit.predict(xs);
      tq_at[static_cast<std::size_t>(i)] =
          arr.q_at[static_cast<std::size_t>(i)] - opts.gamma * v_fit.predict(xs);
    }
  }
  if (opts.robust_tie_reward) r_at = tq_at;

  for (int i = 0; i < n; ++i) {
    const double alpha_term = rw.alpha_at[static_cast<std::size_t>(i)] -
                              opts.gamma * rw.v_alpha_next[static_cast<std::size_t>(i)] -
                              rw.weight_at[static_cast<std::size_t>(i)];
    corr[static_cast<std::size_t>(i)] +=
        (r_at[static_cast<std::size_t>(i)] - tq_at[static_cast<std::size_t>(i)]) *
        alpha_term;
  }
  EstimateReport rep = detail::drl_core("drl-robust", arr.m_vals, corr, {}, opts.level);
  rep.diagnostics["max_weight"] = rw.diagnostics["max_weight"];
  return rep;
}

// Percentile bootstrap over the calibration step for one or two arms on
// shared resample indices.
void bootstrap_plugin_ci(const TransitionDataset& data,
                         const std::vector<ArmContext*>& arms,
                         const std::vector<double>& signs,
                         const std::vector<int>& fold, const PipelineOptions& opts,
                         EstimateReport& rep) {
  const int n = data.n();
  const int na = data.num_actions();
  struct ArmArrays {
    detail::CalibArrays cal;
    std::vector<double> start_score;  // base at (arm, S0i), own fold
    double sign = 1.0;
  };
  std::vector<ArmArrays> prepared;
  prepared.reserve(arms.size());
  for (std::size_t k = 0; k < arms.size(); ++k) {
    ArmContext& ctx = *arms[k];
    std::vector<QFunction> bases;
    for (const CalibratedQ& cq : ctx.calibration.folds) bases.push_back(cq.base());
    ArmArrays aa;
    aa.cal = detail::build_calib_arrays(data, ctx.pi, &fold, bases);
    aa.start_score.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const QFunction& base = bases[static_cast<std::size_t>(
          fold[static_cast<std::size_t>(i)])];
      aa.start_score[static_cast<std::size_t>(i)] = base(ctx.arm, data[i].s0);
    }
    aa.sign = signs[k];
    prepared.push_back(std::move(aa));
  }
  (void)na;

  std::vector<double> reps_out(static_cast<std::size_t>(opts.bootstrap), 0.0);
  parallel_for(opts.bootstrap, [&](int b) {
    std::mt19937_64 gen(opts.seed ^ splitmix64(static_cast<std::uint64_t>(b)));
    std::vector<double> mult(static_cast<std::size_t>(n), 0.0);
    for (int k = 0; k < n; ++k)
      mult[static_cast<std::size_t>(gen() % static_cast<std::uint64_t>(n))] += 1.0;
    double psi = 0.0;
    for (const ArmArrays& aa : prepared) {
      StepFunction f =
          detail::calibrate_arrays(aa.cal, mult, opts.gamma, opts.calibration, nullptr);
      double acc = 0.0, sw = 0.0;
      for (int i = 0; i < n; ++i) {
        const double wi = mult[static_cast<std::size_t>(i)];
        if (wi == 0.0) continue;
        acc += wi * f(aa.start_score[static_cast<std::size_t>(i)]);
        sw += wi;
      }
      psi += aa.sign * acc / sw;
    }
    reps_out[static_cast<std::size_t>(b)] = psi;
  });

  rep.ci_lo = detail::percentile(reps_out, (1.0 - opts.level) / 2.0);
  rep.ci_hi = detail::percentile(reps_out, 1.0 - (1.0 - opts.level) / 2.0);
  rep.diagnostics["bootstrap_replicates"] = opts.bootstrap;
}

}  // namespace

EstimateReport run_estimator(const TransitionDataset& data, const std::string& method,
                             const PipelineOptions& opts) {
  if (!is_known_method(method)) throw std::invalid_argument("unknown method: " + method);
  if (opts.gamma < 0.0 || opts.gamma >= 1.0)
    throw std::invalid_argument("gamma must lie in [0, 1)");
  if (opts.folds < 1) throw std::invalid_argument("folds must be >= 1");
  if (data.n() < opts.folds) throw std::invalid_argument("more folds than records");
  if (opts.estimand != "ate" && opts.estimand != "policy-value")
    throw std::invalid_argument("unknown estimand: " + opts.estimand);

  const std::vector<int> fold = make_folds(data.n(), opts.folds, opts.seed);
  const FeatureMap base_features = FeatureMap::action_and_coords(data.alphabet());

  std::vector<int> arms;
  if (opts.estimand == "ate")
    arms = {1, 0};
  else
    arms = {opts.arm};

  std::vector<ArmContext> contexts(arms.size());
  std::vector<EstimateReport> arm_reports(arms.size());
  for (std::size_t k = 0; k < arms.size(); ++k) {
    ArmContext& ctx = contexts[k];
    ctx.arm = arms[k];
    ctx.pi = Policy::deterministic(ctx.arm, data.num_actions());
    ctx.functional = FunctionalSpec::policy_value(ctx.pi);

    FQIConfig fcfg;
    fcfg.gamma = opts.gamma;
    fcfg.tol = opts.fqi_tol;
    fcfg.max_iters = opts.fqi_max_iters;
    fcfg.regressor = opts.regressor;
    fcfg.feature_map = base_features;

    if (opts.folds == 1) {
      FQIResult fit = fitted_q_iteration(data, ctx.pi, fcfg);
      ctx.fold_bases = {fit.q};
      ctx.full_model = fit.model;
    } else {
      ctx.fold_bases.resize(static_cast<std::size_t>(opts.folds));
      for (int j = 0; j < opts.folds; ++j) {
        std::vector<int> keep;
        keep.reserve(static_cast<std::size_t>(data.n()));
        for (int i = 0; i < data.n(); ++i)
          if (fold[static_cast<std::size_t>(i)] != j) keep.push_back(i);
        TransitionDataset sub = data.subset(keep);
        ctx.fold_bases[static_cast<std::size_t>(j)] =
            fitted_q_iteration(sub, ctx.pi, fcfg).q;
      }
      if (method == "drl-semi" || method == "drl-robust")
        ctx.full_model = fitted_q_iteration(data, ctx.pi, fcfg).model;
    }
    arm_reports[k] = run_arm(data, ctx, fold, method, opts, base_features);
  }

  EstimateReport out;
  if (arms.size() == 1) {
    out = arm_reports[0];
    out.diagnostics["arm"] = arms[0];
  } else {
    const EstimateReport& treated = arm_reports[0];
    const EstimateReport& control = arm_reports[1];
    out.method = method;
    out.level = opts.level;
    out.estimate = treated.estimate - control.estimate;
    out.influence.resize(treated.influence.size());
    for (std::size_t i = 0; i < out.influence.size(); ++i)
      out.influence[i] = treated.influence[i] - control.influence[i];
    out.se = std::sqrt(eif_variance(out.influence));
    const double z = detail::normal_quantile(0.5 + opts.level / 2.0);
    out.ci_lo = out.estimate - z * out.se;
    out.ci_hi = out.estimate + z * out.se;
    for (const auto& [key, value] : treated.diagnostics)
      out.diagnostics["treated_" + key] = value;
    for (const auto& [key, value] : control.diagnostics)
      out.diagnostics["control_" + key] = value;
  }

  if (method == "plugin-calibrated" && opts.bootstrap > 0) {
    std::vector<ArmContext*> ptrs;
    std::vector<double> signs;
    for (std::size_t k = 0; k < contexts.size(); ++k) {
      ptrs.push_back(&contexts[k]);
      signs.push_back(k == 0 ? 1.0 : -1.0);
    }
    if (arms.size() == 1) signs = {1.0};
    bootstrap_plugin_ci(data, ptrs, signs, fold, opts, out);
  }
  out.diagnostics["n"] = data.n();
  out.diagnostics["gamma"] = opts.gamma;
  out.diagnostics["folds"] = opts.folds;
  return out;
}

}  // namespace bellman
