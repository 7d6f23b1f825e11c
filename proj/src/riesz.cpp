#include "bellman/riesz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace bellman {

void RieszWeights::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "i,weight,alpha\n";
  char buf[128];
  for (std::size_t i = 0; i < weight_at.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i, weight_at[i],
                  i < alpha_at.size() ? alpha_at[i] : 0.0);
    out << buf;
  }
}

namespace {

double weight_total(std::span<const double> w, int n) {
  if (w.empty()) return static_cast<double>(n);
  return std::accumulate(w.begin(), w.end(), 0.0);
}

}  // namespace

RieszWeights estimate_representer_linear(const TransitionDataset& data,
                                         const Policy& pi,
                                         const FunctionalSpec& functional,
                                         const FeatureMap& features, double gamma,
                                         double lambda,
                                         std::span<const double> weights,
                                         std::span<const int> folds) {
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (!features.phi || features.dim < 1)
    throw std::invalid_argument("representer needs a feature map");
  const int n = data.n();
  const int na = data.num_actions();
  const int m = features.dim;
  if (!weights.empty() && weights.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("weight length mismatch");
  if (!folds.empty() && folds.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("fold mask length mismatch");

  const double sw = weight_total(weights, n);
  if (lambda < 0.0) lambda = 1e-6 * sw;

  Eigen::MatrixXd phi0(n, m);        // phi(A0, S0)
  Eigen::MatrixXd phi1 = Eigen::MatrixXd::Zero(n, m);  // V^pi(phi)(S1)
  Eigen::MatrixXd mvec(n, m);        // m(S0, A0, phi_j)
  for (int i = 0; i < n; ++i) {
    const Transition& t = data[i];
    phi0.row(i) = features(t.a0, t.s0).transpose();
    for (int a = 0; a < na; ++a) {
      const double p = pi.prob(a, t.s1);
      if (p > 0.0) phi1.row(i) += p * features(a, t.s1).transpose();
    }
    mvec.row(i) = functional.apply_basis(t.s0, t.a0, features).transpose();
  }

  std::vector<int> fold_ids;
  if (folds.empty()) {
    fold_ids = {0};
  } else {
    std::set<int> uniq(folds.begin(), folds.end());
    fold_ids.assign(uniq.begin(), uniq.end());
  }

  RieszWeights out;
  out.weight_at.assign(static_cast<std::size_t>(n), 0.0);
  out.alpha_at.assign(static_cast<std::size_t>(n), 0.0);
  out.v_alpha_next.assign(static_cast<std::size_t>(n), 0.0);
  double worst_cond = 0.0;

  for (int fold : fold_ids) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(m, m);
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < n; ++i) {
      if (!folds.empty() && folds[static_cast<std::size_t>(i)] == fold) continue;
      const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
      if (wi == 0.0) continue;
      gram.noalias() += wi * phi0.row(i).transpose() * phi0.row(i);
      if (gamma > 0.0)
        cross.noalias() += wi * phi0.row(i).transpose() * phi1.row(i);
      c.noalias() += wi * mvec.row(i).transpose();
    }

    // Second-stage ridge regression of V^pi(alpha)(S1) on phi(A0, S0); by
    // linearity one m x m coefficient matrix covers every alpha in the class.
    Eigen::MatrixXd tmat = Eigen::MatrixXd::Identity(m, m);
    if (gamma > 0.0) {
      Eigen::MatrixXd reg = gram;
      reg.diagonal().array() += lambda;
      Eigen::MatrixXd second = Eigen::PartialPivLU<Eigen::MatrixXd>(reg).solve(cross);
      tmat -= gamma * second;  // T(beta' phi) = phi' (I - gamma R) beta
    }

    Eigen::MatrixXd quad = tmat.transpose() * gram * tmat;
    quad.diagonal().array() += lambda;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(quad);
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(svd.singularValues().size() - 1);
    const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    worst_cond = std::max(worst_cond, cond);
    if (lambda == 0.0 && (!(smin > 0.0) || cond > 1e12))
      throw NumericalError(
          "singular representer system at lambda=0 (condition number " +
          std::to_string(cond) + "); use ridge lambda > 0");

    Eigen::VectorXd beta = Eigen::PartialPivLU<Eigen::MatrixXd>(quad).solve(c);

    for (int i = 0; i < n; ++i) {
      if (!folds.empty() && folds[static_cast<std::size_t>(i)] != fold) continue;
      out.alpha_at[static_cast<std::size_t>(i)] = phi0.row(i).dot(beta);
      out.weight_at[static_cast<std::size_t>(i)] = phi0.row(i).dot(tmat * beta);
      out.v_alpha_next[static_cast<std::size_t>(i)] = phi1.row(i).dot(beta);
    }

    if (folds.empty()) {
      out.coefficients = beta;
      const FeatureMap fm = features;
      Eigen::VectorXd tbeta = tmat * beta;
      out.weight = [fm, tbeta](int a, int s) { return fm(a, s).dot(tbeta); };
      out.alpha = [fm, beta](int a, int s) { return fm(a, s).dot(beta); };
    }
  }

  out.diagnostics["condition_number"] = worst_cond;
  out.diagnostics["lambda"] = lambda;
  double max_w = 0.0;
  for (double v : out.weight_at) max_w = std::max(max_w, std::abs(v));
  out.diagnostics["max_weight"] = max_w;
  return out;
}

std::function<double(int, int)> second_stage_regression(
    const TransitionDataset& data, const Policy& pi,
    const std::function<double(int, int)>& alpha, double gamma,
    const FeatureMap& features, const RegressorSpec& spec,
    std::span<const double> weights) {
  if (gamma == 0.0) return alpha;  // T(alpha) = alpha with no continuation
  const int n = data.n();
  const int na = data.num_actions();
  Eigen::MatrixXd x0(n, features.dim);
  std::vector<double> targets(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const Transition& t = data[i];
    x0.row(i) = features(t.a0, t.s0).transpose();
    double v = 0.0;
    for (int a = 0; a < na; ++a) {
      const double p = pi.prob(a, t.s1);
      if (p > 0.0) v += p * alpha(a, t.s1);
    }
    targets[static_cast<std::size_t>(i)] = v;
  }
  FittedRegressor fit = fit_least_squares(spec, x0, targets, weights);
  const FeatureMap fm = features;
  return [alpha, fit, fm, gamma](int a, int s) {
    Eigen::VectorXd x = fm(a, s);
    return alpha(a, s) -
           gamma * fit.predict(std::span<const double>(
                       x.data(), static_cast<std::size_t>(x.size())));
  };
}

namespace {

// Shared machinery for the dimension-reduced representer. Levels are the
// distinct calibrated values; bins of the calibrator sharing a value are one
// level set.
struct LevelIndexer {
  const StepFunction* f = nullptr;
  std::vector<int> bin_to_level;
  int num_levels = 0;

  explicit LevelIndexer(const StepFunction& step) : f(&step) {
    const auto& lv = step.levels();
    bin_to_level.resize(lv.size());
    int level = 0;
    for (std::size_t b = 0; b < lv.size(); ++b) {
      if (b > 0 && lv[b] != lv[b - 1]) ++level;
      bin_to_level[b] = level;
    }
    num_levels = level + 1;
  }
  int level_of_score(double score) const {
    return bin_to_level[static_cast<std::size_t>(f->level_index(score))];
  }
};

RieszWeights dimreduced_core(const TransitionDataset& data, const Policy& pi,
                             const FunctionalSpec& functional,
                             const std::vector<const QFunction*>& base_of_record,
                             const StepFunction& calibrator, double gamma,
                             std::span<const double> weights,
                             const CalibratedQ* single) {
  const int n = data.n();
  const int na = data.num_actions();
  const double sw = weight_total(weights, n);
  LevelIndexer levels(calibrator);
  int L = levels.num_levels;

  // Level of (A0, S0), pi-weighted level masses of (a', S1), and functional
  // evaluation levels at (a', S0), per record.
  std::vector<int> g0(static_cast<std::size_t>(n));
  Eigen::MatrixXi gnext = Eigen::MatrixXi::Zero(n, na);
  Eigen::MatrixXi gstart = Eigen::MatrixXi::Zero(n, na);
  Eigen::MatrixXd pin = Eigen::MatrixXd::Zero(n, na);
  std::vector<double> coefs(static_cast<std::size_t>(na));
  Eigen::MatrixXd startcoef = Eigen::MatrixXd::Zero(n, na);
  bool pointwise = true;
  for (int i = 0; i < n; ++i) {
    const Transition& t = data[i];
    const QFunction& base = *base_of_record[static_cast<std::size_t>(i)];
    g0[static_cast<std::size_t>(i)] = levels.level_of_score(base(t.a0, t.s0));
    for (int a = 0; a < na; ++a) {
      const double p = pi.prob(a, t.s1);
      pin(i, a) = p;
      if (p > 0.0) gnext(i, a) = levels.level_of_score(base(a, t.s1));
    }
    if (pointwise && functional.eval_coefficients(t.s0, t.a0, coefs)) {
      for (int a = 0; a < na; ++a) {
        startcoef(i, a) = coefs[static_cast<std::size_t>(a)];
        if (coefs[static_cast<std::size_t>(a)] != 0.0)
          gstart(i, a) = levels.level_of_score(base(a, t.s0));
      }
    } else {
      pointwise = false;
    }
  }

  // Empirical level masses and level-transition matrix.
  int merges = 0;
  std::vector<int> remap(static_cast<std::size_t>(L));
  std::iota(remap.begin(), remap.end(), 0);
  Eigen::VectorXd mass;
  for (;;) {
    mass = Eigen::VectorXd::Zero(L);
    for (int i = 0; i < n; ++i) {
      const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
      mass(remap[static_cast<std::size_t>(g0[static_cast<std::size_t>(i)])]) += wi;
    }
    int empty = -1;
    for (int g = 0; g < L; ++g)
      if (!(mass(g) > 0.0)) {
        empty = g;
        break;
      }
    if (empty < 0) break;
    // Merge a massless level into its lower neighbor (upper when first).
    ++merges;
    if (L == 1) throw NumericalError("no representer mass at any level");
    const int target = empty > 0 ? empty - 1 : 1;
    for (auto& r : remap)
      if (r == empty) r = target;
    for (auto& r : remap)
      if (r > empty) --r;
    --L;
  }

  Eigen::MatrixXd trans = Eigen::MatrixXd::Zero(L, L);
  for (int i = 0; i < n; ++i) {
    const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    if (wi == 0.0) continue;
    const int g = remap[static_cast<std::size_t>(g0[static_cast<std::size_t>(i)])];
    for (int a = 0; a < na; ++a)
      if (pin(i, a) > 0.0)
        trans(g, remap[static_cast<std::size_t>(gnext(i, a))]) += wi * pin(i, a);
  }
  for (int g = 0; g < L; ++g) trans.row(g) /= mass(g);

  Eigen::MatrixXd tmat = Eigen::MatrixXd::Identity(L, L) - gamma * trans;

  Eigen::VectorXd b = Eigen::VectorXd::Zero(L);
  if (pointwise) {
    for (int i = 0; i < n; ++i) {
      const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
      if (wi == 0.0) continue;
      for (int a = 0; a < na; ++a)
        if (startcoef(i, a) != 0.0)
          b(remap[static_cast<std::size_t>(gstart(i, a))]) += wi * startcoef(i, a);
    }
  } else {
    // Generic linear functional: apply m to each level indicator.
    for (int level = 0; level < L; ++level) {
      for (int i = 0; i < n; ++i) {
        const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
        if (wi == 0.0) continue;
        const Transition& t = data[i];
        const QFunction& base = *base_of_record[static_cast<std::size_t>(i)];
        auto indicator = [&](int a, int s) {
          return remap[static_cast<std::size_t>(levels.level_of_score(base(a, s)))] ==
                         level
                     ? 1.0
                     : 0.0;
        };
        b(level) += wi * functional.apply(t.s0, t.a0, indicator);
      }
    }
  }
  b /= sw;

  Eigen::VectorXd level_freq = mass / sw;
  Eigen::MatrixXd quad = tmat.transpose() * level_freq.asDiagonal() * tmat;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(quad);
  if (!lu.isInvertible())
    throw NumericalError("singular dimension-reduced representer system");
  Eigen::VectorXd fvals = lu.solve(b);
  Eigen::VectorXd wlevel = tmat * fvals;

  RieszWeights out;
  out.coefficients = fvals;
  out.weight_at.assign(static_cast<std::size_t>(n), 0.0);
  out.alpha_at.assign(static_cast<std::size_t>(n), 0.0);
  out.v_alpha_next.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const int g = remap[static_cast<std::size_t>(g0[static_cast<std::size_t>(i)])];
    out.weight_at[static_cast<std::size_t>(i)] = wlevel(g);
    out.alpha_at[static_cast<std::size_t>(i)] = fvals(g);
    double v = 0.0;
    for (int a = 0; a < na; ++a)
      if (pin(i, a) > 0.0)
        v += pin(i, a) * fvals(remap[static_cast<std::size_t>(gnext(i, a))]);
    out.v_alpha_next[static_cast<std::size_t>(i)] = v;
  }

  if (single) {
    const QFunction base_q = single->base();
    const StepFunction cal = single->calibrator();
    const std::vector<int> b2l = levels.bin_to_level;
    const std::vector<int> rm = remap;
    const Eigen::VectorXd wl = wlevel, fv = fvals;
    auto level_at = [cal, b2l, rm](double score) {
      return rm[static_cast<std::size_t>(
          b2l[static_cast<std::size_t>(cal.level_index(score))])];
    };
    out.weight = [base_q, level_at, wl](int a, int s) {
      return wl(level_at(base_q(a, s)));
    };
    out.alpha = [base_q, level_at, fv](int a, int s) {
      return fv(level_at(base_q(a, s)));
    };
  }

  out.diagnostics["levels"] = L;
  out.diagnostics["merged_empty_levels"] = merges;
  double max_w = 0.0;
  for (double v : out.weight_at) max_w = std::max(max_w, std::abs(v));
  out.diagnostics["max_weight"] = max_w;
  return out;
}

}  // namespace

RieszWeights estimate_representer_dimreduced(const TransitionDataset& data,
                                             const Policy& pi,
                                             const FunctionalSpec& functional,
                                             const CalibratedQ& qstar, double gamma,
                                             std::span<const double> weights) {
  const int n = data.n();
  std::vector<const QFunction*> bases(static_cast<std::size_t>(n), &qstar.base());
  return dimreduced_core(data, pi, functional, bases, qstar.calibrator(), gamma,
                         weights, &qstar);
}

RieszWeights estimate_representer_dimreduced(const TransitionDataset& data,
                                             const Policy& pi,
                                             const FunctionalSpec& functional,
                                             const CrossFittedCalibration& qstar,
                                             double gamma,
                                             std::span<const double> weights) {
  if (qstar.folds.empty()) throw std::invalid_argument("empty cross-fitted calibration");
  const int n = data.n();
  std::vector<const QFunction*> bases(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    bases[static_cast<std::size_t>(i)] =
        &qstar.folds[static_cast<std::size_t>(
                         qstar.fold_of_record[static_cast<std::size_t>(i)])]
             .base();
  return dimreduced_core(data, pi, functional, bases,
                         qstar.folds.front().calibrator(), gamma, weights, nullptr);
}

FeatureMap tree_leaf_features(const FittedRegressor& model,
                              const FeatureMap& base_features) {
  const BoostedTreesModel* trees = model.trees();
  if (trees == nullptr)
    throw std::invalid_argument("tree-leaf features require a boosted-trees model");
  std::vector<int> offsets;
  offsets.reserve(trees->trees().size());
  int dim = 0;
  for (const RegressionTree& t : trees->trees()) {
    offsets.push_back(dim);
    dim += t.num_leaves;
  }
  if (dim == 0) throw std::invalid_argument("model has no leaves");

  FeatureMap out;
  out.dim = dim;
  out.provenance = FeatureMap::Provenance::TreeLeaves;
  const FittedRegressor captured = model;
  const FeatureMap base = base_features;
  out.phi = [captured, base, offsets, dim](int a, int s) {
    Eigen::VectorXd x = base(a, s);
    std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    const auto& ts = captured.trees()->trees();
    for (std::size_t t = 0; t < ts.size(); ++t)
      v(offsets[t] + ts[t].leaf_of(xs)) = 1.0;
    return v;
  };
  return out;
}

}  // namespace bellman
