#include "bellman/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace bellman {

void RegressorSpec::validate() const {
  switch (backend) {
    case Backend::TabularMean:
      break;
    case Backend::RidgeFeatures:
      if (ridge_lambda < 0.0) throw std::invalid_argument("ridge penalty must be >= 0");
      break;
    case Backend::BoostedTrees:
      if (tree_depth < 1) throw std::invalid_argument("tree depth must be >= 1");
      if (tree_rounds < 1) throw std::invalid_argument("boosting rounds must be >= 1");
      if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
      if (max_leaves < 0) throw std::invalid_argument("leaf cap must be >= 0");
      if (min_leaf_weight < 0.0) throw std::invalid_argument("min leaf weight must be >= 0");
      break;
  }
}

RegressorSpec RegressorSpec::tabular_mean() {
  RegressorSpec s;
  s.backend = Backend::TabularMean;
  return s;
}

RegressorSpec RegressorSpec::ridge(double lambda) {
  RegressorSpec s;
  s.backend = Backend::RidgeFeatures;
  s.ridge_lambda = lambda;
  s.validate();
  return s;
}

RegressorSpec RegressorSpec::boosted_trees(int depth, int rounds, double learning_rate,
                                           double min_leaf_weight, int max_leaves) {
  RegressorSpec s;
  s.backend = Backend::BoostedTrees;
  s.tree_depth = depth;
  s.tree_rounds = rounds;
  s.learning_rate = learning_rate;
  s.min_leaf_weight = min_leaf_weight;
  s.max_leaves = max_leaves;
  s.validate();
  return s;
}

double FittedRegressor::predict(std::span<const double> x) const {
  if (!impl_) throw std::logic_error("predict on an unfit regressor");
  return impl_->predict(x);
}
double FittedRegressor::in_sample_mse() const {
  if (!impl_) throw std::logic_error("unfit regressor");
  return impl_->in_sample_mse();
}
bool FittedRegressor::rank_deficient() const { return impl_ && impl_->rank_deficient(); }
const BoostedTreesModel* FittedRegressor::trees() const {
  return impl_ ? impl_->trees() : nullptr;
}

namespace {

class TabularMeanImpl : public FittedRegressor::Impl {
 public:
  TabularMeanImpl(const Eigen::MatrixXd& X, std::span<const double> y,
                  std::span<const double> w) {
    const Eigen::Index n = X.rows();
    double total_w = 0.0, total_wy = 0.0;
    std::map<std::vector<double>, std::pair<double, double>> cells;
    std::vector<double> key(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < X.cols(); ++j)
        key[static_cast<std::size_t>(j)] = X(i, j) == 0.0 ? 0.0 : X(i, j);
      const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
      auto& cell = cells[key];
      cell.first += wi;
      cell.second += wi * y[static_cast<std::size_t>(i)];
      total_w += wi;
      total_wy += wi * y[static_cast<std::size_t>(i)];
    }
    global_mean_ = total_w > 0.0 ? total_wy / total_w : 0.0;
    for (auto& [k, cell] : cells)
      means_[k] = cell.first > 0.0 ? cell.second / cell.first : global_mean_;
    double sse = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < X.cols(); ++j)
        key[static_cast<std::size_t>(j)] = X(i, j) == 0.0 ? 0.0 : X(i, j);
      const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
      const double r = y[static_cast<std::size_t>(i)] - means_[key];
      sse += wi * r * r;
    }
    mse_ = total_w > 0.0 ? sse / total_w : 0.0;
  }

  double predict(std::span<const double> x) const override {
    std::vector<double> key(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) key[j] = x[j] == 0.0 ? 0.0 : x[j];
    auto it = means_.find(key);
    return it == means_.end() ? global_mean_ : it->second;  // unseen cell falls back
  }
  double in_sample_mse() const override { return mse_; }

 private:
  std::map<std::vector<double>, double> means_;
  double global_mean_ = 0.0;
  double mse_ = 0.0;
};

class RidgeImpl : public FittedRegressor::Impl {
 public:
  RidgeImpl(const Eigen::MatrixXd& X, std::span<const double> y,
            std::span<const double> w, double lambda) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    Eigen::MatrixXd design(n, d + 1);
    design.col(0).setOnes();
    design.rightCols(d) = X;
    Eigen::VectorXd target(n), wv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      target(i) = y[static_cast<std::size_t>(i)];
      wv(i) = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
    }
    Eigen::MatrixXd wd = wv.asDiagonal() * design;
    Eigen::MatrixXd gram = design.transpose() * wd;
    Eigen::VectorXd xty = wd.transpose() * target;
    // Intercept is never penalized.
    for (Eigen::Index j = 1; j <= d; ++j) gram(j, j) += lambda;
    if (lambda > 0.0) {
      coef_ = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(xty);
    } else {
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
      rank_deficient_ = cod.rank() < gram.rows();
      coef_ = cod.solve(xty);
    }
    Eigen::VectorXd resid = target - design * coef_;
    const double total_w = wv.sum();
    mse_ = total_w > 0.0 ? resid.cwiseAbs2().dot(wv) / total_w : 0.0;
  }

  double predict(std::span<const double> x) const override {
    double out = coef_(0);
    for (std::size_t j = 0; j < x.size(); ++j)
      out += coef_(static_cast<Eigen::Index>(j) + 1) * x[j];
    return out;
  }
  double in_sample_mse() const override { return mse_; }
  bool rank_deficient() const override { return rank_deficient_; }

 private:
  Eigen::VectorXd coef_;
  double mse_ = 0.0;
  bool rank_deficient_ = false;
};

}  // namespace

// Defined in boosted_trees.cpp.
std::shared_ptr<const FittedRegressor::Impl> fit_boosted_trees_impl(
    const RegressorSpec& spec, const Eigen::MatrixXd& X, std::span<const double> y,
    std::span<const double> w);

FittedRegressor fit_least_squares(const RegressorSpec& spec, const Eigen::MatrixXd& X,
                                  std::span<const double> y,
                                  std::span<const double> weights) {
  spec.validate();
  if (X.rows() < 1) throw std::invalid_argument("regression needs at least one observation");
  if (static_cast<std::size_t>(X.rows()) != y.size())
    throw std::invalid_argument("feature/target length mismatch");
  if (!weights.empty()) {
    if (weights.size() != y.size())
      throw std::invalid_argument("weight length mismatch");
    for (double w : weights)
      if (w < 0.0) throw std::invalid_argument("weights must be nonnegative");
  }
  switch (spec.backend) {
    case RegressorSpec::Backend::TabularMean:
      return FittedRegressor(std::make_shared<TabularMeanImpl>(X, y, weights));
    case RegressorSpec::Backend::RidgeFeatures:
      return FittedRegressor(std::make_shared<RidgeImpl>(X, y, weights, spec.ridge_lambda));
    case RegressorSpec::Backend::BoostedTrees:
      return FittedRegressor(fit_boosted_trees_impl(spec, X, y, weights));
  }
  throw std::invalid_argument("unknown regression backend");
}

StepFunction::StepFunction(std::vector<double> breakpoints, std::vector<double> levels,
                           std::vector<double> level_weights)
    : breakpoints_(std::move(breakpoints)),
      levels_(std::move(levels)),
      level_weights_(std::move(level_weights)) {
  if (levels_.empty()) throw std::invalid_argument("step function needs at least one level");
  if (breakpoints_.size() + 1 != levels_.size())
    throw std::invalid_argument("step function needs one more level than breakpoints");
  for (std::size_t i = 1; i < breakpoints_.size(); ++i)
    if (!(breakpoints_[i - 1] < breakpoints_[i]))
      throw std::invalid_argument("breakpoints must be strictly increasing");
  for (std::size_t i = 1; i < levels_.size(); ++i)
    if (levels_[i] < levels_[i - 1])
      throw std::invalid_argument("levels must be non-decreasing");
  if (level_weights_.empty()) level_weights_.assign(levels_.size(), 0.0);
  if (level_weights_.size() != levels_.size())
    throw std::invalid_argument("level weight length mismatch");
}

int StepFunction::level_index(double x) const {
  // Right-continuous: x == breakpoint belongs to the interval on its right.
  auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), x);
  return static_cast<int>(it - breakpoints_.begin());
}

StepFunction StepFunction::identity_on(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.empty()) throw std::invalid_argument("identity step function needs values");
  std::vector<double> bps;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    bps.push_back(0.5 * (sorted[i - 1] + sorted[i]));
  return StepFunction(std::move(bps), std::move(sorted));
}

std::string StepFunction::to_json() const {
  nlohmann::json j;
  j["breakpoints"] = breakpoints_;
  j["levels"] = levels_;
  return j.dump();
}

StepFunction StepFunction::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  return StepFunction(j.at("breakpoints").get<std::vector<double>>(),
                      j.at("levels").get<std::vector<double>>());
}

namespace {

struct PavaBlock {
  double w = 0.0;
  double wy = 0.0;
  double x_first = 0.0;
  double x_last = 0.0;
  double mean() const { return w > 0.0 ? wy / w : 0.0; }
};

}  // namespace

StepFunction pava_isotonic(std::span<const double> x, std::span<const double> y,
                           std::span<const double> w, double min_pool_weight) {
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("isotonic regression needs data");
  if (y.size() != n || (!w.empty() && w.size() != n))
    throw std::invalid_argument("isotonic input length mismatch");
  if (min_pool_weight < 0.0) throw std::invalid_argument("min pool weight must be >= 0");

  // Zero-weight points contribute nothing to the objective and would create
  // massless levels; drop them up front.
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double wk = w.empty() ? 1.0 : w[k];
    if (wk < 0.0) throw std::invalid_argument("weights must be nonnegative");
    if (wk > 0.0) order.push_back(k);
  }
  if (order.empty()) throw std::invalid_argument("isotonic regression needs positive weight");
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  // Pre-pool ties in x by weighted mean, then run the PAVA stack.
  const std::size_t kept = order.size();
  std::vector<PavaBlock> blocks;
  blocks.reserve(kept);
  std::size_t i = 0;
  while (i < kept) {
    PavaBlock b;
    b.x_first = b.x_last = x[order[i]];
    while (i < kept && x[order[i]] == b.x_first) {
      const double wi = w.empty() ? 1.0 : w[order[i]];
      b.w += wi;
      b.wy += wi * y[order[i]];
      ++i;
    }
    blocks.push_back(b);
    // Merging on >= collapses equal-mean neighbors into one canonical level.
    while (blocks.size() >= 2 &&
           blocks[blocks.size() - 2].mean() >= blocks.back().mean()) {
      PavaBlock top = blocks.back();
      blocks.pop_back();
      blocks.back().w += top.w;
      blocks.back().wy += top.wy;
      blocks.back().x_last = top.x_last;
    }
  }

  // Boundary pooling: merge the lightest block into its lighter neighbor
  // until every level carries at least min_pool_weight.
  while (blocks.size() > 1) {
    std::size_t lightest = 0;
    for (std::size_t b = 1; b < blocks.size(); ++b)
      if (blocks[b].w < blocks[lightest].w) lightest = b;
    if (blocks[lightest].w >= min_pool_weight) break;
    std::size_t into;
    if (lightest == 0) {
      into = 1;
    } else if (lightest + 1 == blocks.size()) {
      into = lightest - 1;
    } else {
      into = blocks[lightest - 1].w <= blocks[lightest + 1].w ? lightest - 1
                                                              : lightest + 1;
    }
    const std::size_t lo = std::min(lightest, into);
    const std::size_t hi = std::max(lightest, into);
    blocks[lo].w += blocks[hi].w;
    blocks[lo].wy += blocks[hi].wy;
    blocks[lo].x_last = blocks[hi].x_last;
    blocks.erase(blocks.begin() + static_cast<std::ptrdiff_t>(hi));
  }

  std::vector<double> bps, levels, weights;
  levels.reserve(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    double lv = blocks[b].mean();
    if (!levels.empty() && lv < levels.back()) lv = levels.back();  // fp guard
    levels.push_back(lv);
    weights.push_back(blocks[b].w);
    if (b + 1 < blocks.size()) {
      double cut = 0.5 * (blocks[b].x_last + blocks[b + 1].x_first);
      if (!(cut > blocks[b].x_last))
        cut = std::nextafter(blocks[b].x_last, std::numeric_limits<double>::infinity());
      bps.push_back(cut);
    }
  }
  return StepFunction(std::move(bps), std::move(levels), std::move(weights));
}

}  // namespace bellman
