#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <queue>

#include "bellman/regression.hpp"

namespace bellman {

int RegressionTree::leaf_of(std::span<const double> x) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const Node& nd = nodes[static_cast<std::size_t>(node)];
    node = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].leaf_ordinal;
}

double RegressionTree::predict(std::span<const double> x) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const Node& nd = nodes[static_cast<std::size_t>(node)];
    node = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

double BoostedTreesModel::predict(std::span<const double> x) const {
  double out = base_value_;
  for (const RegressionTree& t : trees_) out += learning_rate_ * t.predict(x);
  return out;
}

int BoostedTreesModel::total_leaves() const {
  int total = 0;
  for (const RegressionTree& t : trees_) total += t.num_leaves;
  return total;
}

namespace {

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
  double left_w = 0.0, left_wy = 0.0;
  double right_w = 0.0, right_wy = 0.0;
};

// Best single split of `rows` by SSE reduction. Candidate thresholds are
// midpoints between consecutive distinct feature values; aggregation runs in
// a permutation-invariant order (sorted by value, then target, then weight).
SplitChoice best_split(const Eigen::MatrixXd& X, std::span<const double> resid,
                       std::span<const double> w, const std::vector<int>& rows,
                       double min_leaf_weight) {
  SplitChoice best;
  double total_w = 0.0, total_wy = 0.0;
  for (int i : rows) {
    total_w += w[static_cast<std::size_t>(i)];
    total_wy += w[static_cast<std::size_t>(i)] * resid[static_cast<std::size_t>(i)];
  }
  if (total_w <= 0.0) return best;
  const double parent_score = total_wy * total_wy / total_w;

  std::vector<int> sorted = rows;
  for (int f = 0; f < X.cols(); ++f) {
    std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
      const double va = X(a, f), vb = X(b, f);
      if (va != vb) return va < vb;
      const double ra = resid[static_cast<std::size_t>(a)], rb = resid[static_cast<std::size_t>(b)];
      if (ra != rb) return ra < rb;
      return w[static_cast<std::size_t>(a)] < w[static_cast<std::size_t>(b)];
    });
    double left_w = 0.0, left_wy = 0.0;
    for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
      const int i = sorted[k];
      left_w += w[static_cast<std::size_t>(i)];
      left_wy += w[static_cast<std::size_t>(i)] * resid[static_cast<std::size_t>(i)];
      const double v = X(i, f), vnext = X(sorted[k + 1], f);
      if (v == vnext) continue;
      const double right_w = total_w - left_w;
      if (left_w < min_leaf_weight || right_w < min_leaf_weight) continue;
      if (left_w <= 0.0 || right_w <= 0.0) continue;
      const double right_wy = total_wy - left_wy;
      const double gain =
          left_wy * left_wy / left_w + right_wy * right_wy / right_w - parent_score;
      if (gain > best.gain + 1e-15 ||
          (!best.found && gain > 0.0)) {
        best.found = true;
        best.feature = f;
        best.threshold = 0.5 * (v + vnext);
        best.gain = gain;
        best.left_w = left_w;
        best.left_wy = left_wy;
        best.right_w = right_w;
        best.right_wy = right_wy;
      }
    }
  }
  return best;
}

struct OpenNode {
  int node_id = 0;
  int depth = 0;
  std::vector<int> rows;
  SplitChoice split;
  int order = 0;  // creation order breaks gain ties deterministically
};

struct NodeCmp {
  bool operator()(const OpenNode& a, const OpenNode& b) const {
    if (a.split.gain != b.split.gain) return a.split.gain < b.split.gain;
    return a.order > b.order;
  }
};

RegressionTree fit_tree(const Eigen::MatrixXd& X, std::span<const double> resid,
                        std::span<const double> w, const RegressorSpec& spec) {
  RegressionTree tree;
  std::vector<int> all(static_cast<std::size_t>(X.rows()));
  std::iota(all.begin(), all.end(), 0);

  auto leaf_value = [&](const std::vector<int>& rows) {
    double sw = 0.0, swy = 0.0;
    for (int i : rows) {
      sw += w[static_cast<std::size_t>(i)];
      swy += w[static_cast<std::size_t>(i)] * resid[static_cast<std::size_t>(i)];
    }
    return sw > 0.0 ? swy / sw : 0.0;
  };

  tree.nodes.push_back({});
  tree.nodes[0].value = leaf_value(all);

  // Best-first growth under depth and leaf-count caps.
  std::priority_queue<OpenNode, std::vector<OpenNode>, NodeCmp> open;
  int order = 0;
  OpenNode root{0, 0, std::move(all), {}, order++};
  root.split = best_split(X, resid, w, root.rows, spec.min_leaf_weight);
  if (root.split.found) open.push(std::move(root));

  int leaves = 1;
  const int leaf_cap = spec.max_leaves > 0 ? spec.max_leaves
                                           : std::numeric_limits<int>::max();
  while (!open.empty() && leaves < leaf_cap) {
    OpenNode cur = open.top();
    open.pop();
    const SplitChoice& sp = cur.split;

    std::vector<int> left_rows, right_rows;
    left_rows.reserve(cur.rows.size());
    for (int i : cur.rows) {
      if (X(i, sp.feature) <= sp.threshold)
        left_rows.push_back(i);
      else
        right_rows.push_back(i);
    }

    const int left_id = static_cast<int>(tree.nodes.size());
    const int right_id = left_id + 1;
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    tree.nodes[static_cast<std::size_t>(left_id)].value = sp.left_wy / sp.left_w;
    tree.nodes[static_cast<std::size_t>(right_id)].value = sp.right_wy / sp.right_w;

    RegressionTree::Node& parent = tree.nodes[static_cast<std::size_t>(cur.node_id)];
    parent.feature = sp.feature;
    parent.threshold = sp.threshold;
    parent.left = left_id;
    parent.right = right_id;
    ++leaves;

    if (cur.depth + 1 < spec.tree_depth) {
      OpenNode ln{left_id, cur.depth + 1, std::move(left_rows), {}, order++};
      ln.split = best_split(X, resid, w, ln.rows, spec.min_leaf_weight);
      if (ln.split.found) open.push(std::move(ln));
      OpenNode rn{right_id, cur.depth + 1, std::move(right_rows), {}, order++};
      rn.split = best_split(X, resid, w, rn.rows, spec.min_leaf_weight);
      if (rn.split.found) open.push(std::move(rn));
    }
  }

  int ordinal = 0;
  for (auto& node : tree.nodes)
    if (node.feature < 0) node.leaf_ordinal = ordinal++;
  tree.num_leaves = ordinal;
  return tree;
}

class BoostedTreesImpl : public FittedRegressor::Impl {
 public:
  BoostedTreesImpl(const RegressorSpec& spec, const Eigen::MatrixXd& X,
                   std::span<const double> y, std::span<const double> w_in) {
    const std::size_t n = static_cast<std::size_t>(X.rows());
    std::vector<double> w(w_in.begin(), w_in.end());
    if (w.empty()) w.assign(n, 1.0);
    double sw = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sw += w[i];
      swy += w[i] * y[i];
    }
    const double base = sw > 0.0 ? swy / sw : 0.0;

    std::vector<double> resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - base;

    // Row-major copy gives contiguous per-record feature spans.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xr = X;
    const std::size_t d = static_cast<std::size_t>(X.cols());

    std::vector<RegressionTree> trees;
    trees.reserve(static_cast<std::size_t>(spec.tree_rounds));
    for (int round = 0; round < spec.tree_rounds; ++round) {
      RegressionTree tree = fit_tree(X, resid, w, spec);
      if (tree.num_leaves <= 1 && round > 0) break;  // nothing left to fit
      for (std::size_t i = 0; i < n; ++i) {
        std::span<const double> row(xr.data() + i * d, d);
        resid[i] -= spec.learning_rate * tree.predict(row);
      }
      trees.push_back(std::move(tree));
    }
    model_ = std::make_unique<BoostedTreesModel>(base, spec.learning_rate,
                                                 std::move(trees));
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) sse += w[i] * resid[i] * resid[i];
    mse_ = sw > 0.0 ? sse / sw : 0.0;
  }

  double predict(std::span<const double> x) const override {
    return model_->predict(x);
  }
  double in_sample_mse() const override { return mse_; }
  const BoostedTreesModel* trees() const override { return model_.get(); }

 private:
  std::unique_ptr<BoostedTreesModel> model_;
  double mse_ = 0.0;
};

}  // namespace

std::shared_ptr<const FittedRegressor::Impl> fit_boosted_trees_impl(
    const RegressorSpec& spec, const Eigen::MatrixXd& X, std::span<const double> y,
    std::span<const double> w) {
  return std::make_shared<BoostedTreesImpl>(spec, X, y, w);
}

}  // namespace bellman
