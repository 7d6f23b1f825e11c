#include "bellman/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "json.hpp"

namespace bellman {

QFunction CalibratedQ::as_qfunction() const {
  CalibratedQ self = *this;
  return QFunction(QFunction::Kind::Calibrated,
                   [self](int a, int s) { return self(a, s); });
}

std::string CalibratedQ::to_json() const {
  nlohmann::json j;
  j["base"] = "qfunction";
  j["calibrator"] = nlohmann::json::parse(calibrator_.to_json());
  return j.dump();
}

namespace detail {

CalibArrays build_calib_arrays(const TransitionDataset& data, const Policy& pi,
                               const std::vector<int>* fold_of_record,
                               const std::vector<QFunction>& bases) {
  const int n = data.n();
  const int na = data.num_actions();
  CalibArrays arr;
  arr.x.resize(static_cast<std::size_t>(n));
  arr.y.resize(static_cast<std::size_t>(n));
  arr.next_score = Eigen::MatrixXd::Zero(n, na);
  arr.pi_next = Eigen::MatrixXd::Zero(n, na);
  for (int i = 0; i < n; ++i) {
    const int fold = fold_of_record ? (*fold_of_record)[static_cast<std::size_t>(i)] : 0;
    if (fold < 0 || fold >= static_cast<int>(bases.size()))
      throw std::invalid_argument("record " + std::to_string(i) +
                                  " has no fold base assigned");
    const QFunction& base = bases[static_cast<std::size_t>(fold)];
    arr.x[static_cast<std::size_t>(i)] = base(data[i].a0, data[i].s0);
    arr.y[static_cast<std::size_t>(i)] = data[i].y0;
    for (int a = 0; a < na; ++a) {
      const double p = pi.prob(a, data[i].s1);
      arr.pi_next(i, a) = p;
      if (p > 0.0) arr.next_score(i, a) = base(a, data[i].s1);
    }
  }
  return arr;
}

namespace {

// Re-solves the per-level values exactly: v = mean(Y) + gamma * W v on the
// level bins of `f`, merging adjacent bins whenever the solve violates
// monotonicity. Returns the refined step function.
StepFunction refine_levels(const CalibArrays& arr, std::span<const double> w,
                           double gamma, const StepFunction& f) {
  const int n = static_cast<int>(arr.x.size());
  const int na = static_cast<int>(arr.pi_next.cols());
  const int l0 = f.num_levels();

  std::vector<int> bin0(static_cast<std::size_t>(n));
  Eigen::MatrixXi next_bin0 = Eigen::MatrixXi::Zero(n, na);
  for (int i = 0; i < n; ++i) {
    bin0[static_cast<std::size_t>(i)] = f.level_index(arr.x[static_cast<std::size_t>(i)]);
    for (int a = 0; a < na; ++a)
      if (arr.pi_next(i, a) > 0.0)
        next_bin0(i, a) = f.level_index(arr.next_score(i, a));
  }

  std::vector<int> bin_map(static_cast<std::size_t>(l0));
  std::iota(bin_map.begin(), bin_map.end(), 0);
  int levels = l0;

  Eigen::VectorXd v;
  Eigen::VectorXd mass;
  while (true) {
    Eigen::VectorXd ybar = Eigen::VectorXd::Zero(levels);
    mass = Eigen::VectorXd::Zero(levels);
    Eigen::MatrixXd trans = Eigen::MatrixXd::Zero(levels, levels);
    for (int i = 0; i < n; ++i) {
      const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
      if (wi == 0.0) continue;
      const int b = bin_map[static_cast<std::size_t>(bin0[static_cast<std::size_t>(i)])];
      mass(b) += wi;
      ybar(b) += wi * arr.y[static_cast<std::size_t>(i)];
      for (int a = 0; a < na; ++a) {
        const double p = arr.pi_next(i, a);
        if (p > 0.0)
          trans(b, bin_map[static_cast<std::size_t>(next_bin0(i, a))]) += wi * p;
      }
    }
    for (int b = 0; b < levels; ++b) {
      if (mass(b) <= 0.0)
        throw NumericalError("calibration level " + std::to_string(b) + " has no mass");
      ybar(b) /= mass(b);
      trans.row(b) /= mass(b);
    }
    Eigen::MatrixXd system =
        Eigen::MatrixXd::Identity(levels, levels) - gamma * trans;
    v = Eigen::PartialPivLU<Eigen::MatrixXd>(system).solve(ybar);

    int violation = -1;
    for (int b = 0; b + 1 < levels; ++b) {
      if (v(b) > v(b + 1)) {
        violation = b;
        break;
      }
    }
    if (violation < 0) break;
    for (auto& m : bin_map)
      if (m > violation) --m;
    --levels;
  }

  // Breakpoints survive where adjacent original bins map to distinct levels.
  std::vector<double> bps, lv, lw;
  for (int b = 0; b + 1 < l0; ++b)
    if (bin_map[static_cast<std::size_t>(b)] !=
        bin_map[static_cast<std::size_t>(b + 1)])
      bps.push_back(f.breakpoints()[static_cast<std::size_t>(b)]);
  lv.resize(static_cast<std::size_t>(levels));
  lw.resize(static_cast<std::size_t>(levels));
  for (int b = 0; b < levels; ++b) {
    lv[static_cast<std::size_t>(b)] = v(b);
    lw[static_cast<std::size_t>(b)] = mass(b);
  }
  for (std::size_t b = 1; b < lv.size(); ++b)
    if (lv[b] < lv[b - 1]) lv[b] = lv[b - 1];  // fp guard
  return StepFunction(std::move(bps), std::move(lv), std::move(lw));
}

}  // namespace

StepFunction calibrate_arrays(const CalibArrays& arr, std::span<const double> w,
                              double gamma, const CalibrationConfig& cfg,
                              CalibrationReport* report) {
  const int n = static_cast<int>(arr.x.size());
  if (n < 1) throw std::invalid_argument("calibration needs data");
  if (cfg.max_iters < 1) throw std::invalid_argument("calibration needs K >= 1");
  const double tol = cfg.tol > 0.0 ? cfg.tol : 1.0 / n;
  const int na = static_cast<int>(arr.pi_next.cols());

  double total_w = 0.0;
  if (w.empty())
    total_w = n;
  else
    total_w = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total_w > 0.0)) throw std::invalid_argument("weights sum to zero");

  std::vector<double> targets(static_cast<std::size_t>(n));
  std::vector<double> prev(arr.x.begin(), arr.x.end());  // q*(0) = base
  StepFunction f;
  bool have_f = false;
  bool converged = false;
  int iterations = 0;
  double increment = 0.0;

  for (int k = 0; k < cfg.max_iters; ++k) {
    for (int i = 0; i < n; ++i) {
      double v = 0.0;
      for (int a = 0; a < na; ++a) {
        const double p = arr.pi_next(i, a);
        if (p > 0.0) {
          const double score = arr.next_score(i, a);
          v += p * (have_f ? f(score) : score);
        }
      }
      targets[static_cast<std::size_t>(i)] =
          arr.y[static_cast<std::size_t>(i)] + gamma * v;
    }
    f = pava_isotonic(arr.x, targets, w, cfg.min_pool_weight);
    have_f = true;
    ++iterations;

    double inc2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
      const double qi = f(arr.x[static_cast<std::size_t>(i)]);
      const double dq = qi - prev[static_cast<std::size_t>(i)];
      inc2 += wi * dq * dq;
      prev[static_cast<std::size_t>(i)] = qi;
    }
    increment = std::sqrt(inc2 / total_w);
    if (increment < tol) {
      converged = true;
      break;
    }
  }

  if (cfg.exact_refinement && gamma > 0.0) f = refine_levels(arr, w, gamma, f);

  if (report) {
    report->iterations = iterations;
    report->final_increment = increment;
    report->converged = converged;
    report->levels = f.num_levels();
    report->max_orthogonality = orthogonality_from_arrays(arr, f, w, gamma);
  }
  return f;
}

double orthogonality_from_arrays(const CalibArrays& arr, const StepFunction& f,
                                 std::span<const double> w, double gamma) {
  const int n = static_cast<int>(arr.x.size());
  const int na = static_cast<int>(arr.pi_next.cols());
  double total_w = w.empty() ? static_cast<double>(n)
                             : std::accumulate(w.begin(), w.end(), 0.0);
  // Levels are grouped by calibrated value, not bin: bins sharing a value
  // form one level set.
  std::map<double, double> residual;
  for (int i = 0; i < n; ++i) {
    const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
    if (wi == 0.0) continue;
    const double qi = f(arr.x[static_cast<std::size_t>(i)]);
    double v = 0.0;
    for (int a = 0; a < na; ++a) {
      const double p = arr.pi_next(i, a);
      if (p > 0.0) v += p * f(arr.next_score(i, a));
    }
    residual[qi] += wi * (arr.y[static_cast<std::size_t>(i)] + gamma * v - qi);
  }
  double worst = 0.0;
  for (const auto& [value, sum] : residual) worst = std::max(worst, std::abs(sum));
  return worst / total_w;
}

}  // namespace detail

CalibrationResult fitted_q_calibration(const TransitionDataset& data,
                                       const Policy& pi, const QFunction& base,
                                       double gamma, const CalibrationConfig& cfg,
                                       std::span<const double> weights) {
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must lie in [0, 1)");
  std::vector<QFunction> bases{base};
  detail::CalibArrays arr = detail::build_calib_arrays(data, pi, nullptr, bases);
  CalibrationResult out;
  StepFunction f = detail::calibrate_arrays(arr, weights, gamma, cfg, &out.report);
  out.calibrated = CalibratedQ(base, std::move(f));
  return out;
}

CrossFittedCalibration cross_fitted_calibration(
    const TransitionDataset& data, const Policy& pi,
    const std::vector<int>& fold_of_record, const std::vector<QFunction>& fold_bases,
    double gamma, const CalibrationConfig& cfg, std::span<const double> weights) {
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (fold_bases.empty()) throw std::invalid_argument("need at least one fold base");
  if (fold_of_record.size() != static_cast<std::size_t>(data.n()))
    throw std::invalid_argument("every record needs a fold assignment");
  detail::CalibArrays arr =
      detail::build_calib_arrays(data, pi, &fold_of_record, fold_bases);
  CrossFittedCalibration out;
  out.fold_of_record = fold_of_record;
  StepFunction f = detail::calibrate_arrays(arr, weights, gamma, cfg, &out.report);
  out.folds.reserve(fold_bases.size());
  for (const QFunction& base : fold_bases) out.folds.emplace_back(base, f);
  return out;
}

double check_bellman_orthogonality(const TransitionDataset& data, const Policy& pi,
                                   const CalibratedQ& qstar, double gamma,
                                   std::span<const double> weights) {
  std::vector<QFunction> bases{qstar.base()};
  detail::CalibArrays arr = detail::build_calib_arrays(data, pi, nullptr, bases);
  return detail::orthogonality_from_arrays(arr, qstar.calibrator(), weights, gamma);
}

double check_bellman_orthogonality(const TransitionDataset& data, const Policy& pi,
                                   const CrossFittedCalibration& qstar, double gamma,
                                   std::span<const double> weights) {
  if (qstar.folds.empty()) throw std::invalid_argument("empty cross-fitted calibration");
  std::vector<QFunction> bases;
  bases.reserve(qstar.folds.size());
  for (const CalibratedQ& cq : qstar.folds) bases.push_back(cq.base());
  detail::CalibArrays arr =
      detail::build_calib_arrays(data, pi, &qstar.fold_of_record, bases);
  return detail::orthogonality_from_arrays(arr, qstar.folds.front().calibrator(),
                                           weights, gamma);
}

}  // namespace bellman
