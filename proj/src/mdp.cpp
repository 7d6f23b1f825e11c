#include "bellman/mdp.hpp"

#include <cmath>
#include <limits>

namespace bellman {

void TabularMDP::validate() const {
  const int m = num_states();
  if (m < 1) throw std::invalid_argument("MDP needs at least one state");
  if (num_actions < 1) throw std::invalid_argument("MDP needs at least one action");
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (static_cast<int>(transition.size()) != num_actions)
    throw std::invalid_argument("transition tensor has wrong action count");
  for (const auto& P : transition) {
    if (P.rows() != m || P.cols() != m)
      throw std::invalid_argument("transition matrix has wrong shape");
    for (Eigen::Index s = 0; s < m; ++s) {
      double sum = P.row(s).sum();
      if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("transition row sums to " + std::to_string(sum));
      if (P.row(s).minCoeff() < 0.0)
        throw std::invalid_argument("negative transition probability");
    }
  }
  if (reward_mean.rows() != num_actions || reward_mean.cols() != m)
    throw std::invalid_argument("reward matrix has wrong shape");
  if (init_dist.size() != m) throw std::invalid_argument("initial distribution has wrong length");
  if (std::abs(init_dist.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("initial distribution sums to " + std::to_string(init_dist.sum()));
}

double value_under_policy(const QFunction& q, const Policy& pi, int s) {
  double v = 0.0;
  for (int a = 0; a < pi.num_actions(); ++a) {
    const double p = pi.prob(a, s);
    if (p > 0.0) v += p * q(a, s);
  }
  return v;
}

double bellman_target(const QFunction& q, const Policy& pi, const Transition& t,
                      double gamma) {
  if (gamma == 0.0) return t.y0;
  return t.y0 + gamma * value_under_policy(q, pi, t.s1);
}

Eigen::MatrixXd tabular_q_values(const TabularMDP& mdp, const Policy& pi) {
  mdp.validate();
  const int m = mdp.num_states();
  const int na = mdp.num_actions;
  const int dim = m * na;
  // Flatten (a, s) as k = a * m + s and solve (I - gamma P^pi) q = r.
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd rhs(dim);
  for (int a = 0; a < na; ++a) {
    const Eigen::MatrixXd& P = mdp.transition[static_cast<std::size_t>(a)];
    for (int s = 0; s < m; ++s) {
      const int k = a * m + s;
      rhs(k) = mdp.reward_mean(a, s);
      if (mdp.gamma > 0.0) {
        for (int s1 = 0; s1 < m; ++s1) {
          const double ptrans = P(s, s1);
          if (ptrans == 0.0) continue;
          for (int a1 = 0; a1 < na; ++a1) {
            const double ppol = pi.prob(a1, s1);
            if (ppol == 0.0) continue;
            system(k, a1 * m + s1) -= mdp.gamma * ptrans * ppol;
          }
        }
      }
    }
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
  Eigen::VectorXd flat = lu.solve(rhs);
  const double residual = (system * flat - rhs).cwiseAbs().maxCoeff();
  if (!(residual <= 1e-10))
    throw NumericalError("Bellman solve residual " + std::to_string(residual));
  Eigen::MatrixXd q(na, m);
  for (int a = 0; a < na; ++a)
    for (int s = 0; s < m; ++s) q(a, s) = flat(a * m + s);
  return q;
}

QFunction tabular_q_solve(const TabularMDP& mdp, const Policy& pi) {
  return QFunction::tabular(tabular_q_values(mdp, pi));
}

OccupancyRatio tabular_occupancy_ratio(const TabularMDP& mdp, const Policy& pi,
                                       const Policy& behavior, double truncation) {
  mdp.validate();
  if (!(truncation > 0.0)) throw std::invalid_argument("truncation must be positive");
  const int m = mdp.num_states();
  const int na = mdp.num_actions;
  const bool clipping = std::isfinite(truncation);

  // State-marginal chain under pi: P_pi(s, s') = sum_a pi(a|s) P_a(s, s').
  Eigen::MatrixXd chain = Eigen::MatrixXd::Zero(m, m);
  for (int a = 0; a < na; ++a) {
    for (int s = 0; s < m; ++s) {
      const double p = pi.prob(a, s);
      if (p > 0.0) chain.row(s) += p * mdp.transition[static_cast<std::size_t>(a)].row(s);
    }
  }
  // Discounted occupancy measure nu = (I - gamma P_pi^T)^{-1} init.
  Eigen::MatrixXd system =
      Eigen::MatrixXd::Identity(m, m) - mdp.gamma * chain.transpose();
  Eigen::VectorXd nu = Eigen::PartialPivLU<Eigen::MatrixXd>(system).solve(mdp.init_dist);

  OccupancyRatio out;
  out.value = Eigen::MatrixXd::Zero(na, m);
  out.clipped = Eigen::MatrixXd::Zero(na, m);
  for (int s = 0; s < m; ++s) {
    const double init = mdp.init_dist(s);
    double u;
    bool state_clipped = false;
    if (init > 0.0) {
      u = nu(s) / init;
      if (clipping && u > truncation) {
        u = truncation;
        state_clipped = true;
      }
    } else if (nu(s) <= 1e-300) {
      u = 0.0;  // unreachable under pi as well
    } else if (clipping) {
      u = truncation;
      state_clipped = true;
    } else {
      throw std::domain_error("intertemporal overlap violation at state " +
                              std::to_string(s) + " with no truncation");
    }
    for (int a = 0; a < na; ++a) {
      const double ppi = pi.prob(a, s);
      const double pb = behavior.prob(a, s);
      double d;
      bool cell_clipped = state_clipped;
      if (ppi == 0.0) {
        d = 0.0;
        cell_clipped = false;
      } else if (pb > 0.0) {
        d = ppi / pb * u;
        if (clipping && d > truncation) {
          d = truncation;
          cell_clipped = true;
        }
      } else if (clipping) {
        d = truncation;
        cell_clipped = true;
      } else {
        throw std::domain_error("policy overlap violation at state " +
                                std::to_string(s) + ", action " + std::to_string(a));
      }
      out.value(a, s) = d;
      out.clipped(a, s) = cell_clipped ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace bellman
