#include "bellman/simulation.hpp"

#include <array>
#include <cmath>

namespace bellman {

namespace {

constexpr int kLevels = 3;  // every coordinate lives in {0, 1, 2}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double reward_prob(int z, int e, int c, int t, int o) {
  return sigmoid(-0.5 + (o > 0 ? 1.0 : 0.0) + t / 2.0 + 0.3 * z +
                 (e > 0 ? 0.5 : 0.0) - c / 2.0);
}

// Engagement moves up with probability p_up and down otherwise.
double engagement_up_prob(int z, int c) {
  const double base = 0.8 - c / 5.0;
  return z == 0 ? base : std::min(0.1 + base, 1.0);
}

double churn_up_prob(int z) { return z == 0 ? 0.6 : 0.4; }

void walk_dist(int value, double p_up, std::array<double, kLevels>& out) {
  out.fill(0.0);
  out[static_cast<std::size_t>(std::min(value + 1, kLevels - 1))] += p_up;
  out[static_cast<std::size_t>(std::max(value - 1, 0))] += 1.0 - p_up;
}

struct InitDists {
  std::array<double, kLevels> engagement{0.5, 0.3, 0.2};
  std::array<double, kLevels> churn{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::array<double, kLevels> tenure{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::array<double, kLevels> overlap{7.0 / 12, 3.0 / 12, 2.0 / 12};
};

}  // namespace

void SimConfig::validate() const {
  if (n < 1) throw std::invalid_argument("simulation needs n >= 1");
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("beta must lie in [0, 1]");
  if (treat_prob <= 0.0 || treat_prob >= 1.0)
    throw std::invalid_argument("treatment probability must lie in (0, 1)");
}

StateAlphabet dgp_alphabet() { return StateAlphabet::grid({3, 3, 3, 3}); }

int Rng::categorical(std::span<const double> probs) {
  const double u = uniform();
  double cum = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    cum += probs[k];
    if (u < cum) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

TabularMDP analytic_mdp(const SimConfig& cfg) {
  cfg.validate();
  const StateAlphabet states = dgp_alphabet();
  const int m = states.size();
  TabularMDP mdp;
  mdp.states = states;
  mdp.num_actions = 2;
  mdp.gamma = cfg.gamma;
  mdp.transition.assign(2, Eigen::MatrixXd::Zero(m, m));
  mdp.reward_mean.resize(2, m);

  for (int z = 0; z < 2; ++z) {
    Eigen::MatrixXd& P = mdp.transition[static_cast<std::size_t>(z)];
    for (int s = 0; s < m; ++s) {
      auto c = states.coords(s);
      const int e0 = c[0], c0 = c[1], t0 = c[2], o0 = c[3];
      mdp.reward_mean(z, s) = reward_prob(z, e0, c0, t0, o0);

      std::array<double, kLevels> pe, pc;
      walk_dist(e0, engagement_up_prob(z, c0), pe);
      walk_dist(c0, churn_up_prob(z), pc);
      const int t1 = std::min(t0 + 1, kLevels - 1);
      std::array<double, kLevels> po{};
      if (z == 1) {
        po[static_cast<std::size_t>(std::min(o0 + 1, kLevels - 1))] += cfg.beta;
        po[0] += 1.0 - cfg.beta;
      } else {
        po[0] = 1.0;
      }

      for (int e1 = 0; e1 < kLevels; ++e1) {
        if (pe[static_cast<std::size_t>(e1)] == 0.0) continue;
        for (int c1 = 0; c1 < kLevels; ++c1) {
          if (pc[static_cast<std::size_t>(c1)] == 0.0) continue;
          for (int o1 = 0; o1 < kLevels; ++o1) {
            const double p = pe[static_cast<std::size_t>(e1)] *
                             pc[static_cast<std::size_t>(c1)] *
                             po[static_cast<std::size_t>(o1)];
            if (p == 0.0) continue;
            const std::array<int, 4> next{e1, c1, t1, o1};
            P(s, states.code_of(next)) += p;
          }
        }
      }
    }
  }

  InitDists init;
  mdp.init_dist.resize(m);
  for (int s = 0; s < m; ++s) {
    auto c = states.coords(s);
    mdp.init_dist(s) = init.engagement[static_cast<std::size_t>(c[0])] *
                       init.churn[static_cast<std::size_t>(c[1])] *
                       init.tenure[static_cast<std::size_t>(c[2])] *
                       init.overlap[static_cast<std::size_t>(c[3])];
  }
  mdp.validate();
  return mdp;
}

TransitionDataset generate_dataset(const SimConfig& cfg) {
  cfg.validate();
  const StateAlphabet states = dgp_alphabet();
  InitDists init;
  Rng rng(cfg.seed);

  std::vector<Transition> records;
  records.reserve(static_cast<std::size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) {
    const int e0 = rng.categorical(init.engagement);
    const int c0 = rng.categorical(init.churn);
    const int t0 = rng.categorical(init.tenure);
    const int o0 = rng.categorical(init.overlap);
    const int z = rng.bernoulli(cfg.treat_prob) ? 1 : 0;
    const double y = rng.bernoulli(reward_prob(z, e0, c0, t0, o0)) ? 1.0 : 0.0;

    const int e1 = rng.bernoulli(engagement_up_prob(z, c0))
                       ? std::min(e0 + 1, kLevels - 1)
                       : std::max(e0 - 1, 0);
    const int c1 = rng.bernoulli(churn_up_prob(z)) ? std::min(c0 + 1, kLevels - 1)
                                                   : std::max(c0 - 1, 0);
    const int t1 = std::min(t0 + 1, kLevels - 1);
    const bool carry = rng.bernoulli(cfg.beta);
    const int o1 = (z == 1 && carry) ? std::min(o0 + 1, kLevels - 1) : 0;

    Transition rec;
    rec.s0 = states.code_of(std::array<int, 4>{e0, c0, t0, o0});
    rec.a0 = z;
    rec.y0 = y;
    rec.s1 = states.code_of(std::array<int, 4>{e1, c1, t1, o1});
    records.push_back(rec);
  }
  return TransitionDataset(states, 2, std::move(records));
}

SimTruth oracle_truth(const SimConfig& cfg) {
  const TabularMDP mdp = analytic_mdp(cfg);
  SimTruth truth;
  truth.q_values.resize(2, mdp.num_states());
  std::array<double, 2> psi{0.0, 0.0};
  for (int z = 0; z < 2; ++z) {
    const Eigen::MatrixXd q = tabular_q_values(mdp, Policy::deterministic(z, 2));
    truth.q_values.row(z) = q.row(z);
    psi[static_cast<std::size_t>(z)] = q.row(z).dot(mdp.init_dist.transpose());
  }
  truth.psi_control = psi[0];
  truth.psi_treated = psi[1];
  truth.true_ate = psi[1] - psi[0];
  return truth;
}

}  // namespace bellman
