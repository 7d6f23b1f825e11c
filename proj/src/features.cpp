#include "bellman/features.hpp"

#include <map>
#include <memory>
#include <utility>

namespace bellman {

FeatureMap FeatureMap::one_hot_grid(int num_actions, int num_states) {
  if (num_actions < 1 || num_states < 1)
    throw std::invalid_argument("one-hot grid needs positive dimensions");
  FeatureMap f;
  f.dim = num_actions * num_states;
  f.phi = [num_actions, num_states](int a, int s) {
    if (a < 0 || a >= num_actions || s < 0 || s >= num_states)
      throw std::domain_error("state-action outside one-hot grid");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(num_actions * num_states);
    v(a * num_states + s) = 1.0;
    return v;
  };
  return f;
}

FeatureMap FeatureMap::one_hot_observed(const TransitionDataset& data) {
  auto index = std::make_shared<std::map<std::pair<int, int>, int>>();
  for (int i = 0; i < data.n(); ++i) {
    const auto key = std::make_pair(data[i].a0, data[i].s0);
    index->emplace(key, 0);
  }
  int dim = 0;
  for (auto& [key, value] : *index) value = dim++;
  FeatureMap f;
  f.dim = dim;
  f.phi = [index, dim](int a, int s) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    auto it = index->find({a, s});
    if (it != index->end()) v(it->second) = 1.0;
    return v;
  };
  return f;
}

FeatureMap FeatureMap::action_and_coords(const StateAlphabet& states) {
  FeatureMap f;
  f.dim = 1 + states.coord_dim();
  f.phi = [states](int a, int s) {
    auto c = states.coords(s);
    Eigen::VectorXd v(1 + static_cast<Eigen::Index>(c.size()));
    v(0) = a;
    for (std::size_t k = 0; k < c.size(); ++k)
      v(static_cast<Eigen::Index>(k) + 1) = c[k];
    return v;
  };
  return f;
}

FeatureMap FeatureMap::state_action_codes() {
  FeatureMap f;
  f.dim = 2;
  f.phi = [](int a, int s) {
    Eigen::VectorXd v(2);
    v << a, s;
    return v;
  };
  return f;
}

}  // namespace bellman
