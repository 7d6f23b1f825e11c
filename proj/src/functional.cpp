#include "bellman/functional.hpp"

namespace bellman {

FunctionalSpec FunctionalSpec::policy_value(Policy pi) {
  FunctionalSpec f;
  f.kind_ = Kind::PolicyValue;
  f.num_actions_ = pi.num_actions();
  f.policy_ = std::move(pi);
  return f;
}

FunctionalSpec FunctionalSpec::ate_contrast(int treated_arm, int control_arm,
                                            int num_actions) {
  if (treated_arm < 0 || treated_arm >= num_actions || control_arm < 0 ||
      control_arm >= num_actions || treated_arm == control_arm)
    throw std::invalid_argument("contrast arms must be distinct valid actions");
  FunctionalSpec f;
  f.kind_ = Kind::AteContrast;
  f.num_actions_ = num_actions;
  f.treated_ = treated_arm;
  f.control_ = control_arm;
  return f;
}

FunctionalSpec FunctionalSpec::custom_linear(
    int num_actions, std::function<double(int, int, const QEval&)> m) {
  if (num_actions < 1) throw std::invalid_argument("functional needs an action set");
  if (!m) throw std::invalid_argument("custom functional needs a map");
  FunctionalSpec f;
  f.kind_ = Kind::CustomLinear;
  f.num_actions_ = num_actions;
  f.custom_ = std::move(m);
  return f;
}

double FunctionalSpec::apply(int s, int a, const QEval& q) const {
  switch (kind_) {
    case Kind::PolicyValue: {
      double v = 0.0;
      for (int a1 = 0; a1 < num_actions_; ++a1) {
        const double p = policy_.prob(a1, s);
        if (p > 0.0) v += p * q(a1, s);
      }
      return v;
    }
    case Kind::AteContrast:
      return q(treated_, s) - q(control_, s);
    case Kind::CustomLinear:
      return custom_(s, a, q);
  }
  throw std::logic_error("unreachable functional kind");
}

bool FunctionalSpec::eval_coefficients(int s, int a, std::span<double> coefs) const {
  (void)a;
  if (coefs.size() != static_cast<std::size_t>(num_actions_))
    throw std::invalid_argument("coefficient buffer has wrong size");
  switch (kind_) {
    case Kind::PolicyValue:
      for (int a1 = 0; a1 < num_actions_; ++a1)
        coefs[static_cast<std::size_t>(a1)] = policy_.prob(a1, s);
      return true;
    case Kind::AteContrast:
      for (auto& c : coefs) c = 0.0;
      coefs[static_cast<std::size_t>(treated_)] = 1.0;
      coefs[static_cast<std::size_t>(control_)] = -1.0;
      return true;
    case Kind::CustomLinear:
      return false;
  }
  return false;
}

Eigen::VectorXd FunctionalSpec::apply_basis(int s, int a, const FeatureMap& phi) const {
  std::vector<double> coefs(static_cast<std::size_t>(num_actions_));
  if (eval_coefficients(s, a, coefs)) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(phi.dim);
    for (int a1 = 0; a1 < num_actions_; ++a1)
      if (coefs[static_cast<std::size_t>(a1)] != 0.0)
        out += coefs[static_cast<std::size_t>(a1)] * phi(a1, s);
    return out;
  }
  Eigen::VectorXd out(phi.dim);
  for (int j = 0; j < phi.dim; ++j) {
    auto basis = [&phi, j](int aa, int ss) { return phi(aa, ss)(j); };
    out(j) = custom_(s, a, basis);
  }
  return out;
}

}  // namespace bellman
