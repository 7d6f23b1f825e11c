#include "bellman/types.hpp"

#include <cmath>

namespace bellman {

StateAlphabet StateAlphabet::grid(std::vector<int> dims) {
  if (dims.empty()) throw std::invalid_argument("grid alphabet needs at least one dimension");
  long total = 1;
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("grid dimension must be >= 1");
    total *= d;
    if (total > 10'000'000) throw std::invalid_argument("grid alphabet too large");
  }
  StateAlphabet a;
  a.dims_ = dims;
  a.coords_.resize(static_cast<std::size_t>(total));
  for (long code = 0; code < total; ++code) {
    std::vector<int> c(dims.size());
    long rest = code;
    for (int k = static_cast<int>(dims.size()) - 1; k >= 0; --k) {
      c[static_cast<std::size_t>(k)] = static_cast<int>(rest % dims[static_cast<std::size_t>(k)]);
      rest /= dims[static_cast<std::size_t>(k)];
    }
    a.coords_[static_cast<std::size_t>(code)] = std::move(c);
  }
  return a;
}

StateAlphabet StateAlphabet::indexed(int num_states) {
  if (num_states < 1) throw std::invalid_argument("alphabet needs at least one state");
  StateAlphabet a;
  a.coords_.resize(static_cast<std::size_t>(num_states));
  for (int i = 0; i < num_states; ++i) a.coords_[static_cast<std::size_t>(i)] = {i};
  return a;
}

int StateAlphabet::code_of(std::span<const int> coords) const {
  if (dims_.empty()) throw std::invalid_argument("code_of requires a grid alphabet");
  if (coords.size() != dims_.size())
    throw std::invalid_argument("coordinate arity mismatch");
  long code = 0;
  for (std::size_t k = 0; k < dims_.size(); ++k) {
    if (coords[k] < 0 || coords[k] >= dims_[k])
      throw std::domain_error("coordinate outside grid range");
    code = code * dims_[k] + coords[k];
  }
  return static_cast<int>(code);
}

TransitionDataset::TransitionDataset(StateAlphabet alphabet, int num_actions,
                                     std::vector<Transition> records)
    : alphabet_(std::move(alphabet)),
      num_actions_(num_actions),
      records_(std::move(records)) {
  if (records_.empty()) throw std::invalid_argument("dataset must contain at least one transition");
  if (num_actions_ < 1) throw std::invalid_argument("dataset needs at least one action");
  for (const Transition& t : records_) {
    alphabet_.require(t.s0);
    alphabet_.require(t.s1);
    if (t.a0 < 0 || t.a0 >= num_actions_)
      throw std::domain_error("action code outside action set");
    if (!std::isfinite(t.y0)) throw std::invalid_argument("reward must be finite");
  }
}

TransitionDataset TransitionDataset::subset(std::span<const int> indices) const {
  std::vector<Transition> recs;
  recs.reserve(indices.size());
  for (int i : indices) recs.push_back(records_[static_cast<std::size_t>(i)]);
  return TransitionDataset(alphabet_, num_actions_, std::move(recs));
}

Policy Policy::deterministic(int action, int num_actions) {
  if (action < 0 || action >= num_actions)
    throw std::invalid_argument("deterministic action outside action set");
  return Policy(num_actions,
                [action](int a, int) { return a == action ? 1.0 : 0.0; });
}

Policy Policy::uniform(int num_actions) {
  if (num_actions < 1) throw std::invalid_argument("policy needs at least one action");
  const double p = 1.0 / num_actions;
  return Policy(num_actions, [p](int, int) { return p; });
}

Policy Policy::tabular(Eigen::MatrixXd probs) {
  if (probs.rows() < 1 || probs.cols() < 1)
    throw std::invalid_argument("tabular policy needs a nonempty matrix");
  for (Eigen::Index s = 0; s < probs.rows(); ++s) {
    double sum = 0.0;
    for (Eigen::Index a = 0; a < probs.cols(); ++a) {
      if (probs(s, a) < 0.0) throw std::invalid_argument("policy probabilities must be nonnegative");
      sum += probs(s, a);
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("policy row " + std::to_string(s) + " sums to " + std::to_string(sum));
  }
  auto table = std::make_shared<Eigen::MatrixXd>(std::move(probs));
  return Policy(static_cast<int>(table->cols()), [table](int a, int s) {
    if (s < 0 || s >= table->rows()) throw std::domain_error("state outside policy table");
    return (*table)(s, a);
  });
}

Policy Policy::state_independent(Eigen::VectorXd probs) {
  if (probs.size() < 1) throw std::invalid_argument("policy needs at least one action");
  double sum = 0.0;
  for (Eigen::Index a = 0; a < probs.size(); ++a) {
    if (probs(a) < 0.0) throw std::invalid_argument("policy probabilities must be nonnegative");
    sum += probs(a);
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("policy mass sums to " + std::to_string(sum));
  auto table = std::make_shared<Eigen::VectorXd>(std::move(probs));
  return Policy(static_cast<int>(table->size()),
                [table](int a, int) { return (*table)(a); });
}

void Policy::validate(const StateAlphabet& states) const {
  for (int s = 0; s < states.size(); ++s) {
    double sum = 0.0;
    for (int a = 0; a < num_actions_; ++a) {
      const double p = prob(a, s);
      if (p < 0.0) throw std::invalid_argument("negative policy mass at state " + std::to_string(s));
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("policy mass at state " + std::to_string(s) +
                                  " sums to " + std::to_string(sum));
  }
}

QFunction QFunction::tabular(Eigen::MatrixXd values) {
  auto table = std::make_shared<Eigen::MatrixXd>(std::move(values));
  return QFunction(Kind::Tabular, [table](int a, int s) {
    if (a < 0 || a >= table->rows()) throw std::domain_error("action outside Q table");
    if (s < 0 || s >= table->cols()) throw std::domain_error("state outside Q table");
    return (*table)(a, s);
  });
}

}  // namespace bellman
