#include "dcvae/diffnum/adam.hpp"

#include <cmath>

#include "dcvae/errors.hpp"

namespace dcvae::diffnum {

AdamState AdamState::zeros_like(const ParamGroup& group, const AdamHyper& hyper) {
  if (!(hyper.beta1 >= 0.0 && hyper.beta1 < 1.0 && hyper.beta2 >= 0.0 && hyper.beta2 < 1.0)) {
    throw ContractViolation("adam betas must lie in [0, 1)");
  }
  if (!(hyper.epsilon > 0.0)) throw ContractViolation("adam epsilon must be positive");
  AdamState s;
  s.beta1 = hyper.beta1;
  s.beta2 = hyper.beta2;
  s.epsilon = hyper.epsilon;
  for (const Parameter* p : group.params) {
    s.first_moment.emplace_back(p->value.shape(), 0.0);
    s.second_moment.emplace_back(p->value.shape(), 0.0);
  }
  return s;
}

void adam_step(ParamGroup& group, std::span<const Tensor> grads, AdamState& state) {
  if (!(group.learning_rate > 0.0)) {
    throw ContractViolation("group '" + group.name + "' has non-positive learning rate");
  }
  if (grads.size() != group.params.size() || state.first_moment.size() != group.params.size()) {
    throw ContractViolation("group '" + group.name + "': " + std::to_string(grads.size()) +
                            " gradients for " + std::to_string(group.params.size()) +
                            " parameters");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const Tensor& p = group.params[k]->value;
    if (grads[k].shape() != p.shape() || state.first_moment[k].shape() != p.shape()) {
      throw ContractViolation("gradient shape " + grads[k].shape_string() +
                              " does not match parameter '" + group.params[k]->name + "' " +
                              p.shape_string());
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  const double lr = group.learning_rate;

  for (std::size_t k = 0; k < grads.size(); ++k) {
    Tensor& p = group.params[k]->value;
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace dcvae::diffnum
