#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcvae/diffnum/tensor.hpp"

namespace dcvae::diffnum {

/// Parameters sharing one learning rate.
struct ParamGroup {
  std::string name;
  std::vector<Parameter*> params;
  double learning_rate = 1e-3;
};

struct AdamHyper {
  double beta1 = 0.2;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.2;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Zero moments shaped like `group`'s parameters, step 0.
  static AdamState zeros_like(const ParamGroup& group, const AdamHyper& hyper = {});
};

/// One bias-corrected Adam update of every parameter in `group`;
/// `grads[k]` belongs to `group.params[k]`.
void adam_step(ParamGroup& group, std::span<const Tensor> grads, AdamState& state);

}  // namespace dcvae::diffnum
