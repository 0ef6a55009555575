#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcvae/diffnum/graph.hpp"

namespace dcvae::diffnum {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// Tensors larger than this are checked on a random coordinate subset.
  std::size_t max_coords_per_param = 64;
  std::uint64_t subset_seed = 17;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_total = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  bool passed = true;
  double tol = 0.0;
  /// Parameters whose max error exceeded tol.
  std::vector<std::string> failing;

  double max_rel_error() const;
};

/// Central-difference check of `analytic` against `loss_fn`.
///
/// `loss_fn` is evaluated with parameter values perturbed in place and must
/// be deterministic; it is called twice at the base point first and a
/// PreconditionError is raised if the two evaluations differ.
///
/// Per coordinate the error is |a - n| / max(|a|, |n|), except that when
/// both |a| and |n| are below 1e-6 the coordinate passes iff |a - n| <= 1e-7.
GradCheckReport finite_diff_check(const std::function<double()>& loss_fn,
                                  const std::vector<Parameter*>& params,
                                  const Gradients& analytic, const GradCheckOptions& options = {});

}  // namespace dcvae::diffnum
