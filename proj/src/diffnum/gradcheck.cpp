#include "dcvae/diffnum/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dcvae/errors.hpp"

namespace dcvae::diffnum {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& p : params) worst = std::max(worst, p.max_rel_error);
  return worst;
}

namespace {

constexpr double kSmall = 1e-6;
constexpr double kAbsTol = 1e-7;

double coordinate_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < kSmall && diff <= kAbsTol) return 0.0;
  if (scale == 0.0) return 0.0;
  return diff / scale;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<double()>& loss_fn,
                                  const std::vector<Parameter*>& params,
                                  const Gradients& analytic, const GradCheckOptions& options) {
  if (!(options.step > 0.0) || !(options.tol > 0.0)) {
    throw ContractViolation("finite_diff_check: step and tol must be positive");
  }
  const double base_a = loss_fn();
  const double base_b = loss_fn();
  if (base_a != base_b) {
    throw PreconditionError("finite_diff_check: loss function is not deterministic (" +
                            std::to_string(base_a) + " vs " + std::to_string(base_b) + ")");
  }

  GradCheckReport report;
  report.tol = options.tol;
  std::mt19937_64 rng(options.subset_seed);

  for (Parameter* p : params) {
    const Tensor* grad = analytic.find(*p);
    const std::size_t total = p->value.size();
    std::vector<std::size_t> coords(total);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (total > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }

    ParamCheck check{.name = p->name, .coords_checked = coords.size(), .coords_total = total};
    for (std::size_t idx : coords) {
      double& slot = p->value[idx];
      const double saved = slot;
      slot = saved + options.step;
      const double plus = loss_fn();
      slot = saved - options.step;
      const double minus = loss_fn();
      slot = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = grad ? (*grad)[idx] : 0.0;
      const double err = coordinate_error(a, numeric);
      if (err > check.max_rel_error || !std::isfinite(err)) {
        check.max_rel_error = std::isfinite(err) ? err : INFINITY;
        check.worst_index = idx;
        check.analytic_at_worst = a;
        check.numeric_at_worst = numeric;
      }
    }
    if (!(check.max_rel_error <= options.tol)) {
      report.passed = false;
      report.failing.push_back(check.name);
    }
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace dcvae::diffnum
