#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "dcvae/diffnum/graph.hpp"
#include "dcvae/diffnum/layers.hpp"

namespace dcvae::flows {

using diffnum::Graph;
using diffnum::Parameter;
using diffnum::Var;

/// Learnable weighted adjacency under a fixed binary support.
///
/// Row i lists the parents of latent i: mask(i, j) = 1 means z~_j -> z~_i.
/// The support must be strictly lower-triangular, which makes the index
/// order a topological order. Weights outside the support are never read.
class AdjacencyMatrix {
 public:
  AdjacencyMatrix() = default;
  /// `mask` is d*d row-major; throws ContractViolation unless strictly
  /// lower-triangular with 0/1 entries.
  AdjacencyMatrix(std::size_t dim, std::vector<std::uint8_t> mask);

  std::size_t dim() const noexcept { return dim_; }
  bool mask(std::size_t child, std::size_t parent) const noexcept {
    return mask_[child * dim_ + parent] != 0;
  }
  const std::vector<std::uint8_t>& mask_bits() const noexcept { return mask_; }
  std::size_t edge_count() const noexcept;

  /// mask ∘ weights at (child, parent).
  double effective(std::size_t child, std::size_t parent) const noexcept {
    return mask(child, parent) ? weights.value[child * dim_ + parent] : 0.0;
  }

  /// Uniform in [lo, hi] on supported entries, zero elsewhere.
  void init_uniform(std::mt19937_64& rng, double lo, double hi);

  Parameter weights;

 private:
  std::size_t dim_ = 0;
  std::vector<std::uint8_t> mask_;
};

inline constexpr double kLogScaleClamp = 7.0;

/// Conditioner networks of one affine causal flow step.
///
/// Dimension 0 has no parents and uses the trainable constants
/// (s_0, t_0) held in `base`. Dimension i >= 1 uses conditioners[i - 1],
/// an MLP from (z~ ∘ A_i,:) [+ x when x_dim > 0] to (s_i, t_i).
struct CausalFlowParams {
  std::size_t dim = 0;
  std::size_t x_dim = 0;
  Parameter base;  // {s_0, t_0}
  std::vector<diffnum::Mlp> conditioners;
  double s_clamp = kLogScaleClamp;

  void collect(std::vector<Parameter*>& out);
};

/// Conditioners with the given hidden widths (empty = affine). With
/// `identity_init` the last layer starts at zero, so a fresh flow is the
/// identity; otherwise every layer is Glorot-uniform.
CausalFlowParams make_flow_params(std::size_t dim, std::mt19937_64& rng,
                                  const std::vector<std::size_t>& hidden = {32},
                                  std::size_t x_dim = 0, bool identity_init = true);

/// Flow nodes on a graph.
struct FlowVars {
  Var z_tilde;
  Var s_values;
  Var log_det;
};

/// (s_i, t_i) from the scalar nodes z_tilde[j], j < i. Entries j >= i may be
/// invalid Vars; they are never touched.
std::pair<Var, Var> conditioner(Graph& g, std::size_t i, std::span<const Var> z_tilde,
                                Var adjacency_weights, const AdjacencyMatrix& adjacency,
                                const CausalFlowParams& params, Var x = {});

/// z~_i = z_i exp(s_i) + t_i computed for i = 0..d-1 in order; log_det = Σ s_i.
FlowVars flow_forward(Graph& g, Var z, const AdjacencyMatrix& adjacency,
                      const CausalFlowParams& params, Var x = {});

// ---------------------------------------------------------------------------
// Value-level API

struct FlowOutput {
  std::vector<double> z_tilde;
  std::vector<double> s_values;
  double log_det = 0.0;
};

std::pair<double, double> conditioner_eval(std::size_t i, std::span<const double> z_tilde,
                                           const AdjacencyMatrix& adjacency,
                                           const CausalFlowParams& params,
                                           std::span<const double> x = {});

FlowOutput flow_forward(std::span<const double> z, const AdjacencyMatrix& adjacency,
                        const CausalFlowParams& params, std::span<const double> x = {});

/// Single pass: conditioners read z~ directly, so no recursion is needed.
std::vector<double> flow_inverse(std::span<const double> z_tilde,
                                 const AdjacencyMatrix& adjacency,
                                 const CausalFlowParams& params, std::span<const double> x = {});

/// log q(z~) = log q(z) - Σ s_i.
double posterior_log_density(std::span<const double> z_tilde, std::span<const double> z,
                             double logq_z, std::span<const double> s_values);

struct Intervention {
  std::size_t dim = 0;
  double value = 0.0;
};

/// Sequential pass where each intervened z~_i is set to its control value
/// without evaluating its conditioner; descendants read the set value.
std::vector<double> do_operation(std::span<const double> z,
                                 std::span<const Intervention> interventions,
                                 const AdjacencyMatrix& adjacency, const CausalFlowParams& params,
                                 std::span<const double> x = {});

/// For each v in `values`: do(z~_j = z~ref_j for j < m, j != dim; z~_dim = v),
/// with z~ref = flow_forward(z). Coordinates >= m are not intervened.
std::vector<std::vector<double>> traverse(std::span<const double> z, std::size_t dim,
                                          std::span<const double> values, std::size_t m,
                                          const AdjacencyMatrix& adjacency,
                                          const CausalFlowParams& params,
                                          std::span<const double> x = {});

}  // namespace dcvae::flows
