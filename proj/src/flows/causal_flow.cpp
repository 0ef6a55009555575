#include "dcvae/flows/causal_flow.hpp"

#include <cmath>
#include <string>

#include "dcvae/errors.hpp"

namespace dcvae::flows {

// ---------------------------------------------------------------------------
// AdjacencyMatrix

AdjacencyMatrix::AdjacencyMatrix(std::size_t dim, std::vector<std::uint8_t> mask)
    : weights{"A.weights", diffnum::Tensor({dim, dim}, 0.0)}, dim_(dim), mask_(std::move(mask)) {
  if (mask_.size() != dim * dim) {
    throw ContractViolation("adjacency mask needs " + std::to_string(dim * dim) + " entries");
  }
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const std::uint8_t bit = mask_[i * dim + j];
      if (bit > 1) throw ContractViolation("adjacency mask entries must be 0 or 1");
      if (bit && j >= i) {
        throw ContractViolation("adjacency mask edge " + std::to_string(j) + "->" +
                                std::to_string(i) + " is not strictly lower-triangular");
      }
    }
  }
}

std::size_t AdjacencyMatrix::edge_count() const noexcept {
  std::size_t n = 0;
  for (auto b : mask_) n += b;
  return n;
}

void AdjacencyMatrix::init_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < dim_; ++j) {
      weights.value[i * dim_ + j] = mask(i, j) ? u(rng) : 0.0;
    }
  }
}

// ---------------------------------------------------------------------------
// Parameters

void CausalFlowParams::collect(std::vector<Parameter*>& out) {
  out.push_back(&base);
  for (auto& c : conditioners) c.collect(out);
}

CausalFlowParams make_flow_params(std::size_t dim, std::mt19937_64& rng,
                                  const std::vector<std::size_t>& hidden, std::size_t x_dim,
                                  bool identity_init) {
  if (dim == 0) throw ContractViolation("flow dimension must be positive");
  CausalFlowParams p;
  p.dim = dim;
  p.x_dim = x_dim;
  p.base = {"flow.base", diffnum::Tensor({2}, 0.0)};
  for (std::size_t i = 1; i < dim; ++i) {
    std::vector<std::size_t> sizes{dim + x_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(2);
    p.conditioners.push_back(
        diffnum::make_mlp("flow.c" + std::to_string(i), sizes, rng, identity_init));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Graph-level

namespace {

void check_dims(const AdjacencyMatrix& a, const CausalFlowParams& p) {
  if (a.dim() != p.dim || p.conditioners.size() + 1 != p.dim) {
    throw ContractViolation("flow parameters do not match adjacency dimension");
  }
}

}  // namespace

std::pair<Var, Var> conditioner(Graph& g, std::size_t i, std::span<const Var> z_tilde,
                                Var adjacency_weights, const AdjacencyMatrix& adjacency,
                                const CausalFlowParams& params, Var x) {
  const std::size_t d = params.dim;
  if (i >= d) throw ContractViolation("conditioner index out of range");
  if (params.x_dim > 0 && !x.valid()) throw ContractViolation("conditioner expects x input");
  if (i == 0) {
    Var base = g.param(params.base);
    return {g.clamp(g.element(base, 0), -params.s_clamp, params.s_clamp), g.element(base, 1)};
  }
  std::vector<Var> parts;
  parts.reserve(d + 1);
  Var zero{};
  for (std::size_t j = 0; j < d; ++j) {
    if (adjacency.mask(i, j)) {
      parts.push_back(g.mul(z_tilde[j], g.element(adjacency_weights, i * d + j)));
    } else {
      if (!zero.valid()) zero = g.constant(0.0);
      parts.push_back(zero);
    }
  }
  if (params.x_dim > 0) parts.push_back(x);
  Var out = params.conditioners[i - 1].forward(g, g.concat(parts));
  return {g.clamp(g.element(out, 0), -params.s_clamp, params.s_clamp), g.element(out, 1)};
}

FlowVars flow_forward(Graph& g, Var z, const AdjacencyMatrix& adjacency,
                      const CausalFlowParams& params, Var x) {
  check_dims(adjacency, params);
  const std::size_t d = params.dim;
  if (g.size(z) != d) throw ContractViolation("flow input has wrong size");
  Var aw = g.param(adjacency.weights);
  std::vector<Var> zt(d), s(d);
  for (std::size_t i = 0; i < d; ++i) {
    auto [si, ti] = conditioner(g, i, zt, aw, adjacency, params, x);
    s[i] = si;
    zt[i] = g.add(g.mul(g.element(z, i), g.exp(si)), ti);
  }
  Var s_values = g.concat(s);
  return {g.concat(zt), s_values, g.sum(s_values)};
}

// ---------------------------------------------------------------------------
// Value-level

namespace {

void check_finite(std::span<const double> v, const char* what) {
  for (double e : v) {
    if (!std::isfinite(e)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

Var maybe_x(Graph& g, const CausalFlowParams& params, std::span<const double> x) {
  if (params.x_dim == 0) return {};
  if (x.size() != params.x_dim) throw ContractViolation("conditioner x has wrong size");
  return g.constant(x);
}

}  // namespace

std::pair<double, double> conditioner_eval(std::size_t i, std::span<const double> z_tilde,
                                           const AdjacencyMatrix& adjacency,
                                           const CausalFlowParams& params,
                                           std::span<const double> x) {
  check_dims(adjacency, params);
  if (z_tilde.size() != params.dim) throw ContractViolation("z_tilde has wrong size");
  Graph g;
  std::vector<Var> zt(params.dim);
  for (std::size_t j = 0; j < i && j < params.dim; ++j) zt[j] = g.constant(z_tilde[j]);
  auto [s, t] = conditioner(g, i, zt, g.param(adjacency.weights), adjacency, params,
                            maybe_x(g, params, x));
  return {g.scalar(s), g.scalar(t)};
}

FlowOutput flow_forward(std::span<const double> z, const AdjacencyMatrix& adjacency,
                        const CausalFlowParams& params, std::span<const double> x) {
  check_finite(z, "flow input");
  Graph g;
  FlowVars v = flow_forward(g, g.constant(z), adjacency, params, maybe_x(g, params, x));
  auto zt = g.value(v.z_tilde);
  auto s = g.value(v.s_values);
  return {{zt.begin(), zt.end()}, {s.begin(), s.end()}, g.scalar(v.log_det)};
}

std::vector<double> flow_inverse(std::span<const double> z_tilde,
                                 const AdjacencyMatrix& adjacency,
                                 const CausalFlowParams& params, std::span<const double> x) {
  check_dims(adjacency, params);
  check_finite(z_tilde, "flow inverse input");
  const std::size_t d = params.dim;
  if (z_tilde.size() != d) throw ContractViolation("z_tilde has wrong size");
  Graph g;
  std::vector<Var> zt(d);
  for (std::size_t j = 0; j < d; ++j) zt[j] = g.constant(z_tilde[j]);
  Var aw = g.param(adjacency.weights);
  Var xv = maybe_x(g, params, x);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < d; ++i) {
    auto [s, t] = conditioner(g, i, zt, aw, adjacency, params, xv);
    z[i] = (z_tilde[i] - g.scalar(t)) * std::exp(-g.scalar(s));
  }
  return z;
}

double posterior_log_density(std::span<const double> z_tilde, std::span<const double> z,
                             double logq_z, std::span<const double> s_values) {
  if (z_tilde.size() != z.size() || s_values.size() != z.size()) {
    throw ContractViolation("posterior_log_density: z, z_tilde and s must have equal sizes");
  }
  double log_det = 0.0;
  for (double s : s_values) log_det += s;
  return logq_z - log_det;
}

std::vector<double> do_operation(std::span<const double> z,
                                 std::span<const Intervention> interventions,
                                 const AdjacencyMatrix& adjacency, const CausalFlowParams& params,
                                 std::span<const double> x) {
  check_dims(adjacency, params);
  const std::size_t d = params.dim;
  if (z.size() != d) throw ContractViolation("do_operation: z has wrong size");
  std::vector<const Intervention*> by_dim(d, nullptr);
  for (const Intervention& iv : interventions) {
    if (iv.dim >= d) {
      throw ContractViolation("intervention on dimension " + std::to_string(iv.dim) +
                              " outside latent size " + std::to_string(d));
    }
    if (by_dim[iv.dim]) {
      throw ContractViolation("duplicate intervention on dimension " + std::to_string(iv.dim));
    }
    by_dim[iv.dim] = &iv;
  }
  Graph g;
  Var aw = g.param(adjacency.weights);
  Var xv = maybe_x(g, params, x);
  std::vector<Var> zt(d);
  for (std::size_t i = 0; i < d; ++i) {
    if (by_dim[i]) {
      zt[i] = g.constant(by_dim[i]->value);
      continue;
    }
    auto [s, t] = conditioner(g, i, zt, aw, adjacency, params, xv);
    zt[i] = g.add(g.mul(g.constant(z[i]), g.exp(s)), t);
  }
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = g.scalar(zt[i]);
  return out;
}

std::vector<std::vector<double>> traverse(std::span<const double> z, std::size_t dim,
                                          std::span<const double> values, std::size_t m,
                                          const AdjacencyMatrix& adjacency,
                                          const CausalFlowParams& params,
                                          std::span<const double> x) {
  if (m > params.dim || dim >= m) throw ContractViolation("traverse: dim must be below m <= d");
  const FlowOutput ref = flow_forward(z, adjacency, params, x);
  std::vector<Intervention> iv;
  for (std::size_t j = 0; j < m; ++j) {
    if (j != dim) iv.push_back({j, ref.z_tilde[j]});
  }
  iv.push_back({dim, 0.0});
  std::vector<std::vector<double>> out;
  out.reserve(values.size());
  for (double v : values) {
    iv.back().value = v;
    out.push_back(do_operation(z, iv, adjacency, params, x));
  }
  return out;
}

}  // namespace dcvae::flows
