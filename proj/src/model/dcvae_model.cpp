#include "dcvae/model/dcvae_model.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "dcvae/errors.hpp"

namespace dcvae::model {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2π)
constexpr double kAdjacencyInit = 0.1;
}  // namespace

// ---------------------------------------------------------------------------
// Masks

std::vector<Edge> pendulum_true_edges() { return {{0, 2}, {0, 3}, {1, 2}, {1, 3}}; }

std::vector<std::uint8_t> build_mask(MaskKind kind, std::size_t dim, std::span<const Edge> edges) {
  std::vector<std::uint8_t> mask(dim * dim, 0);
  switch (kind) {
    case MaskKind::kTrueGraph: {
      if (dim < 4) throw ContractViolation("the pendulum graph needs at least 4 latents");
      for (const Edge& e : pendulum_true_edges()) mask[e.child * dim + e.parent] = 1;
      break;
    }
    case MaskKind::kFullLower:
      for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < i; ++j) mask[i * dim + j] = 1;
      }
      break;
    case MaskKind::kCustom:
      for (const Edge& e : edges) {
        if (e.parent >= dim || e.child >= dim) {
          throw ContractViolation("edge " + std::to_string(e.parent) + "->" +
                                  std::to_string(e.child) + " outside " + std::to_string(dim) +
                                  " latents");
        }
        if (e.parent >= e.child) {
          throw ContractViolation("edge " + std::to_string(e.parent) + "->" +
                                  std::to_string(e.child) + " violates the variable ordering");
        }
        mask[e.child * dim + e.parent] = 1;
      }
      break;
  }
  return mask;
}

const char* mask_kind_name(MaskKind kind) noexcept {
  switch (kind) {
    case MaskKind::kTrueGraph: return "true";
    case MaskKind::kFullLower: return "full";
    case MaskKind::kCustom: return "file";
  }
  return "?";
}

MaskKind parse_mask_kind(const std::string& name) {
  if (name == "true" || name == "true_graph") return MaskKind::kTrueGraph;
  if (name == "full" || name == "full_lower") return MaskKind::kFullLower;
  if (name == "file" || name == "custom") return MaskKind::kCustom;
  throw ContractViolation("unknown mask kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// Densities

Var gaussian_log_density(Graph& g, Var z, Var mean, Var log_var) {
  Var diff = g.sub(z, mean);
  Var quad = g.mul(g.square(diff), g.exp(g.scale(log_var, -1.0)));
  Var per_dim = g.add(log_var, quad);
  const double n = static_cast<double>(g.size(z));
  Var s = g.sum(per_dim);
  return g.add(g.scale(s, -0.5), g.constant(-0.5 * n * kLog2Pi));
}

Var standard_normal_log_density(Graph& g, Var z) {
  const double n = static_cast<double>(g.size(z));
  return g.add(g.scale(g.sum(g.square(z)), -0.5), g.constant(-0.5 * n * kLog2Pi));
}

// ---------------------------------------------------------------------------
// Model

void ModelConfig::validate() const {
  if (latent_dim == 0 || m == 0 || m > latent_dim) {
    throw ContractViolation("need latent_dim >= m >= 1");
  }
  if (n_obs == 0 || u_dim == 0) throw ContractViolation("n_obs and u_dim must be positive");
  if (!(sigma_dec > 0.0)) throw ContractViolation("sigma_dec must be positive");
}

DcvaeModel::DcvaeModel(const ModelConfig& config, std::vector<std::uint8_t> mask,
                       std::uint64_t seed)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.latent_dim;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x696e6974u};
  std::mt19937_64 rng(seq);

  std::vector<std::size_t> enc_sizes{config_.n_obs};
  enc_sizes.insert(enc_sizes.end(), config_.encoder_hidden.begin(), config_.encoder_hidden.end());
  encoder_trunk = diffnum::make_mlp("encoder.trunk", enc_sizes, rng);
  const std::size_t enc_out = enc_sizes.back();
  encoder_mean = diffnum::make_dense("encoder.mean", enc_out, d, rng);
  encoder_log_var = diffnum::make_dense("encoder.log_var", enc_out, d, rng, true);

  adjacency = flows::AdjacencyMatrix(d, std::move(mask));
  adjacency.init_uniform(rng, -kAdjacencyInit, kAdjacencyInit);
  flow_params = flows::make_flow_params(d, rng, config_.conditioner_hidden,
                                        config_.conditioner_uses_x ? config_.n_obs : 0,
                                        config_.flow_identity_init);

  prior.latent_dim = d;
  prior.m = config_.m;
  prior.mean_map = diffnum::make_dense("prior.mean_map", config_.u_dim, config_.m, rng);
  prior.log_var_map = diffnum::make_dense("prior.log_var_map", config_.u_dim, config_.m, rng, true);

  std::vector<std::size_t> dec_sizes{d};
  dec_sizes.insert(dec_sizes.end(), config_.decoder_hidden.begin(), config_.decoder_hidden.end());
  dec_sizes.push_back(config_.n_obs);
  decoder = diffnum::make_mlp("decoder", dec_sizes, rng);
}

void DcvaeModel::check_input(std::span<const double> v, std::size_t expected,
                             const char* what) const {
  if (v.size() != expected) {
    throw ContractViolation(std::string(what) + " has " + std::to_string(v.size()) +
                            " entries, expected " + std::to_string(expected));
  }
}

DcvaeModel::EncoderVars DcvaeModel::encode(Graph& g, Var x) const {
  if (g.size(x) != config_.n_obs) throw ContractViolation("encoder input has wrong size");
  Var h = encoder_trunk.forward_hidden(g, x);
  return {encoder_mean.forward(g, h), encoder_log_var.forward(g, h)};
}

Var DcvaeModel::sample_latent(Graph& g, const EncoderVars& enc, Var noise) {
  return g.add(enc.mean, g.mul(g.exp(g.scale(enc.log_var, 0.5)), noise));
}

flows::FlowVars DcvaeModel::flow(Graph& g, Var z, Var x) const {
  if (!config_.flow_enabled) {
    const std::vector<double> zeros(config_.latent_dim, 0.0);
    return {z, g.constant(zeros), g.constant(0.0)};
  }
  return flows::flow_forward(g, z, adjacency, flow_params,
                             config_.conditioner_uses_x ? x : Var{});
}

Var DcvaeModel::decode(Graph& g, Var z_tilde) const {
  if (g.size(z_tilde) != config_.latent_dim) throw ContractViolation("decoder input has wrong size");
  return decoder.forward(g, z_tilde);
}

Var DcvaeModel::prior_log_density(Graph& g, Var z_tilde, Var u) const {
  const std::size_t d = config_.latent_dim;
  const std::size_t m = config_.m;
  if (!config_.conditional_prior_enabled) return standard_normal_log_density(g, z_tilde);
  if (g.size(u) != config_.u_dim) throw ContractViolation("prior input u has wrong size");
  Var head = m == d ? z_tilde : g.slice(z_tilde, 0, m);
  Var lp = gaussian_log_density(g, head, prior.mean_map.forward(g, u),
                                prior.log_var_map.forward(g, u));
  if (m < d) lp = g.add(lp, standard_normal_log_density(g, g.slice(z_tilde, m, d - m)));
  return lp;
}

GaussianParams DcvaeModel::encode(std::span<const double> x) const {
  check_input(x, config_.n_obs, "encoder input");
  Graph g;
  EncoderVars e = encode(g, g.constant(x));
  auto mean = g.value(e.mean);
  auto lv = g.value(e.log_var);
  return {{mean.begin(), mean.end()}, {lv.begin(), lv.end()}};
}

std::vector<double> DcvaeModel::sample_latent(const GaussianParams& params,
                                              std::span<const double> noise) {
  if (noise.size() != params.mean.size() || params.log_var.size() != params.mean.size()) {
    throw ContractViolation("sample_latent: noise size does not match latent size");
  }
  std::vector<double> z(noise.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = params.mean[i] + std::exp(0.5 * params.log_var[i]) * noise[i];
  }
  return z;
}

flows::FlowOutput DcvaeModel::flow(std::span<const double> z, std::span<const double> x) const {
  check_input(z, config_.latent_dim, "flow input");
  if (!config_.flow_enabled) {
    return {{z.begin(), z.end()}, std::vector<double>(z.size(), 0.0), 0.0};
  }
  return flows::flow_forward(z, adjacency, flow_params,
                             config_.conditioner_uses_x ? x : std::span<const double>{});
}

std::vector<double> DcvaeModel::decode(std::span<const double> z_tilde) const {
  check_input(z_tilde, config_.latent_dim, "decoder input");
  Graph g;
  auto v = g.value(decode(g, g.constant(z_tilde)));
  return {v.begin(), v.end()};
}

double DcvaeModel::prior_log_density(std::span<const double> z_tilde,
                                     std::span<const double> u) const {
  check_input(z_tilde, config_.latent_dim, "prior input z_tilde");
  Graph g;
  Var uv = config_.conditional_prior_enabled ? g.constant(u) : Var{};
  if (config_.conditional_prior_enabled) check_input(u, config_.u_dim, "prior input u");
  return g.scalar(prior_log_density(g, g.constant(z_tilde), uv));
}

std::vector<double> DcvaeModel::representation(std::span<const double> x) const {
  check_input(x, config_.n_obs, "encoder input");
  Graph g;
  Var xv = g.constant(x);
  EncoderVars e = encode(g, xv);
  auto v = g.value(flow(g, e.mean, xv).z_tilde);
  return {v.begin(), v.end()};
}

std::vector<diffnum::ParamGroup> DcvaeModel::param_groups(double lr_encoder, double lr_flow,
                                                          double lr_a, double lr_prior,
                                                          double lr_decoder) {
  std::vector<diffnum::ParamGroup> groups(5);
  groups[0] = {"encoder", {}, lr_encoder};
  encoder_trunk.collect(groups[0].params);
  groups[0].params.insert(groups[0].params.end(),
                          {&encoder_mean.weight, &encoder_mean.bias, &encoder_log_var.weight,
                           &encoder_log_var.bias});
  groups[1] = {"flow", {}, lr_flow};
  flow_params.collect(groups[1].params);
  groups[2] = {"A", {&adjacency.weights}, lr_a};
  groups[3] = {"prior",
               {&prior.mean_map.weight, &prior.mean_map.bias, &prior.log_var_map.weight,
                &prior.log_var_map.bias},
               lr_prior};
  groups[4] = {"decoder", {}, lr_decoder};
  decoder.collect(groups[4].params);
  return groups;
}

std::vector<std::pair<std::string, Parameter*>> DcvaeModel::named_parameters() {
  std::vector<std::pair<std::string, Parameter*>> out;
  for (auto& group : param_groups(1, 1, 1, 1, 1)) {
    for (Parameter* p : group.params) out.emplace_back(group.name, p);
  }
  return out;
}

}  // namespace dcvae::model
