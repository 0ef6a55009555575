#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcvae/diffnum/adam.hpp"
#include "dcvae/diffnum/graph.hpp"
#include "dcvae/diffnum/layers.hpp"
#include "dcvae/flows/causal_flow.hpp"

namespace dcvae::model {

using diffnum::Graph;
using diffnum::Parameter;
using diffnum::Var;

// ---------------------------------------------------------------------------
// Masks

/// Latent order is (theta, phi, length, position, extra...).
enum class MaskKind { kTrueGraph, kFullLower, kCustom };

struct Edge {
  std::size_t parent = 0;
  std::size_t child = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// true_graph: theta->length, theta->position, phi->length, phi->position
/// (extra dimensions get no parents); full_lower: every j < i; custom:
/// `edges`, each of which must satisfy parent < child.
std::vector<std::uint8_t> build_mask(MaskKind kind, std::size_t dim,
                                     std::span<const Edge> edges = {});

std::vector<Edge> pendulum_true_edges();

const char* mask_kind_name(MaskKind kind) noexcept;
MaskKind parse_mask_kind(const std::string& name);

// ---------------------------------------------------------------------------
// Model

struct GaussianParams {
  std::vector<double> mean;
  std::vector<double> log_var;
};

struct ModelConfig {
  std::size_t n_obs = 16;
  std::size_t latent_dim = 4;
  std::size_t m = 4;
  std::size_t u_dim = 4;
  double sigma_dec = 0.1667;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::vector<std::size_t> decoder_hidden{64, 64};
  std::vector<std::size_t> conditioner_hidden{32};
  bool flow_enabled = true;
  bool conditional_prior_enabled = true;
  bool conditioner_uses_x = false;
  bool flow_identity_init = true;

  void validate() const;
};

/// Factorial Gaussian prior: the first m coordinates have mean and
/// log-variance affine in u, the remaining d - m are standard normal.
struct ConditionalPrior {
  std::size_t latent_dim = 0;
  std::size_t m = 0;
  diffnum::Dense mean_map;
  diffnum::Dense log_var_map;
};

/// -0.5 Σ (log 2π + lv + (z - μ)² e^{-lv})
Var gaussian_log_density(Graph& g, Var z, Var mean, Var log_var);
Var standard_normal_log_density(Graph& g, Var z);

class DcvaeModel {
 public:
  DcvaeModel() = default;
  DcvaeModel(const ModelConfig& config, std::vector<std::uint8_t> mask, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  struct EncoderVars {
    Var mean;
    Var log_var;
  };

  EncoderVars encode(Graph& g, Var x) const;
  static Var sample_latent(Graph& g, const EncoderVars& enc, Var noise);
  /// Identity with zero log-det when the flow is disabled.
  flows::FlowVars flow(Graph& g, Var z, Var x) const;
  Var decode(Graph& g, Var z_tilde) const;
  Var prior_log_density(Graph& g, Var z_tilde, Var u) const;

  GaussianParams encode(std::span<const double> x) const;
  static std::vector<double> sample_latent(const GaussianParams& params,
                                           std::span<const double> noise);
  flows::FlowOutput flow(std::span<const double> z, std::span<const double> x) const;
  std::vector<double> decode(std::span<const double> z_tilde) const;
  double prior_log_density(std::span<const double> z_tilde, std::span<const double> u) const;
  /// Noise-free representation: flow applied to the encoder mean.
  std::vector<double> representation(std::span<const double> x) const;

  /// Groups named encoder, flow, A, prior, decoder (in that order).
  std::vector<diffnum::ParamGroup> param_groups(double lr_encoder, double lr_flow, double lr_a,
                                                double lr_prior, double lr_decoder);
  /// (group name, parameter) in a fixed order.
  std::vector<std::pair<std::string, Parameter*>> named_parameters();

  diffnum::Mlp encoder_trunk;
  diffnum::Dense encoder_mean;
  diffnum::Dense encoder_log_var;
  flows::AdjacencyMatrix adjacency;
  flows::CausalFlowParams flow_params;
  ConditionalPrior prior;
  diffnum::Mlp decoder;

 private:
  void check_input(std::span<const double> v, std::size_t expected, const char* what) const;

  ModelConfig config_;
};

}  // namespace dcvae::model
