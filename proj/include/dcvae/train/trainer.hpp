#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dcvae/datagen/pendulum.hpp"
#include "dcvae/diffnum/adam.hpp"
#include "dcvae/errors.hpp"
#include "dcvae/model/dcvae_model.hpp"
#include "dcvae/objective/loss.hpp"

namespace dcvae::train {

/// Defaults are the Pendulum settings, except
/// `epochs`, which callers set (801 reproduces the full schedule).
struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t batch_size = 128;
  std::size_t epochs = 801;
  std::size_t latent_dim = 4;
  std::size_t m = 4;
  double sigma_dec = 0.1667;
  double beta_sup = 8.0;
  double lr_encoder = 5e-5;
  double lr_flow = 5e-5;
  double lr_a = 1e-3;
  double lr_prior = 5e-5;
  double lr_decoder = 5e-5;
  double adam_beta1 = 0.2;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  model::MaskKind mask_kind = model::MaskKind::kTrueGraph;
  std::vector<model::Edge> custom_edges;
  bool flow_enabled = true;
  bool conditional_prior_enabled = true;
  bool conditioner_uses_x = false;
  bool flow_identity_init = true;
  objective::SupMode sup_mode = objective::SupMode::kMse;

  void validate() const;
  model::ModelConfig model_config(std::size_t n_obs, std::size_t u_dim) const;
  std::vector<std::uint8_t> mask() const;
  objective::LossOptions loss_options() const { return {beta_sup, sup_mode}; }
};

/// Everything needed to continue training bit-for-bit.
struct Checkpoint {
  TrainConfig config;
  model::DcvaeModel model;
  /// One per group, in DcvaeModel::param_groups order.
  std::vector<diffnum::AdamState> optimizer;
  std::size_t epoch = 0;
  std::string rng_state;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double recon = 0.0;
  double kl = 0.0;
  double sup = 0.0;
  double total = 0.0;
};
using LossLog = std::vector<EpochLoss>;

struct FitResult {
  Checkpoint checkpoint;
  LossLog log;
};

/// Raised when the loss goes non-finite; carries the checkpoint from the
/// start of the failing epoch.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const noexcept { return last_good_; }

 private:
  Checkpoint last_good_;
};

/// Fresh model, zero optimizer state, epoch 0.
Checkpoint initialize(const TrainConfig& config, std::size_t n_obs, std::size_t u_dim);

/// initialize() followed by config.epochs epochs.
FitResult fit(const TrainConfig& config, const datagen::DatasetSplit& train,
              const std::function<void(const EpochLoss&)>& on_epoch = {});

/// Trains `start` until it has completed `target_epochs` epochs. Each epoch
/// shuffles with a stream derived from (seed, epoch); reparameterization
/// noise comes from the checkpoint's RNG.
FitResult resume(Checkpoint start, const datagen::DatasetSplit& train, std::size_t target_epochs,
                 const std::function<void(const EpochLoss&)>& on_epoch = {});

std::vector<objective::Example> make_examples(const datagen::DatasetSplit& split);

void write_loss_log(const LossLog& log, const std::filesystem::path& path);

inline constexpr int kCheckpointVersion = 1;

/// Binary: "DCVAE1", u64 header length, JSON header, u64 value count,
/// little-endian float64 payload (parameters, then Adam moments).
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dcvae::train
