#pragma once

#include <span>
#include <vector>

#include "dcvae/diffnum/graph.hpp"
#include "dcvae/model/dcvae_model.hpp"

namespace dcvae::objective {

using diffnum::Graph;
using diffnum::Var;

enum class SupMode { kMse, kBce };

struct LossBreakdown {
  double recon = 0.0;
  double kl = 0.0;
  double sup = 0.0;
  double total = 0.0;
  double beta_sup = 0.0;
};

/// -log N(x; x_hat, σ² I) = |x - x_hat|² / (2σ²) + (n/2) log(2πσ²)
double recon_loss(std::span<const double> x, std::span<const double> x_hat, double sigma_dec);
Var recon_loss(Graph& g, Var x, Var x_hat, double sigma_dec);

/// Single-sample KL estimate log q(z~) - log p(z~) at one reparameterized draw.
double kl_mc(double log_q, double log_p);

/// Compares the first y.size() coordinates of e_bar with y.
/// mse: Σ (y_i - e_i)²; bce: Σ -y_i log σ(e_i) - (1 - y_i) log(1 - σ(e_i)).
double sup_loss(std::span<const double> e_bar, std::span<const double> y, SupMode mode);
Var sup_loss(Graph& g, Var e_bar, std::span<const double> y, SupMode mode);

/// One labelled observation; spans must outlive the call.
struct Example {
  std::span<const double> x;
  std::span<const double> y;
  std::span<const double> u;
};

struct LossOptions {
  double beta_sup = 8.0;
  SupMode mode = SupMode::kMse;
};

struct RecordTerms {
  Var recon;
  Var kl;
  Var sup;
  Var total;
};

/// Builds recon + kl + beta_sup * sup for one record on `g`, with `noise`
/// the standard-normal draw of the reparameterization. Supervision uses
/// the noise-free path (encoder mean through the flow).
RecordTerms record_loss(Graph& g, const model::DcvaeModel& model, const Example& ex,
                        std::span<const double> noise, const LossOptions& options);

/// Per-record terms averaged over the batch; total = recon + kl + beta·sup
/// of the averages. `noise` holds examples.size() * latent_dim draws.
LossBreakdown total_loss(const model::DcvaeModel& model, std::span<const Example> examples,
                         std::span<const double> noise, const LossOptions& options);

struct BatchResult {
  LossBreakdown loss;
  diffnum::Gradients grads;  // of loss.total
};

/// Batch loss and gradient. Records are evaluated on per-thread graphs and
/// their gradients reduced in index order, so the result is bitwise
/// independent of the thread count. Buffers are kept between calls.
class BatchKernel {
 public:
  /// OpenMP over records, capped at `threads` (<= 0: thread_budget()).
  BatchResult evaluate(const model::DcvaeModel& model, std::span<const Example> examples,
                       std::span<const double> noise, const LossOptions& options,
                       int threads = 0);

  /// Single-threaded reference.
  BatchResult evaluate_serial(const model::DcvaeModel& model, std::span<const Example> examples,
                              std::span<const double> noise, const LossOptions& options);

 private:
  struct RecordOut {
    diffnum::Gradients grads;
    double recon = 0.0, kl = 0.0, sup = 0.0;
  };
  void run_record(Graph& g, const model::DcvaeModel& model, const Example& ex,
                  std::span<const double> noise, const LossOptions& options, RecordOut& out);
  BatchResult reduce(std::size_t count, const LossOptions& options);

  std::vector<Graph> graphs_;
  std::vector<RecordOut> records_;
};

}  // namespace dcvae::objective
