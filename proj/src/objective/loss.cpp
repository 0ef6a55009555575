#include "dcvae/objective/loss.hpp"

#include <cmath>
#include <exception>
#include <numbers>

#include "dcvae/errors.hpp"
#include "dcvae/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dcvae::objective {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

bool is_binary(std::span<const double> y) {
  for (double v : y) {
    if (v != 0.0 && v != 1.0) return false;
  }
  return true;
}

}  // namespace

double recon_loss(std::span<const double> x, std::span<const double> x_hat, double sigma_dec) {
  if (x.size() != x_hat.size()) throw ContractViolation("recon_loss: size mismatch");
  if (!(sigma_dec > 0.0)) throw ContractViolation("recon_loss: sigma must be positive");
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - x_hat[i]) * (x[i] - x_hat[i]);
  const double var = sigma_dec * sigma_dec;
  return sq / (2.0 * var) + 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi * var);
}

Var recon_loss(Graph& g, Var x, Var x_hat, double sigma_dec) {
  if (!(sigma_dec > 0.0)) throw ContractViolation("recon_loss: sigma must be positive");
  const double var = sigma_dec * sigma_dec;
  const double n = static_cast<double>(g.size(x));
  Var sq = g.sum(g.square(g.sub(x, x_hat)));
  return g.add(g.scale(sq, 1.0 / (2.0 * var)),
               g.constant(0.5 * n * std::log(2.0 * std::numbers::pi * var)));
}

double kl_mc(double log_q, double log_p) { return log_q - log_p; }

double sup_loss(std::span<const double> e_bar, std::span<const double> y, SupMode mode) {
  Graph g;
  return g.scalar(sup_loss(g, g.constant(e_bar), y, mode));
}

Var sup_loss(Graph& g, Var e_bar, std::span<const double> y, SupMode mode) {
  const std::size_t m = y.size();
  if (m == 0 || m > g.size(e_bar)) {
    throw ContractViolation("sup_loss: need 1 <= |y| <= |e_bar|");
  }
  Var head = m == g.size(e_bar) ? e_bar : g.slice(e_bar, 0, m);
  Var yv = g.constant(y);
  if (mode == SupMode::kMse) return g.sum(g.square(g.sub(yv, head)));
  if (!is_binary(y)) throw ContractViolation("sup_loss: bce mode needs labels in {0, 1}");
  // -y log σ(e) - (1 - y) log σ(-e)
  std::vector<double> one_minus(m);
  for (std::size_t i = 0; i < m; ++i) one_minus[i] = 1.0 - y[i];
  Var pos = g.mul(yv, g.log_sigmoid(head));
  Var neg = g.mul(g.constant(one_minus), g.log_sigmoid(g.scale(head, -1.0)));
  return g.scale(g.sum(g.add(pos, neg)), -1.0);
}

RecordTerms record_loss(Graph& g, const model::DcvaeModel& model, const Example& ex,
                        std::span<const double> noise, const LossOptions& options) {
  const auto& cfg = model.config();
  if (noise.size() != cfg.latent_dim) throw ContractViolation("noise has wrong size");
  auto guarded = [](const char* term, auto&& build) {
    try {
      return build();
    } catch (const NumericError& e) {
      throw NumericError(std::string("loss term '") + term + "': " + e.what());
    }
  };

  Var x = g.constant(ex.x);
  model::DcvaeModel::EncoderVars enc = guarded("encoder", [&] { return model.encode(g, x); });

  Var z_tilde{};
  Var kl = guarded("kl", [&] {
    Var z = model::DcvaeModel::sample_latent(g, enc, g.constant(noise));
    flows::FlowVars f = model.flow(g, z, x);
    z_tilde = f.z_tilde;
    Var log_q = g.sub(model::gaussian_log_density(g, z, enc.mean, enc.log_var), f.log_det);
    Var u = cfg.conditional_prior_enabled ? g.constant(ex.u) : Var{};
    return g.sub(log_q, model.prior_log_density(g, z_tilde, u));
  });
  Var recon = guarded("recon", [&] {
    return recon_loss(g, x, model.decode(g, z_tilde), cfg.sigma_dec);
  });
  Var sup = guarded("sup", [&] {
    Var e_bar = model.flow(g, enc.mean, x).z_tilde;
    return sup_loss(g, e_bar, ex.y.first(std::min(ex.y.size(), cfg.m)), options.mode);
  });
  g.label(recon, "recon");
  g.label(kl, "kl");
  g.label(sup, "sup");
  Var total = g.add(g.add(recon, kl), g.scale(sup, options.beta_sup));
  return {recon, kl, sup, total};
}

LossBreakdown total_loss(const model::DcvaeModel& model, std::span<const Example> examples,
                         std::span<const double> noise, const LossOptions& options) {
  const std::size_t d = model.config().latent_dim;
  if (examples.empty()) throw ContractViolation("total_loss: empty batch");
  if (noise.size() != examples.size() * d) throw ContractViolation("total_loss: noise size");
  LossBreakdown b;
  b.beta_sup = options.beta_sup;
  Graph g;
  for (std::size_t r = 0; r < examples.size(); ++r) {
    g.clear();
    RecordTerms t = record_loss(g, model, examples[r], noise.subspan(r * d, d), options);
    b.recon += g.scalar(t.recon);
    b.kl += g.scalar(t.kl);
    b.sup += g.scalar(t.sup);
  }
  const double inv = 1.0 / static_cast<double>(examples.size());
  b.recon *= inv;
  b.kl *= inv;
  b.sup *= inv;
  b.total = b.recon + b.kl + b.beta_sup * b.sup;
  return b;
}

// ---------------------------------------------------------------------------
// BatchKernel

void BatchKernel::run_record(Graph& g, const model::DcvaeModel& model, const Example& ex,
                             std::span<const double> noise, const LossOptions& options,
                             RecordOut& out) {
  g.clear();
  RecordTerms t = record_loss(g, model, ex, noise, options);
  out.recon = g.scalar(t.recon);
  out.kl = g.scalar(t.kl);
  out.sup = g.scalar(t.sup);
  out.grads.zero();
  g.backward(t.total, out.grads);
}

BatchResult BatchKernel::reduce(std::size_t count, const LossOptions& options) {
  BatchResult result;
  result.loss.beta_sup = options.beta_sup;
  for (std::size_t r = 0; r < count; ++r) {
    result.loss.recon += records_[r].recon;
    result.loss.kl += records_[r].kl;
    result.loss.sup += records_[r].sup;
    result.grads.add(records_[r].grads);
  }
  const double inv = 1.0 / static_cast<double>(count);
  result.loss.recon *= inv;
  result.loss.kl *= inv;
  result.loss.sup *= inv;
  result.loss.total = result.loss.recon + result.loss.kl + options.beta_sup * result.loss.sup;
  result.grads.scale(inv);
  return result;
}

BatchResult BatchKernel::evaluate_serial(const model::DcvaeModel& model,
                                         std::span<const Example> examples,
                                         std::span<const double> noise,
                                         const LossOptions& options) {
  const std::size_t d = model.config().latent_dim;
  if (examples.empty()) throw ContractViolation("batch is empty");
  if (noise.size() != examples.size() * d) throw ContractViolation("batch noise has wrong size");
  if (graphs_.empty()) graphs_.resize(1);
  if (records_.size() < examples.size()) records_.resize(examples.size());
  for (std::size_t r = 0; r < examples.size(); ++r) {
    run_record(graphs_[0], model, examples[r], noise.subspan(r * d, d), options, records_[r]);
  }
  return reduce(examples.size(), options);
}

BatchResult BatchKernel::evaluate(const model::DcvaeModel& model,
                                  std::span<const Example> examples,
                                  std::span<const double> noise, const LossOptions& options,
                                  int threads) {
  if (threads <= 0) threads = thread_budget();
  if (threads == 1 || !has_openmp()) return evaluate_serial(model, examples, noise, options);

  const std::size_t d = model.config().latent_dim;
  if (examples.empty()) throw ContractViolation("batch is empty");
  if (noise.size() != examples.size() * d) throw ContractViolation("batch noise has wrong size");
  if (graphs_.size() < static_cast<std::size_t>(threads)) graphs_.resize(threads);
  if (records_.size() < examples.size()) records_.resize(examples.size());

  std::vector<std::exception_ptr> errors(examples.size());
  const auto n = static_cast<std::int64_t>(examples.size());
#pragma omp parallel for num_threads(threads) schedule(static)
  for (std::int64_t r = 0; r < n; ++r) {
    int tid = 0;
#ifdef _OPENMP
    tid = omp_get_thread_num();
#endif
    const auto k = static_cast<std::size_t>(r);
    try {
      run_record(graphs_[static_cast<std::size_t>(tid)], model, examples[k],
                 noise.subspan(k * d, d), options, records_[k]);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return reduce(examples.size(), options);
}

}  // namespace dcvae::objective
