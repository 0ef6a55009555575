#include "properties.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <numbers>

#include "dcvae/datagen/pendulum.hpp"
#include "dcvae/objective/loss.hpp"
#include "dcvae/train/trainer.hpp"

namespace testing {

using namespace dcvae;
using diffnum::Gradients;
using diffnum::Graph;
using diffnum::Parameter;
using diffnum::Tensor;
using diffnum::Var;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
}

}  // namespace

RandomFlow random_flow(std::size_t dim, std::mt19937_64& rng, double scale) {
  RandomFlow f;
  f.adjacency = flows::AdjacencyMatrix(dim, model::build_mask(model::MaskKind::kFullLower, dim));
  f.adjacency.init_uniform(rng, -1.0, 1.0);
  f.params = flows::make_flow_params(dim, rng, {32}, 0, false);
  fill_uniform(f.params.base.value, rng, -0.5, 0.5);
  for (auto& mlp : f.params.conditioners) {
    for (auto& layer : mlp.layers) fill_uniform(layer.bias.value, rng, -0.3, 0.3);
  }
  std::vector<Parameter*> ps;
  f.params.collect(ps);
  for (Parameter* p : ps) {
    for (double& v : p->value.values()) v *= scale;
  }
  return f;
}

double numeric_log_det(const RandomFlow& flow, const std::vector<double>& z, double h) {
  const std::size_t d = z.size();
  Eigen::MatrixXd jac(d, d);
  std::vector<double> zp = z;
  for (std::size_t c = 0; c < d; ++c) {
    zp[c] = z[c] + h;
    const auto up = flows::flow_forward(zp, flow.adjacency, flow.params).z_tilde;
    zp[c] = z[c] - h;
    const auto down = flows::flow_forward(zp, flow.adjacency, flow.params).z_tilde;
    zp[c] = z[c];
    for (std::size_t r = 0; r < d; ++r) jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (up[r] - down[r]) / (2.0 * h);
  }
  return std::log(std::abs(jac.determinant()));
}

FlowSuiteResult run_flow_suite(std::size_t instances, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  FlowSuiteResult r;
  r.instances = instances;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t dims[] = {2, 4, 6};
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t d = dims[k % 3];
    const RandomFlow flow = random_flow(d, rng);
    std::vector<double> z(d);
    for (double& v : z) v = normal(rng);

    const auto fwd = flows::flow_forward(z, flow.adjacency, flow.params);
    const auto back = flows::flow_inverse(fwd.z_tilde, flow.adjacency, flow.params);
    for (std::size_t i = 0; i < d; ++i) {
      r.max_inverse_error = std::max(r.max_inverse_error, std::abs(back[i] - z[i]));
    }
    r.max_log_det_error =
        std::max(r.max_log_det_error, std::abs(numeric_log_det(flow, z) - fwd.log_det));

    // Fresh identity-init conditioners over the same random adjacency.
    const auto identity = flows::make_flow_params(d, rng, {32}, 0, true);
    const auto id_out = flows::flow_forward(z, flow.adjacency, identity);
    if (id_out.z_tilde != z || id_out.log_det != 0.0) r.identity_exact = false;
  }
  r.seconds = seconds_since(t0);
  return r;
}

double integrate_flow_density(const RandomFlow& flow, const std::vector<double>& mean,
                              const std::vector<double>& log_var, std::size_t grid) {
  // Box: image of the base distribution's ±7σ square, padded.
  double lo[2] = {INFINITY, INFINITY}, hi[2] = {-INFINITY, -INFINITY};
  const int edge = 60;
  for (int a = 0; a <= edge; ++a) {
    for (int b = 0; b <= edge; ++b) {
      std::vector<double> z = {mean[0] + std::exp(0.5 * log_var[0]) * (-7.0 + 14.0 * a / edge),
                               mean[1] + std::exp(0.5 * log_var[1]) * (-7.0 + 14.0 * b / edge)};
      const auto zt = flows::flow_forward(z, flow.adjacency, flow.params).z_tilde;
      for (int i = 0; i < 2; ++i) {
        lo[i] = std::min(lo[i], zt[static_cast<std::size_t>(i)]);
        hi[i] = std::max(hi[i], zt[static_cast<std::size_t>(i)]);
      }
    }
  }
  for (int i = 0; i < 2; ++i) {
    const double pad = 0.1 * (hi[i] - lo[i]);
    lo[i] -= pad;
    hi[i] += pad;
  }
  const double dx = (hi[0] - lo[0]) / static_cast<double>(grid);
  const double dy = (hi[1] - lo[1]) / static_cast<double>(grid);
  double total = 0.0;
  for (std::size_t a = 0; a < grid; ++a) {
    for (std::size_t b = 0; b < grid; ++b) {
      const std::vector<double> zt = {lo[0] + (static_cast<double>(a) + 0.5) * dx,
                                      lo[1] + (static_cast<double>(b) + 0.5) * dy};
      const auto z = flows::flow_inverse(zt, flow.adjacency, flow.params);
      const auto fwd = flows::flow_forward(z, flow.adjacency, flow.params);
      double logq = 0.0;
      for (std::size_t i = 0; i < 2; ++i) {
        const double diff = z[i] - mean[i];
        logq += -0.5 * (std::log(2.0 * std::numbers::pi) + log_var[i] + diff * diff * std::exp(-log_var[i]));
      }
      total += std::exp(flows::posterior_log_density(zt, z, logq, fwd.s_values)) * dx * dy;
    }
  }
  return total;
}

double mean_kl_mc(double mu_q, double mu_p, std::size_t draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double c = -0.5 * std::log(2.0 * std::numbers::pi);
  double acc = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    const double z = mu_q + normal(rng);
    const double log_q = c - 0.5 * (z - mu_q) * (z - mu_q);
    const double log_p = c - 0.5 * (z - mu_p) * (z - mu_p);
    acc += objective::kl_mc(log_q, log_p);
  }
  return acc / static_cast<double>(draws);
}

// ---------------------------------------------------------------------------
// Primitives

std::vector<PrimitiveCase> primitive_cases() {
  using V = std::vector<Var>;
  return {
      {"add", {5, 5}, -2, 2, 5, [](Graph& g, V& v) { return g.add(v[0], v[1]); }},
      {"sub", {5, 5}, -2, 2, 5, [](Graph& g, V& v) { return g.sub(v[0], v[1]); }},
      {"mul", {5, 5}, -2, 2, 5, [](Graph& g, V& v) { return g.mul(v[0], v[1]); }},
      {"matvec", {12, 4}, -2, 2, 3, [](Graph& g, V& v) { return g.matvec(v[0], v[1]); }, 3},
      {"tanh", {6}, -2, 2, 6, [](Graph& g, V& v) { return g.tanh(v[0]); }},
      {"exp", {6}, -2, 2, 6, [](Graph& g, V& v) { return g.exp(v[0]); }},
      {"log", {6}, 0.5, 2, 6, [](Graph& g, V& v) { return g.log(v[0]); }},
      {"square", {6}, -2, 2, 6, [](Graph& g, V& v) { return g.square(v[0]); }},
      {"sum", {6}, -2, 2, 1, [](Graph& g, V& v) { return g.sum(v[0]); }},
      {"mean", {6}, -2, 2, 1, [](Graph& g, V& v) { return g.mean(v[0]); }},
      {"sigmoid", {6}, -2, 2, 6, [](Graph& g, V& v) { return g.sigmoid(v[0]); }},
      {"log_sigmoid", {6}, -2, 2, 6, [](Graph& g, V& v) { return g.log_sigmoid(v[0]); }},
      {"scale", {6}, -2, 2, 6, [](Graph& g, V& v) { return g.scale(v[0], -1.7); }},
      {"clamp", {6}, -0.9, 0.9, 6, [](Graph& g, V& v) { return g.clamp(v[0], -1.0, 1.0); }},
      {"slice", {6}, -2, 2, 3, [](Graph& g, V& v) { return g.slice(v[0], 2, 3); }},
      {"concat", {2, 3}, -2, 2, 5,
       [](Graph& g, V& v) {
         std::vector<Var> parts{v[0], v[1]};
         return g.concat(parts);
       }},
  };
}

PrimitiveProbe make_probe(const PrimitiveCase& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> in(c.lo, c.hi);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  PrimitiveProbe probe;
  for (std::size_t k = 0; k < c.sizes.size(); ++k) {
    std::vector<double> v(c.sizes[k]);
    for (double& e : v) e = in(rng);
    const std::string name = c.name + "." + std::to_string(k);
    if (k == 0 && c.first_rows > 1) {
      probe.params.push_back({name, Tensor::matrix(c.first_rows, c.sizes[0] / c.first_rows, v)});
    } else {
      probe.params.push_back({name, Tensor::vector(v)});
    }
  }
  probe.weights.resize(c.out_size);
  for (double& e : probe.weights) e = w(rng);
  return probe;
}

namespace {
Var probe_output(Graph& g, const PrimitiveCase& c, PrimitiveProbe& p) {
  std::vector<Var> vars;
  for (auto& param : p.params) vars.push_back(g.param(param));
  return g.sum(g.mul(c.build(g, vars), g.constant(p.weights)));
}
}  // namespace

double PrimitiveProbe::value(const PrimitiveCase& c) {
  Graph g;
  return g.scalar(probe_output(g, c, *this));
}

Gradients PrimitiveProbe::gradients(const PrimitiveCase& c) {
  Graph g;
  return g.backward(probe_output(g, c, *this));
}

void check_primitives(GradSuiteResult& out, double tol, std::uint64_t seed) {
  for (const auto& c : primitive_cases()) {
    PrimitiveProbe probe = make_probe(c, seed++);
    const Gradients grads = probe.gradients(c);
    std::vector<Parameter*> ps;
    for (auto& p : probe.params) ps.push_back(&p);
    const auto report = diffnum::finite_diff_check([&] { return probe.value(c); }, ps, grads,
                                                   {.tol = tol, .max_coords_per_param = 1000});
    out.primitives_max_error = std::max(out.primitives_max_error, report.max_rel_error());
    if (!report.passed) {
      out.primitives_passed = false;
      out.failing_primitives.push_back(c.name);
    }
  }
}

// ---------------------------------------------------------------------------
// Full loss

model::DcvaeModel perturbed_model(const model::ModelConfig& config, model::MaskKind mask,
                                  std::uint64_t seed) {
  model::ModelConfig cfg = config;
  cfg.flow_identity_init = false;
  model::DcvaeModel m(cfg, model::build_mask(mask, cfg.latent_dim), seed);
  std::mt19937_64 rng(seed + 1);
  fill_uniform(m.encoder_log_var.weight.value, rng, -0.2, 0.2);
  fill_uniform(m.encoder_log_var.bias.value, rng, -0.5, 0.5);
  fill_uniform(m.prior.log_var_map.weight.value, rng, -0.2, 0.2);
  fill_uniform(m.prior.log_var_map.bias.value, rng, -0.5, 0.5);
  fill_uniform(m.flow_params.base.value, rng, -0.3, 0.3);
  return m;
}

diffnum::GradCheckReport check_full_loss(model::DcvaeModel& model, std::size_t records,
                                         double tol, std::uint64_t seed) {
  const auto data = datagen::generate_pendulum(
      {.n_train = records, .n_test = 0, .seed = seed, .mixer_seed = {}});
  const auto examples = train::make_examples(data.train);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> noise(records * model.config().latent_dim);
  for (double& v : noise) v = normal(rng);
  const objective::LossOptions options{8.0, objective::SupMode::kMse};

  objective::BatchKernel kernel;
  const auto analytic = kernel.evaluate_serial(model, examples, noise, options);
  std::vector<Parameter*> params;
  for (auto& [group, p] : model.named_parameters()) params.push_back(p);
  return diffnum::finite_diff_check(
      [&] { return objective::total_loss(model, examples, noise, options).total; }, params,
      analytic.grads, {.step = 1e-5, .tol = tol, .max_coords_per_param = 24, .subset_seed = seed});
}

GradSuiteResult run_grad_suite(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteResult r;
  check_primitives(r, 1e-6, seed);
  model::ModelConfig cfg;  // d = 4, n = 16
  model::DcvaeModel m = perturbed_model(cfg, model::MaskKind::kTrueGraph, seed);
  const auto report = check_full_loss(m, 4, 1e-4, seed);
  r.loss_passed = report.passed;
  r.loss_max_error = report.max_rel_error();
  r.failing_params = report.failing;
  r.seconds = seconds_since(t0);
  return r;
}

}  // namespace testing
