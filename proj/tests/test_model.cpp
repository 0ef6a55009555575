#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "dcvae/errors.hpp"
#include "dcvae/model/dcvae_model.hpp"
#include "doctest.h"
#include "properties.hpp"
#include "support.hpp"

using namespace dcvae;
using namespace dcvae::model;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Plain-loop dense layer, independent of the graph code.
std::vector<double> dense_ref(const diffnum::Dense& layer, const std::vector<double>& in, bool tanh_out) {
  const std::size_t rows = layer.out_features(), cols = layer.in_features();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = layer.bias.value[r];
    for (std::size_t c = 0; c < cols; ++c) acc += layer.weight.value[r * cols + c] * in[c];
    out[r] = tanh_out ? std::tanh(acc) : acc;
  }
  return out;
}

ModelConfig small_config() {
  ModelConfig c;
  c.n_obs = 6;
  c.latent_dim = 4;
  c.m = 4;
  c.u_dim = 4;
  c.encoder_hidden = {8, 8};
  c.decoder_hidden = {8, 8};
  c.conditioner_hidden = {5};
  return c;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("true-graph mask has the pendulum edges only") {
    const auto mask = build_mask(MaskKind::kTrueGraph, 4);
    const std::vector<std::uint8_t> expected = {0, 0, 0, 0,  //
                                                0, 0, 0, 0,  //
                                                1, 1, 0, 0,  //
                                                1, 1, 0, 0};
    CHECK(mask == expected);
    const auto wide = build_mask(MaskKind::kTrueGraph, 8);
    std::size_t ones = 0;
    for (auto b : wide) ones += b;
    CHECK(ones == 4);
  }

  TEST_CASE("full lower mask and custom edges") {
    const auto full = build_mask(MaskKind::kFullLower, 4);
    std::size_t ones = 0;
    for (auto b : full) ones += b;
    CHECK(ones == 6);
    CHECK_THROWS_AS(build_mask(MaskKind::kCustom, 4, std::vector<Edge>{{0, 0}}), ContractViolation);
    CHECK_THROWS_AS(build_mask(MaskKind::kCustom, 4, std::vector<Edge>{{2, 1}}), ContractViolation);
    CHECK_THROWS_AS(build_mask(MaskKind::kCustom, 4, std::vector<Edge>{{0, 4}}), ContractViolation);
    const auto custom = build_mask(MaskKind::kCustom, 3, std::vector<Edge>{{0, 2}, {1, 2}});
    CHECK(custom == std::vector<std::uint8_t>{0, 0, 0, 0, 0, 0, 1, 1, 0});
    CHECK(parse_mask_kind("full") == MaskKind::kFullLower);
    CHECK_THROWS_AS(parse_mask_kind("nope"), ContractViolation);
  }

  TEST_CASE("fresh model: zero log-variance head and identity flow") {
    DcvaeModel m(small_config(), build_mask(MaskKind::kTrueGraph, 4), 1);
    const std::vector<double> x = {0.1, -0.2, 0.3, 0.5, -0.9, 0.0};
    const auto enc = m.encode(x);
    for (double lv : enc.log_var) CHECK(lv == 0.0);
    CHECK(m.representation(x) == enc.mean);
    CHECK(m.encode(x).mean == enc.mean);
    for (std::size_t i = 0; i < 16; ++i) {
      const double a = m.adjacency.weights.value[i];
      CHECK(std::abs(a) <= 0.1);
      if (!m.adjacency.mask(i / 4, i % 4)) CHECK(a == 0.0);
    }
  }

  TEST_CASE("encoder and decoder match a plain-loop forward pass") {
    DcvaeModel m = testing::perturbed_model(small_config(), MaskKind::kTrueGraph, 3);
    std::mt19937_64 rng(3);
    const auto x = testing::uniform_vector(rng, 6, -1, 1);
    std::vector<double> h = x;
    for (const auto& layer : m.encoder_trunk.layers) h = dense_ref(layer, h, true);
    const auto mean = dense_ref(m.encoder_mean, h, false);
    const auto log_var = dense_ref(m.encoder_log_var, h, false);
    const auto enc = m.encode(x);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(enc.mean[i] == doctest::Approx(mean[i]).epsilon(1e-14));
      CHECK(enc.log_var[i] == doctest::Approx(log_var[i]).epsilon(1e-14));
    }

    const auto zt = testing::uniform_vector(rng, 4, -1, 1);
    std::vector<double> y = zt;
    const auto& layers = m.decoder.layers;
    for (std::size_t k = 0; k < layers.size(); ++k) y = dense_ref(layers[k], y, k + 1 < layers.size());
    const auto x_hat = m.decode(zt);
    REQUIRE(x_hat.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(x_hat[i] == doctest::Approx(y[i]).epsilon(1e-14));
    CHECK(m.decode(zt) == x_hat);
  }

  TEST_CASE("zeroed output layers give zero encoder and decoder outputs") {
    DcvaeModel m(small_config(), build_mask(MaskKind::kTrueGraph, 4), 1);
    m.encoder_mean.weight.value.fill(0.0);
    m.decoder.layers.back().weight.value.fill(0.0);
    const std::vector<double> x = {0.3, 0.3, 0.3, -1, 1, 0};
    for (double v : m.encode(x).mean) CHECK(v == 0.0);
    for (double v : m.decode(std::vector<double>{1, 2, 3, 4})) CHECK(v == 0.0);
  }

  TEST_CASE("wrong input sizes are contract violations") {
    DcvaeModel m(small_config(), build_mask(MaskKind::kTrueGraph, 4), 1);
    CHECK_THROWS_AS(m.encode(std::vector<double>(5, 0.0)), ContractViolation);
    CHECK_THROWS_AS(m.decode(std::vector<double>(3, 0.0)), ContractViolation);
  }

  TEST_CASE("reparameterized sample") {
    GaussianParams p{{1.0, -1.0}, {0.0, 2.0 * std::log(2.0)}};
    const auto z = DcvaeModel::sample_latent(p, std::vector<double>{0.5, 0.5});
    CHECK(z[0] == doctest::Approx(1.5));
    CHECK(z[1] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(DcvaeModel::sample_latent(p, std::vector<double>{0.0, 0.0}) == p.mean);
    GaussianParams unit{{0.2, 0.3}, {0.0, 0.0}};
    const auto e = DcvaeModel::sample_latent(unit, std::vector<double>{-1.0, 2.0});
    CHECK(e[0] == doctest::Approx(-0.8));
    CHECK(e[1] == doctest::Approx(2.3));
  }

  TEST_CASE("prior log density examples") {
    ModelConfig c = small_config();
    c.latent_dim = 1;
    c.m = 1;
    c.u_dim = 1;
    DcvaeModel one(c, {0}, 1);
    one.prior.mean_map.weight.value.fill(0.0);
    one.prior.mean_map.bias.value.fill(0.0);
    CHECK(one.prior_log_density(std::vector<double>{0.0}, std::vector<double>{0.7}) ==
          doctest::Approx(-0.5 * kLog2Pi));
    CHECK(one.prior_log_density(std::vector<double>{0.0}, std::vector<double>{0.7}) ==
          doctest::Approx(-0.9189).epsilon(1e-4));

    // mean_map u -> 2u at u = 0.5 puts the mean at z~ = 1.
    one.prior.mean_map.weight.value.fill(2.0);
    CHECK(one.prior_log_density(std::vector<double>{1.0}, std::vector<double>{0.5}) ==
          doctest::Approx(-0.5 * kLog2Pi));

    c.latent_dim = 2;
    DcvaeModel two(c, {0, 0, 0, 0}, 1);
    two.prior.mean_map.weight.value.fill(0.0);
    CHECK(two.prior_log_density(std::vector<double>{0.0, 0.0}, std::vector<double>{0.3}) ==
          doctest::Approx(-kLog2Pi));
  }

  TEST_CASE("zero affine maps give the standard normal over all dimensions") {
    ModelConfig c = small_config();
    c.latent_dim = 6;
    c.m = 4;
    DcvaeModel m(c, build_mask(MaskKind::kTrueGraph, 6), 2);
    m.prior.mean_map.weight.value.fill(0.0);
    const std::vector<double> zt = {0.5, -1.0, 0.25, 2.0, -0.3, 0.8};
    double expected = 0.0;
    for (double v : zt) expected += -0.5 * kLog2Pi - 0.5 * v * v;
    CHECK(m.prior_log_density(zt, std::vector<double>{1, 2, 3, 4}) == doctest::Approx(expected).epsilon(1e-14));

    c.conditional_prior_enabled = false;
    DcvaeModel plain(c, build_mask(MaskKind::kTrueGraph, 6), 2);
    CHECK(plain.prior_log_density(zt, {}) == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("representation is the flow of the encoder mean") {
    DcvaeModel m = testing::perturbed_model(small_config(), MaskKind::kFullLower, 5);
    const std::vector<double> x = {0.9, -0.4, 0.2, 0.0, 0.6, -0.8};
    const auto enc = m.encode(x);
    const auto z = DcvaeModel::sample_latent(enc, std::vector<double>(4, 0.0));
    CHECK(m.representation(x) == m.flow(z, x).z_tilde);
    CHECK(m.representation(x) != enc.mean);

    ModelConfig c = small_config();
    c.flow_enabled = false;
    DcvaeModel no_flow = testing::perturbed_model(c, MaskKind::kFullLower, 5);
    CHECK(no_flow.representation(x) == no_flow.encode(x).mean);
  }

  TEST_CASE("parameter groups are named and disjoint") {
    DcvaeModel m(ModelConfig{}, build_mask(MaskKind::kTrueGraph, 4), 1);
    const auto groups = m.param_groups(1, 2, 3, 4, 5);
    REQUIRE(groups.size() == 5);
    const char* names[] = {"encoder", "flow", "A", "prior", "decoder"};
    std::set<const diffnum::Parameter*> seen;
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(groups[k].name == names[k]);
      CHECK(groups[k].learning_rate == static_cast<double>(k + 1));
      for (auto* p : groups[k].params) CHECK(seen.insert(p).second);
    }
    CHECK(m.named_parameters().size() == seen.size());
    // Encoder 16-64-64 with two heads; decoder 4-64-64-16.
    CHECK(groups[0].params.size() == 8);
    CHECK(groups[4].params.size() == 6);
    CHECK(groups[2].params[0]->value.size() == 16);
  }

  TEST_CASE("encoder and decoder gradients pass the finite-difference check") {
    DcvaeModel m = testing::perturbed_model(small_config(), MaskKind::kTrueGraph, 8);
    std::mt19937_64 rng(8);
    const auto x = testing::uniform_vector(rng, 6, -1, 1);
    const auto w = testing::uniform_vector(rng, 6, -1, 1);
    auto build = [&](diffnum::Graph& g) {
      auto enc = m.encode(g, g.constant(x));
      Var rec = m.decode(g, g.add(enc.mean, g.scale(enc.log_var, 0.3)));
      return g.sum(g.mul(rec, g.constant(w)));
    };
    diffnum::Graph g;
    const auto grads = g.backward(build(g));
    std::vector<diffnum::Parameter*> params;
    m.encoder_trunk.collect(params);
    params.insert(params.end(), {&m.encoder_mean.weight, &m.encoder_mean.bias, &m.encoder_log_var.weight,
                                 &m.encoder_log_var.bias});
    m.decoder.collect(params);
    const auto report = diffnum::finite_diff_check([&] { diffnum::Graph h; return h.scalar(build(h)); },
                                                   params, grads, {.tol = 1e-4});
    CHECK(report.passed);
  }

  TEST_CASE("config validation") {
    ModelConfig c;
    c.m = 5;
    CHECK_THROWS_AS(c.validate(), ContractViolation);
    c.m = 0;
    CHECK_THROWS_AS(c.validate(), ContractViolation);
    c.m = 4;
    c.sigma_dec = 0.0;
    CHECK_THROWS_AS(c.validate(), ContractViolation);
  }
}
