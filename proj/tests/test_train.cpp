#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dcvae/datagen/pendulum.hpp"
#include "dcvae/errors.hpp"
#include "dcvae/train/trainer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace dcvae;
using namespace dcvae::train;

namespace {

datagen::DatasetSplit small_split(std::size_t n, std::uint64_t seed) {
  return datagen::generate_pendulum({.n_train = n, .n_test = 0, .seed = seed, .mixer_seed = {}}).train;
}

TrainConfig quick_config(std::uint64_t seed, std::size_t epochs) {
  TrainConfig c;
  c.seed = seed;
  c.batch_size = 32;
  c.epochs = epochs;
  return c;
}

bool same_parameters(Checkpoint& a, Checkpoint& b) {
  auto pa = a.model.named_parameters();
  auto pb = b.model.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    if (pa[k].second->value != pb[k].second->value) return false;
  }
  return true;
}

bool same_optimizer(const Checkpoint& a, const Checkpoint& b) {
  if (a.optimizer.size() != b.optimizer.size()) return false;
  for (std::size_t g = 0; g < a.optimizer.size(); ++g) {
    const auto& x = a.optimizer[g];
    const auto& y = b.optimizer[g];
    if (x.step_count != y.step_count || x.first_moment != y.first_moment || x.second_moment != y.second_moment) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("zero epochs returns the initialization") {
    const auto data = small_split(50, 1);
    auto fitted = fit(quick_config(3, 0), data);
    auto init = initialize(quick_config(3, 0), 16, 4);
    CHECK(same_parameters(fitted.checkpoint, init));
    CHECK(fitted.log.empty());
    CHECK(fitted.checkpoint.epoch == 0);
  }

  TEST_CASE("training is deterministic in the seed") {
    const auto data = small_split(120, 2);
    auto a = fit(quick_config(5, 2), data);
    auto b = fit(quick_config(5, 2), data);
    auto c = fit(quick_config(6, 2), data);
    CHECK(same_parameters(a.checkpoint, b.checkpoint));
    CHECK(same_optimizer(a.checkpoint, b.checkpoint));
    CHECK(a.checkpoint.rng_state == b.checkpoint.rng_state);
    CHECK_FALSE(same_parameters(a.checkpoint, c.checkpoint));
  }

  TEST_CASE("loss decreases over a short run") {
    const auto data = small_split(600, 3);
    TrainConfig c = quick_config(1, 15);
    c.batch_size = 64;
    std::size_t calls = 0;
    const auto r = fit(c, data, [&](const EpochLoss&) { ++calls; });
    REQUIRE(r.log.size() == 15);
    CHECK(calls == 15);
    CHECK(r.log.back().total < r.log.front().total);
    for (const auto& e : r.log) CHECK(e.total == doctest::Approx(e.recon + e.kl + 8.0 * e.sup));
  }

  TEST_CASE("save and load reproduce the model and optimizer") {
    testing::TempDir dir("ckpt");
    const auto data = small_split(100, 4);
    auto r = fit(quick_config(4, 2), data);
    save_checkpoint(r.checkpoint, dir / "c.bin");
    auto back = load_checkpoint(dir / "c.bin");
    CHECK(same_parameters(r.checkpoint, back));
    CHECK(same_optimizer(r.checkpoint, back));
    CHECK(back.epoch == 2);
    CHECK(back.rng_state == r.checkpoint.rng_state);
    CHECK(back.model.adjacency.mask_bits() == r.checkpoint.model.adjacency.mask_bits());
    std::mt19937_64 rng(4);
    for (int k = 0; k < 100; ++k) {
      const auto x = testing::uniform_vector(rng, 16, -1, 1);
      CHECK(back.model.representation(x) == r.checkpoint.model.representation(x));
    }
  }

  TEST_CASE("truncated and corrupted checkpoints are load errors") {
    testing::TempDir dir("ckptbad");
    auto ck = initialize(quick_config(1, 0), 16, 4);
    save_checkpoint(ck, dir / "c.bin");
    const auto size = std::filesystem::file_size(dir / "c.bin");
    std::filesystem::copy_file(dir / "c.bin", dir / "t.bin");
    std::filesystem::resize_file(dir / "t.bin", size - 9);
    CHECK_THROWS_AS(load_checkpoint(dir / "t.bin"), LoadError);
    std::filesystem::resize_file(dir / "t.bin", 20);
    CHECK_THROWS_AS(load_checkpoint(dir / "t.bin"), LoadError);
    {
      std::ofstream out(dir / "m.bin", std::ios::binary);
      out << "NOTACHECKPOINT";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "m.bin"), LoadError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), LoadError);
  }

  TEST_CASE("a version mismatch names both versions") {
    testing::TempDir dir("ckptver");
    auto ck = initialize(quick_config(1, 0), 16, 4);
    save_checkpoint(ck, dir / "c.bin");
    std::string bytes;
    {
      std::ifstream in(dir / "c.bin", std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    const std::string from = "\"version\": 1";
    const auto pos = bytes.find(from);
    REQUIRE(pos != std::string::npos);
    bytes.replace(pos, from.size(), "\"version\": 7");  // same length
    {
      std::ofstream out(dir / "c.bin", std::ios::binary);
      out << bytes;
    }
    try {
      (void)load_checkpoint(dir / "c.bin");
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      const std::string what = e.what();
      CHECK(what.find('7') != std::string::npos);
      CHECK(what.find('1') != std::string::npos);
    }
  }

  TEST_CASE("resuming equals an uninterrupted run bit for bit") {
    testing::TempDir dir("resume");
    const auto data = small_split(90, 5);
    auto full = fit(quick_config(8, 3), data);
    auto part = fit(quick_config(8, 2), data);
    save_checkpoint(part.checkpoint, dir / "p.bin");
    auto cont = resume(load_checkpoint(dir / "p.bin"), data, 3);
    CHECK(cont.checkpoint.epoch == 3);
    REQUIRE(cont.log.size() == 1);
    CHECK(same_parameters(full.checkpoint, cont.checkpoint));
    CHECK(same_optimizer(full.checkpoint, cont.checkpoint));
    CHECK(cont.log[0].total == full.log[2].total);
  }

  TEST_CASE("divergence aborts with the last good checkpoint") {
    const auto data = small_split(64, 6);
    TrainConfig c = quick_config(1, 50);
    c.lr_encoder = c.lr_decoder = c.lr_flow = c.lr_prior = 1e6;
    try {
      (void)fit(c, data);
      FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
      const Checkpoint& good = e.last_good();
      CHECK(good.epoch < 50);
      auto copy = good;
      for (auto& [group, p] : copy.model.named_parameters()) CHECK(p->value.all_finite());
    }
  }

  TEST_CASE("ablation switches give the plain supervised VAE") {
    TrainConfig c = quick_config(2, 0);
    c.flow_enabled = false;
    c.conditional_prior_enabled = false;
    auto ck = initialize(c, 16, 4);
    auto& m = ck.model;
    CHECK_FALSE(m.config().flow_enabled);
    CHECK_FALSE(m.config().conditional_prior_enabled);
    m.encoder_log_var.bias.value.fill(-0.4);

    const auto data = small_split(5, 7);
    const auto ex = make_examples(data);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> noise(5 * 4);
    for (double& v : noise) v = normal(rng);
    const auto got = objective::total_loss(m, ex, noise, c.loss_options());

    // Independent plain-VAE objective: recon + (log N(z; μ, σ²) - log N(z; 0, I)) + β |y - μ|².
    double total = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
      const auto enc = m.encode(ex[r].x);
      std::vector<double> z(4);
      double kl = 0.0, sup = 0.0;
      for (std::size_t i = 0; i < 4; ++i) {
        const double sd = std::exp(0.5 * enc.log_var[i]);
        z[i] = enc.mean[i] + sd * noise[4 * r + i];
        kl += -0.5 * enc.log_var[i] - 0.5 * noise[4 * r + i] * noise[4 * r + i] + 0.5 * z[i] * z[i];
        sup += (ex[r].y[i] - enc.mean[i]) * (ex[r].y[i] - enc.mean[i]);
      }
      const auto x_hat = m.decode(z);
      double sq = 0.0;
      for (std::size_t k = 0; k < 16; ++k) sq += (ex[r].x[k] - x_hat[k]) * (ex[r].x[k] - x_hat[k]);
      const double var = c.sigma_dec * c.sigma_dec;
      const double recon = sq / (2 * var) + 8.0 * std::log(2 * M_PI * var);
      total += recon + kl + c.beta_sup * sup;
    }
    CHECK(got.total == doctest::Approx(total / 5).epsilon(1e-12));
  }

  TEST_CASE("loss log csv") {
    testing::TempDir dir("log");
    LossLog log = {{1, 2.0, 0.5, 0.25, 4.5}, {2, 1.5, 0.25, 0.125, 2.75}};
    write_loss_log(log, dir / "loss.csv");
    std::ifstream in(dir / "loss.csv");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "epoch,recon,kl,sup,total");
    CHECK(first.rfind("1,2,0.5,0.25,4.5", 0) == 0);
  }

  TEST_CASE("invalid configurations and mismatched datasets") {
    TrainConfig c = quick_config(1, 1);
    c.m = 5;
    CHECK_THROWS_AS(c.validate(), ContractViolation);
    c = quick_config(1, 1);
    c.lr_a = 0.0;
    CHECK_THROWS_AS(c.validate(), ContractViolation);
    c = quick_config(1, 1);
    c.adam_beta1 = 1.0;
    CHECK_THROWS_AS(c.validate(), ContractViolation);

    c = quick_config(1, 1);
    c.sup_mode = objective::SupMode::kBce;
    CHECK_THROWS_AS(fit(c, small_split(10, 1)), PreconditionError);

    auto ck = initialize(quick_config(1, 1), 18, 4);
    CHECK_THROWS_AS(resume(ck, small_split(10, 1), 1), PreconditionError);
    datagen::DatasetSplit empty;
    CHECK_THROWS_AS(fit(quick_config(1, 1), empty), PreconditionError);
  }

  TEST_CASE("default configuration follows the hyperparameter table") {
    const TrainConfig c;
    CHECK(c.batch_size == 128);
    CHECK(c.latent_dim == 4);
    CHECK(c.m == 4);
    CHECK(c.sigma_dec == 0.1667);
    CHECK(c.beta_sup == 8.0);
    CHECK(c.lr_encoder == 5e-5);
    CHECK(c.lr_a == 1e-3);
    CHECK(c.adam_beta1 == 0.2);
    CHECK(c.adam_beta2 == 0.999);
    CHECK(c.adam_epsilon == 1e-8);
  }
}
