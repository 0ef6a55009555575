// Batch loss + gradient: OpenMP kernel against the serial reference.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dcvae/datagen/pendulum.hpp"
#include "dcvae/objective/loss.hpp"
#include "dcvae/train/trainer.hpp"

using namespace dcvae;

namespace {

struct Setup {
  datagen::PendulumDataset ds;  // examples point into it
  train::Checkpoint ck;
  std::vector<objective::Example> examples;
  std::vector<double> noise;
  objective::LossOptions options;

  explicit Setup(std::size_t batch) {
    datagen::GenerateOptions go;
    go.n_train = batch;
    go.n_test = 1;
    go.seed = 1;
    ds = datagen::generate_pendulum(go);
    train::TrainConfig c;
    c.seed = 1;
    ck = train::initialize(c, ds.train.header.n_obs, ds.train.records.front().u().size());
    examples = train::make_examples(ds.train);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    noise.resize(batch * c.latent_dim);
    for (auto& v : noise) v = nd(rng);
    options = c.loss_options();
  }
};

void BM_Serial(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  objective::BatchKernel kernel;
  for (auto _ : state) {
    auto r = kernel.evaluate_serial(s.ck.model, s.examples, s.noise, s.options);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Parallel(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  objective::BatchKernel kernel;
  const int threads = static_cast<int>(state.range(1));
  for (auto _ : state) {
    auto r = kernel.evaluate(s.ck.model, s.examples, s.noise, s.options, threads);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Serial)->Arg(128)->Arg(1024)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Parallel)->ArgsProduct({{128, 1024}, {1, 2, 4}})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
