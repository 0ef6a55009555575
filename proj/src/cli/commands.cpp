#include "dcvae/cli/commands.hpp"

#include <deque>
#include <filesystem>
#include <random>
#include <set>

#include "CLI11.hpp"

#include "dcvae/cli/run_config.hpp"
#include "dcvae/datagen/csv_io.hpp"
#include "dcvae/diffnum/gradcheck.hpp"
#include "dcvae/errors.hpp"
#include "dcvae/eval/eval.hpp"
#include "dcvae/objective/loss.hpp"
#include "dcvae/train/trainer.hpp"

namespace dcvae::cli {

namespace fs = std::filesystem;

namespace {

/// Command-line options that override config keys when given.
class Bindings {
 public:
  void value(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    storage_.emplace_back();
    entries_.push_back({app->add_option(flag, storage_.back(), help), key, &storage_.back(), {}});
  }
  /// A flag that sets `key` to `fixed` when present.
  void flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& fixed,
            const std::string& help) {
    entries_.push_back({app->add_flag(flag, help), key, nullptr, fixed});
  }
  void apply(RunConfig& cfg) const {
    for (const auto& e : entries_) {
      if (e.opt->count() == 0) continue;
      cfg.set(e.key, e.text ? *e.text : e.fixed);
    }
  }

 private:
  struct Entry {
    CLI::Option* opt;
    std::string key;
    const std::string* text;
    std::string fixed;
  };
  std::deque<std::string> storage_;
  std::vector<Entry> entries_;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  Bindings bind;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key=value config file");
  app->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
  c.bind.value(app, "--seed", "seed", "master seed");
  c.bind.value(app, "--out-dir", "out_dir", "output directory");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig() : RunConfig::from_file(c.config_path);
  c.bind.apply(cfg);
  for (const auto& o : c.overrides) cfg.apply(o);
  return cfg;
}

fs::path prepare_out_dir(const RunConfig& cfg) {
  fs::path dir = cfg.get("out_dir");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

datagen::DatasetSplit load_split(const RunConfig& cfg, const std::string& key) {
  const std::string& path = cfg.get(key);
  if (path.empty()) throw UsageError(key + " is required");
  if (!fs::exists(path)) throw UsageError(key + ": no such file " + path);
  return datagen::read_csv(path);
}

train::Checkpoint load_model(const RunConfig& cfg) {
  const std::string& path = cfg.get("checkpoint");
  if (path.empty()) throw UsageError("checkpoint is required");
  if (!fs::exists(path)) throw UsageError("checkpoint: no such file " + path);
  return train::load_checkpoint(path);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = prepare_out_dir(cfg);
  datagen::GenerateOptions opts;
  opts.n_train = cfg.get_size("n_train");
  opts.n_test = cfg.get_size("n_test");
  opts.seed = cfg.get_u64("seed");
  if (!cfg.get("mixer_seed").empty()) opts.mixer_seed = cfg.get_u64("mixer_seed");
  datagen::PendulumDataset ds = datagen::generate_pendulum(opts);
  if (cfg.get_bool("spurious")) {
    const double ratio = cfg.get_double("align_ratio");
    datagen::inject_spurious(ds.train, ratio, opts.seed);
    datagen::inject_spurious(ds.test, ratio, opts.seed);
  }
  datagen::write_csv(ds.train, dir / "train.csv");
  datagen::write_csv(ds.test, dir / "test.csv");
  cfg.write(dir / "gen-data.config");
  out << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test records to "
      << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const train::TrainConfig tc = cfg.train_config();
  const datagen::DatasetSplit data = load_split(cfg, "train_csv");
  const fs::path dir = prepare_out_dir(cfg);
  cfg.write(dir / "train.config");

  auto progress = [&](const train::EpochLoss& e) {
    if (e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == tc.epochs) {
      out << "epoch " << e.epoch << " recon=" << e.recon << " kl=" << e.kl << " sup=" << e.sup
          << " total=" << e.total << "\n";
    }
  };
  try {
    train::FitResult result;
    if (!cfg.get("resume").empty()) {
      const std::string& path = cfg.get("resume");
      if (!fs::exists(path)) throw UsageError("resume: no such file " + path);
      train::Checkpoint start = train::load_checkpoint(path);
      result = train::resume(std::move(start), data, tc.epochs, progress);
    } else {
      result = train::fit(tc, data, progress);
    }
    train::save_checkpoint(result.checkpoint, dir / "checkpoint.bin");
    train::write_loss_log(result.log, dir / "loss_log.csv");
    out << "saved " << (dir / "checkpoint.bin").string() << " after epoch "
        << result.checkpoint.epoch << "\n";
  } catch (const train::TrainingDiverged& e) {
    train::save_checkpoint(e.last_good(), dir / "last_good.bin");
    err << "error: " << e.what() << "\nlast good checkpoint: " << (dir / "last_good.bin").string()
        << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const train::Checkpoint ck = load_model(cfg);
  const datagen::DatasetSplit train = load_split(cfg, "train_csv");
  const datagen::DatasetSplit test = load_split(cfg, "test_csv");
  const fs::path dir = prepare_out_dir(cfg);
  cfg.write(dir / "eval.config");

  eval::SuiteOptions opts;
  opts.probe.epochs = cfg.get_size("probe_epochs");
  opts.probe.seed = cfg.get_u64("probe_seed");
  opts.probe.batch_size = cfg.get_size("probe_batch_size");
  opts.tau = cfg.get_double("tau");
  opts.mi_bins = cfg.get_size("mi_bins");
  const eval::Report report = eval::suite_report(eval::run_suite(ck.model, train, test, opts));
  eval::write_report(report, dir / "report.txt");
  for (const auto& [k, v] : report) out << k << '=' << v << '\n';
  return kExitOk;
}

int cmd_intervene(RunConfig cfg, const std::vector<std::string>& do_flags, std::ostream& out) {
  if (!do_flags.empty()) {
    std::string joined;
    for (const auto& d : do_flags) joined += (joined.empty() ? "" : ";") + d;
    cfg.set("do", joined);
  }
  const train::Checkpoint ck = load_model(cfg);
  const datagen::DatasetSplit data = load_split(cfg, "data_csv");
  const std::size_t m = ck.model.config().m;

  std::vector<flows::Intervention> ivs;
  std::vector<std::string> do_texts;
  {
    std::string text = cfg.get("do");
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto semi = text.find(';', pos);
      const std::string part = text.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos);
      if (!part.empty()) do_texts.push_back(part);
      if (semi == std::string::npos) break;
      pos = semi + 1;
    }
  }
  std::set<std::size_t> seen;
  for (const auto& t : do_texts) {
    auto iv = parse_do(t);
    if (iv.dim >= ck.model.config().latent_dim) {
      throw UsageError("--do dim " + std::to_string(iv.dim + 1) + " is outside the latent space");
    }
    if (!seen.insert(iv.dim).second) {
      throw UsageError("--do names dim " + std::to_string(iv.dim + 1) + " more than once");
    }
    ivs.push_back(iv);
  }

  std::vector<std::size_t> dims;
  for (std::size_t d : parse_index_list(cfg.get("dims"), "dims")) {
    if (d == 0 || d > m) {
      throw UsageError("dims: " + std::to_string(d) + " is not in 1.." + std::to_string(m));
    }
    dims.push_back(d - 1);
  }
  const auto inputs = parse_index_list(cfg.get("inputs"), "inputs");
  for (std::size_t id : inputs) {
    if (id >= data.size()) throw UsageError("inputs: row " + std::to_string(id) + " does not exist");
  }
  const auto values = parse_double_list(cfg.get("values"), "values");

  std::vector<eval::GridRow> rows;
  if (!ivs.empty() && dims.empty()) {
    const flows::Intervention first = ivs.front();
    std::vector<flows::Intervention> rest(ivs.begin() + 1, ivs.end());
    const std::size_t dim = first.dim;
    const double value = first.value;
    rows = eval::build_grid(eval::GridKind::kIntervene, ck.model, data, inputs, {&dim, 1},
                            {&value, 1}, rest);
  } else {
    if (dims.empty()) {
      for (std::size_t d = 0; d < m; ++d) dims.push_back(d);
    }
    const auto kind = ivs.empty() ? eval::GridKind::kTraverse : eval::GridKind::kIntervene;
    if (!values.empty()) {
      rows = eval::build_grid(kind, ck.model, data, inputs, dims, values, ivs);
    } else {
      const eval::Matrix reps = eval::representations(ck.model, data);
      for (std::size_t d : dims) {
        const auto sweep = eval::default_sweep(reps.column(d));
        auto part = eval::build_grid(kind, ck.model, data, inputs, {&d, 1}, sweep, ivs);
        rows.insert(rows.end(), part.begin(), part.end());
      }
    }
  }
  const fs::path dir = prepare_out_dir(cfg);
  cfg.write(dir / "intervene.config");
  eval::write_grid(rows, dir / "grid.csv");
  out << "wrote " << rows.size() << " rows to " << (dir / "grid.csv").string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  train::TrainConfig tc = cfg.train_config();
  const std::size_t n_records = cfg.get_size("grad_records");
  if (n_records == 0) throw UsageError("grad_records must be positive");
  datagen::GenerateOptions go;
  go.n_train = n_records;
  go.n_test = 1;
  go.seed = tc.seed;
  const auto ds = datagen::generate_pendulum(go);
  const auto examples = train::make_examples(ds.train);

  train::Checkpoint ck = train::initialize(tc, ds.train.records.front().x.size(),
                                           ds.train.records.front().u().size());
  model::DcvaeModel& model = ck.model;
  std::mt19937_64 rng(tc.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> noise(n_records * tc.latent_dim);
  for (double& v : noise) v = normal(rng);
  const auto options = tc.loss_options();

  objective::BatchKernel kernel;
  objective::BatchResult br = kernel.evaluate_serial(model, examples, noise, options);
  if (cfg.get_bool("corrupt_gradient")) {
    // Deliberately wrong analytic gradient, to show the checker can fail.
    for (auto& [group, p] : model.named_parameters()) {
      diffnum::Tensor& g = br.grads.slot(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = 1.5 * g[i] + 1e-3;
    }
  }
  std::vector<diffnum::Parameter*> params;
  for (auto& [group, p] : model.named_parameters()) params.push_back(p);
  diffnum::GradCheckOptions gopts;
  gopts.tol = cfg.get_double("grad_tol");
  gopts.subset_seed = tc.seed + 17;
  auto loss_fn = [&] { return objective::total_loss(model, examples, noise, options).total; };
  const auto report = diffnum::finite_diff_check(loss_fn, params, br.grads, gopts);
  for (const auto& pc : report.params) {
    out << pc.name << " max_rel_error=" << pc.max_rel_error << " checked=" << pc.coords_checked
        << "/" << pc.coords_total << "\n";
  }
  out << (report.passed ? "PASS" : "FAIL") << " max_rel_error=" << report.max_rel_error()
      << " tol=" << report.tol << "\n";
  return report.passed ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal-flow VAE toolkit: data generation, training, evaluation, interventions"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, int_c, grad_c;

  CLI::App* gen = app.add_subcommand("gen-data", "write train/test CSVs");
  add_common(gen, gen_c);
  gen_c.bind.value(gen, "--n-train", "n_train", "training records");
  gen_c.bind.value(gen, "--n-test", "n_test", "test records");
  gen_c.bind.flag(gen, "--spurious", "spurious", "true", "append the spurious bit");
  gen_c.bind.value(gen, "--align-ratio", "align_ratio", "train agreement of the spurious bit");
  gen_c.bind.value(gen, "--mixer-seed", "mixer_seed", "mixer seed");

  CLI::App* tr = app.add_subcommand("train", "fit a model");
  add_common(tr, train_c);
  train_c.bind.value(tr, "--train-csv", "train_csv", "training split");
  train_c.bind.value(tr, "--mask", "mask", "true, full or file");
  train_c.bind.value(tr, "--mask-file", "mask_file", "edge list for --mask file");
  train_c.bind.flag(tr, "--no-flow", "flow", "false", "replace the flow by the identity");
  train_c.bind.flag(tr, "--no-cond-prior", "cond_prior", "false", "use a standard normal prior");
  train_c.bind.value(tr, "--epochs", "epochs", "training epochs");
  train_c.bind.value(tr, "--resume", "resume", "continue from this checkpoint");

  CLI::App* ev = app.add_subcommand("eval", "downstream and structure report");
  add_common(ev, eval_c);
  eval_c.bind.value(ev, "--checkpoint", "checkpoint", "trained checkpoint");
  eval_c.bind.value(ev, "--train-csv", "train_csv", "training split");
  eval_c.bind.value(ev, "--test-csv", "test_csv", "test split");
  eval_c.bind.value(ev, "--tau", "tau", "pruning threshold");

  std::vector<std::string> do_flags;
  CLI::App* iv = app.add_subcommand("intervene", "traversal / do-operation grid");
  add_common(iv, int_c);
  int_c.bind.value(iv, "--checkpoint", "checkpoint", "trained checkpoint");
  int_c.bind.value(iv, "--data-csv", "data_csv", "split holding the inputs");
  int_c.bind.value(iv, "--inputs", "inputs", "row indices, comma separated");
  int_c.bind.value(iv, "--dims", "dims", "1-based dims to sweep, comma separated");
  int_c.bind.value(iv, "--values", "values", "sweep values, comma separated");
  iv->add_option("--do", do_flags, "dim=value intervention, repeatable");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  add_common(gc, grad_c);
  grad_c.bind.value(gc, "--tol", "grad_tol", "relative tolerance");
  grad_c.bind.flag(gc, "--corrupt-gradient", "corrupt_gradient", "true",
                   "perturb the analytic gradient (must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(resolve(gen_c), out);
    if (tr->parsed()) return cmd_train(resolve(train_c), out, err);
    if (ev->parsed()) return cmd_eval(resolve(eval_c), out);
    if (iv->parsed()) return cmd_intervene(resolve(int_c), do_flags, out);
    if (gc->parsed()) return cmd_gradcheck(resolve(grad_c), out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LoadError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace dcvae::cli
