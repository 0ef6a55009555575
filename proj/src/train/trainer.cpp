#include "dcvae/train/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "dcvae/parallel.hpp"

namespace dcvae::train {

using nlohmann::json;

namespace {

constexpr char kMagicPrefix[] = "DCVAE";
constexpr std::uint64_t kShuffleTag = 0x73687566;  // "shuf"
constexpr std::uint64_t kNoiseTag = 0x6e6f6973;    // "nois"
constexpr std::uint64_t kInitTag = 0x696e6974;     // "init"

std::seed_seq seq3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return std::seed_seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                       static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                       static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  auto s = seq3(seed, tag, index);
  return std::mt19937_64(s);
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& state) {
  std::mt19937_64 rng;
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw LoadError("checkpoint rng state is unreadable");
  return rng;
}

json config_to_json(const TrainConfig& c) {
  json edges = json::array();
  for (const auto& e : c.custom_edges) edges.push_back({e.parent, e.child});
  return {{"seed", c.seed},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"latent_dim", c.latent_dim},
          {"m", c.m},
          {"sigma_dec", c.sigma_dec},
          {"beta_sup", c.beta_sup},
          {"lr_encoder", c.lr_encoder},
          {"lr_flow", c.lr_flow},
          {"lr_a", c.lr_a},
          {"lr_prior", c.lr_prior},
          {"lr_decoder", c.lr_decoder},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"mask_kind", model::mask_kind_name(c.mask_kind)},
          {"custom_edges", edges},
          {"flow_enabled", c.flow_enabled},
          {"conditional_prior_enabled", c.conditional_prior_enabled},
          {"conditioner_uses_x", c.conditioner_uses_x},
          {"flow_identity_init", c.flow_identity_init},
          {"sup_mode", c.sup_mode == objective::SupMode::kMse ? "mse" : "bce"}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.m = j.at("m").get<std::size_t>();
  c.sigma_dec = j.at("sigma_dec").get<double>();
  c.beta_sup = j.at("beta_sup").get<double>();
  c.lr_encoder = j.at("lr_encoder").get<double>();
  c.lr_flow = j.at("lr_flow").get<double>();
  c.lr_a = j.at("lr_a").get<double>();
  c.lr_prior = j.at("lr_prior").get<double>();
  c.lr_decoder = j.at("lr_decoder").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
  c.mask_kind = model::parse_mask_kind(j.at("mask_kind").get<std::string>());
  for (const auto& e : j.at("custom_edges")) {
    c.custom_edges.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()});
  }
  c.flow_enabled = j.at("flow_enabled").get<bool>();
  c.conditional_prior_enabled = j.at("conditional_prior_enabled").get<bool>();
  c.conditioner_uses_x = j.at("conditioner_uses_x").get<bool>();
  c.flow_identity_init = j.at("flow_identity_init").get<bool>();
  c.sup_mode = j.at("sup_mode").get<std::string>() == "bce" ? objective::SupMode::kBce
                                                            : objective::SupMode::kMse;
  return c;
}

diffnum::AdamHyper hyper(const TrainConfig& c) {
  return {c.adam_beta1, c.adam_beta2, c.adam_epsilon};
}

std::vector<diffnum::ParamGroup> groups_of(model::DcvaeModel& m, const TrainConfig& c) {
  return m.param_groups(c.lr_encoder, c.lr_flow, c.lr_a, c.lr_prior, c.lr_decoder);
}

void check_dataset(const Checkpoint& ck, const datagen::DatasetSplit& train) {
  const auto& mc = ck.model.config();
  if (train.records.empty()) throw PreconditionError("training split is empty");
  for (const auto& r : train.records) {
    if (r.x.size() != mc.n_obs) {
      throw PreconditionError("dataset has " + std::to_string(r.x.size()) +
                              " observation columns, model expects " + std::to_string(mc.n_obs));
    }
  }
  if (train.records.front().y().size() < mc.m) {
    throw PreconditionError("dataset has fewer labels than m");
  }
  if (ck.config.sup_mode == objective::SupMode::kBce) {
    for (const auto& r : train.records) {
      for (std::size_t i = 0; i < mc.m; ++i) {
        double v = r.y()[i];
        if (v != 0.0 && v != 1.0) {
          throw PreconditionError("bce supervision needs binary labels; dataset labels are continuous");
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ContractViolation(std::string(name) + " must be positive");
    }
  };
  if (batch_size == 0) throw ContractViolation("batch_size must be positive");
  if (latent_dim == 0) throw ContractViolation("latent_dim must be positive");
  if (m == 0 || m > latent_dim) throw ContractViolation("m must satisfy 1 <= m <= latent_dim");
  positive(sigma_dec, "sigma_dec");
  if (!(beta_sup >= 0.0)) throw ContractViolation("beta_sup must be non-negative");
  positive(lr_encoder, "lr_encoder");
  positive(lr_flow, "lr_flow");
  positive(lr_a, "lr_a");
  positive(lr_prior, "lr_prior");
  positive(lr_decoder, "lr_decoder");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ContractViolation("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ContractViolation("adam_beta2 must be in [0, 1)");
  positive(adam_epsilon, "adam_epsilon");
}

model::ModelConfig TrainConfig::model_config(std::size_t n_obs, std::size_t u_dim) const {
  model::ModelConfig mc;
  mc.n_obs = n_obs;
  mc.latent_dim = latent_dim;
  mc.m = m;
  mc.u_dim = u_dim;
  mc.sigma_dec = sigma_dec;
  mc.flow_enabled = flow_enabled;
  mc.conditional_prior_enabled = conditional_prior_enabled;
  mc.conditioner_uses_x = conditioner_uses_x;
  mc.flow_identity_init = flow_identity_init;
  return mc;
}

std::vector<std::uint8_t> TrainConfig::mask() const {
  return model::build_mask(mask_kind, latent_dim, custom_edges);
}

// ---------------------------------------------------------------------------
// Training

std::vector<objective::Example> make_examples(const datagen::DatasetSplit& split) {
  std::vector<objective::Example> out;
  out.reserve(split.records.size());
  for (const auto& r : split.records) out.push_back({r.x, r.y(), r.u()});
  return out;
}

Checkpoint initialize(const TrainConfig& config, std::size_t n_obs, std::size_t u_dim) {
  config.validate();
  Checkpoint ck;
  ck.config = config;
  auto init_rng = stream(config.seed, kInitTag, 0);
  ck.model = model::DcvaeModel(config.model_config(n_obs, u_dim), config.mask(), init_rng());
  for (const auto& g : groups_of(ck.model, config)) {
    ck.optimizer.push_back(diffnum::AdamState::zeros_like(g, hyper(config)));
  }
  ck.epoch = 0;
  ck.rng_state = rng_to_string(stream(config.seed, kNoiseTag, 0));
  return ck;
}

FitResult fit(const TrainConfig& config, const datagen::DatasetSplit& train,
              const std::function<void(const EpochLoss&)>& on_epoch) {
  if (train.records.empty()) throw PreconditionError("training split is empty");
  const auto& first = train.records.front();
  Checkpoint ck = initialize(config, first.x.size(), first.u().size());
  return resume(std::move(ck), train, config.epochs, on_epoch);
}

FitResult resume(Checkpoint ck, const datagen::DatasetSplit& train, std::size_t target_epochs,
                 const std::function<void(const EpochLoss&)>& on_epoch) {
  check_dataset(ck, train);
  const TrainConfig& cfg = ck.config;
  const std::size_t d = ck.model.config().latent_dim;
  const auto examples = make_examples(train);
  const std::size_t n = examples.size();
  const auto options = cfg.loss_options();

  std::mt19937_64 noise_rng = rng_from_string(ck.rng_state);
  objective::BatchKernel kernel;
  std::vector<objective::Example> batch;
  std::vector<double> noise;
  std::vector<std::size_t> order(n);
  FitResult result;

  while (ck.epoch < target_epochs) {
    const std::size_t epoch = ck.epoch + 1;
    Checkpoint last_good = ck;
    last_good.rng_state = rng_to_string(noise_rng);

    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = stream(cfg.seed, kShuffleTag, epoch);
    // Fisher-Yates, written out so the permutation does not depend on the
    // standard library's std::shuffle.
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(shuffle_rng)]);
    }

    auto groups = groups_of(ck.model, cfg);
    EpochLoss el;
    el.epoch = epoch;
    try {
      for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        const std::size_t count = std::min(cfg.batch_size, n - start);
        batch.clear();
        for (std::size_t k = 0; k < count; ++k) batch.push_back(examples[order[start + k]]);
        noise.resize(count * d);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& v : noise) v = normal(noise_rng);

        objective::BatchResult br = kernel.evaluate(ck.model, batch, noise, options);
        if (!std::isfinite(br.loss.total)) throw NumericError("batch loss is not finite");

        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          std::vector<diffnum::Tensor> grads;
          grads.reserve(groups[gi].params.size());
          for (const diffnum::Parameter* p : groups[gi].params) {
            const diffnum::Tensor* t = br.grads.find(*p);
            grads.push_back(t ? *t : diffnum::Tensor(p->value.shape(), 0.0));
          }
          diffnum::adam_step(groups[gi], grads, ck.optimizer[gi]);
        }

        const double w = static_cast<double>(count);
        el.recon += w * br.loss.recon;
        el.kl += w * br.loss.kl;
        el.sup += w * br.loss.sup;
      }
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " +
                                 e.what(),
                             std::move(last_good));
    }
    const double inv = 1.0 / static_cast<double>(n);
    el.recon *= inv;
    el.kl *= inv;
    el.sup *= inv;
    el.total = el.recon + el.kl + cfg.beta_sup * el.sup;
    if (!std::isfinite(el.total)) {
      throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) +
                                 ": epoch loss is not finite",
                             std::move(last_good));
    }
    ck.epoch = epoch;
    result.log.push_back(el);
    if (on_epoch) on_epoch(el);
  }
  ck.rng_state = rng_to_string(noise_rng);
  result.checkpoint = std::move(ck);
  return result;
}

void write_loss_log(const LossLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "epoch,recon,kl,sup,total\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.recon << ',' << e.kl << ',' << e.sup << ',' << e.total << '\n';
  }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in, const char* what) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw LoadError(std::string("checkpoint truncated in ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_values(std::ostream& out, std::span<const double> values) {
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void get_values(std::istream& in, std::span<double> values) {
  for (double& v : values) v = std::bit_cast<double>(get_u64(in, "payload"));
}

json shape_json(const diffnum::Tensor& t) { return json(t.shape()); }

}  // namespace

void save_checkpoint(const Checkpoint& ck_in, const std::filesystem::path& path) {
  // param_groups() needs mutable access; a copy keeps the caller's checkpoint const.
  Checkpoint ck = ck_in;
  const auto& mc = ck.model.config();

  json tensors = json::array();
  std::size_t count = 0;
  auto named = ck.model.named_parameters();
  for (const auto& [group, p] : named) {
    tensors.push_back({{"group", group}, {"name", p->name}, {"shape", shape_json(p->value)}});
    count += p->value.size();
  }
  auto groups = groups_of(ck.model, ck.config);
  if (groups.size() != ck.optimizer.size()) {
    throw ContractViolation("checkpoint optimizer state does not match parameter groups");
  }
  json optim = json::array();
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& st = ck.optimizer[gi];
    optim.push_back({{"group", groups[gi].name},
                     {"step_count", st.step_count},
                     {"beta1", st.beta1},
                     {"beta2", st.beta2},
                     {"epsilon", st.epsilon},
                     {"tensors", st.first_moment.size()}});
    for (const auto& t : st.first_moment) count += t.size();
    for (const auto& t : st.second_moment) count += t.size();
  }

  json header = {{"format", "dcvae-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"config", config_to_json(ck.config)},
                 {"n_obs", mc.n_obs},
                 {"u_dim", mc.u_dim},
                 {"mask", ck.model.adjacency.mask_bits()},
                 {"epoch", ck.epoch},
                 {"rng_state", ck.rng_state},
                 {"tensors", tensors},
                 {"optimizer", optim},
                 {"value_count", count}};
  const std::string text = header.dump(1);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kMagicPrefix << kCheckpointVersion;
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u64(out, count);
  for (const auto& [group, p] : named) put_values(out, p->value.values());
  for (const auto& st : ck.optimizer) {
    for (const auto& t : st.first_moment) put_values(out, t.values());
    for (const auto& t : st.second_moment) put_values(out, t.values());
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[6];
  in.read(magic, 6);
  if (in.gcount() != 6 || std::memcmp(magic, kMagicPrefix, 5) != 0) {
    throw LoadError(path.string() + " is not a DCVAE checkpoint");
  }
  const int version = magic[5] - '0';
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint version " + std::string(1, magic[5]) + " is not supported (this build reads version " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = get_u64(in, "header length");
  if (header_len > (1u << 28)) throw LoadError("checkpoint header length is implausible");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::uint64_t>(in.gcount()) != header_len) {
    throw LoadError("checkpoint truncated in header");
  }

  Checkpoint ck;
  std::size_t declared = 0;
  try {
    json h = json::parse(text);
    if (h.at("version").get<int>() != kCheckpointVersion) {
      throw LoadError("checkpoint header version " + h.at("version").dump() +
                      " does not match this build (version " + std::to_string(kCheckpointVersion) + ")");
    }
    ck.config = config_from_json(h.at("config"));
    ck.epoch = h.at("epoch").get<std::size_t>();
    ck.rng_state = h.at("rng_state").get<std::string>();
    auto mask = h.at("mask").get<std::vector<std::uint8_t>>();
    ck.model = model::DcvaeModel(
        ck.config.model_config(h.at("n_obs").get<std::size_t>(), h.at("u_dim").get<std::size_t>()),
        mask, 0);
    declared = h.at("value_count").get<std::size_t>();

    auto named = ck.model.named_parameters();
    const auto& tensors = h.at("tensors");
    if (tensors.size() != named.size()) throw LoadError("checkpoint tensor list does not match the model");
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != named[i].second->name ||
          t.at("shape").get<std::vector<std::size_t>>() != named[i].second->value.shape()) {
        throw LoadError("checkpoint tensor " + t.at("name").get<std::string>() +
                        " does not match the model");
      }
    }
    auto groups = groups_of(ck.model, ck.config);
    const auto& optim = h.at("optimizer");
    if (optim.size() != groups.size()) throw LoadError("checkpoint optimizer groups do not match");
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      auto st = diffnum::AdamState::zeros_like(groups[gi], hyper(ck.config));
      st.step_count = optim[gi].at("step_count").get<std::uint64_t>();
      st.beta1 = optim[gi].at("beta1").get<double>();
      st.beta2 = optim[gi].at("beta2").get<double>();
      st.epsilon = optim[gi].at("epsilon").get<double>();
      ck.optimizer.push_back(std::move(st));
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("checkpoint header is malformed: ") + e.what());
  }

  const std::uint64_t count = get_u64(in, "payload length");
  if (count != declared) throw LoadError("checkpoint payload length disagrees with header");
  for (auto& [group, p] : ck.model.named_parameters()) {
    get_values(in, std::span<double>(p->value.data(), p->value.size()));
  }
  for (auto& st : ck.optimizer) {
    for (auto& t : st.first_moment) get_values(in, std::span<double>(t.data(), t.size()));
    for (auto& t : st.second_moment) get_values(in, std::span<double>(t.data(), t.size()));
  }
  in.peek();
  if (!in.eof()) throw LoadError("checkpoint has trailing bytes");
  return ck;
}

}  // namespace dcvae::train
