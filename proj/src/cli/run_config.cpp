#include "dcvae/cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dcvae/errors.hpp"

namespace dcvae::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(text);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

}  // namespace

const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = {
      {"seed", "0", "master seed for initialization, shuffling and noise"},
      {"batch_size", "128", "training minibatch size"},
      {"epochs", "801", "training epochs"},
      {"latent_dim", "4", "latent dimension d"},
      {"m", "4", "number of supervised latent dimensions"},
      {"sigma_dec", "0.1667", "decoder standard deviation"},
      {"beta_sup", "8", "weight of the supervision term"},
      {"lr_encoder", "5e-05", "encoder learning rate"},
      {"lr_flow", "5e-05", "flow conditioner learning rate"},
      {"lr_a", "0.001", "adjacency weight learning rate"},
      {"lr_prior", "5e-05", "conditional prior learning rate"},
      {"lr_decoder", "5e-05", "decoder learning rate"},
      {"adam_beta1", "0.2", "Adam beta1"},
      {"adam_beta2", "0.999", "Adam beta2"},
      {"adam_epsilon", "1e-08", "Adam epsilon"},
      {"mask", "true", "adjacency support: true, full or file"},
      {"mask_file", "", "edge list used when mask=file"},
      {"flow", "true", "enable the causal flow"},
      {"cond_prior", "true", "enable the conditional prior"},
      {"conditioner_uses_x", "false", "feed x to the flow conditioners"},
      {"flow_identity_init", "true", "zero-initialize the conditioner output layers"},
      {"sup_mode", "mse", "supervision loss: mse or bce"},
      {"train_csv", "", "training split"},
      {"test_csv", "", "test split"},
      {"data_csv", "", "inputs for intervene"},
      {"checkpoint", "", "checkpoint path"},
      {"resume", "", "checkpoint to continue training from"},
      {"out_dir", ".", "output directory"},
      {"n_train", "5847", "generated training records"},
      {"n_test", "1461", "generated test records"},
      {"spurious", "false", "append the spurious bit to generated data"},
      {"align_ratio", "0.8", "train agreement of the spurious bit"},
      {"mixer_seed", "", "mixer seed (empty: derived from seed)"},
      {"probe_epochs", "200", "downstream classifier epochs"},
      {"probe_seed", "0", "downstream classifier seed"},
      {"probe_batch_size", "1", "downstream classifier minibatch"},
      {"tau", "0.25", "adjacency pruning threshold"},
      {"mi_bins", "16", "bins per axis for mutual information"},
      {"inputs", "0", "row indices for intervene"},
      {"dims", "", "1-based latent dims to sweep (empty: all supervised)"},
      {"values", "", "sweep values (empty: 10 between training percentiles 1 and 99)"},
      {"do", "", "interventions dim=value separated by ';'"},
      {"grad_tol", "0.0001", "gradcheck tolerance"},
      {"grad_records", "4", "records in the gradcheck batch"},
      {"corrupt_gradient", "false", "perturb the analytic gradient (gradcheck self-test)"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : known_keys()) values_[k.key] = k.default_value;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      cfg.apply(t);
    } catch (const UsageError& e) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

void RunConfig::apply(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0.0;
  if (!parse_number(get(key), v)) throw UsageError(key + ": expected a number, got '" + get(key) + "'");
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  std::uint64_t v = 0;
  if (!parse_number(get(key), v)) {
    throw UsageError(key + ": expected a non-negative integer, got '" + get(key) + "'");
  }
  return v;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError(key + ": expected true or false, got '" + v + "'");
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig c;
  c.seed = get_u64("seed");
  c.batch_size = get_size("batch_size");
  c.epochs = get_size("epochs");
  c.latent_dim = get_size("latent_dim");
  c.m = get_size("m");
  c.sigma_dec = get_double("sigma_dec");
  c.beta_sup = get_double("beta_sup");
  c.lr_encoder = get_double("lr_encoder");
  c.lr_flow = get_double("lr_flow");
  c.lr_a = get_double("lr_a");
  c.lr_prior = get_double("lr_prior");
  c.lr_decoder = get_double("lr_decoder");
  c.adam_beta1 = get_double("adam_beta1");
  c.adam_beta2 = get_double("adam_beta2");
  c.adam_epsilon = get_double("adam_epsilon");
  const std::string& mask = get("mask");
  if (mask == "true") {
    c.mask_kind = model::MaskKind::kTrueGraph;
  } else if (mask == "full") {
    c.mask_kind = model::MaskKind::kFullLower;
  } else if (mask == "file") {
    if (get("mask_file").empty()) throw UsageError("mask=file needs mask_file");
    c.mask_kind = model::MaskKind::kCustom;
    c.custom_edges = read_edge_file(get("mask_file"));
  } else {
    throw UsageError("mask: expected true, full or file, got '" + mask + "'");
  }
  c.flow_enabled = get_bool("flow");
  c.conditional_prior_enabled = get_bool("cond_prior");
  c.conditioner_uses_x = get_bool("conditioner_uses_x");
  c.flow_identity_init = get_bool("flow_identity_init");
  const std::string& sup = get("sup_mode");
  if (sup == "mse") {
    c.sup_mode = objective::SupMode::kMse;
  } else if (sup == "bce") {
    c.sup_mode = objective::SupMode::kBce;
  } else {
    throw UsageError("sup_mode: expected mse or bce, got '" + sup + "'");
  }
  try {
    c.validate();
    (void)c.mask();
  } catch (const ContractViolation& e) {
    throw UsageError(std::string("invalid training config: ") + e.what());
  }
  return c;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

void RunConfig::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  out << to_text();
}

std::vector<model::Edge> read_edge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read mask file " + path.string());
  std::vector<model::Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto parts = split(t, ',');
    std::size_t p = 0, c = 0;
    if (parts.size() != 2 || !parse_number(parts[0], p) || !parse_number(parts[1], c) || p == 0 ||
        c == 0) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) +
                       ": expected 'parent,child' with 1-based indices");
    }
    edges.push_back({p - 1, c - 1});
  }
  return edges;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) {
    double v = 0.0;
    if (!parse_number(part, v)) throw UsageError(what + ": '" + part + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::vector<std::size_t> parse_index_list(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) {
    std::size_t v = 0;
    if (!parse_number(part, v)) throw UsageError(what + ": '" + part + "' is not an index");
    out.push_back(v);
  }
  return out;
}

flows::Intervention parse_do(const std::string& text) {
  const auto eq = text.find('=');
  std::size_t dim = 0;
  double value = 0.0;
  if (eq == std::string::npos || !parse_number(trim(text.substr(0, eq)), dim) ||
      !parse_number(trim(text.substr(eq + 1)), value) || dim == 0) {
    throw UsageError("--do expects dim=value with a 1-based dim, got '" + text + "'");
  }
  return {dim - 1, value};
}

}  // namespace dcvae::cli
