#include "dcvae/datagen/csv_io.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "dcvae/errors.hpp"

namespace dcvae::datagen {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(std::string_view field, std::size_t line, const std::string& column) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("column '" + column + "': cannot parse '" + std::string(field) + "'", line);
  }
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open sidecar " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value in " + path.string(), lineno);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  return std::filesystem::path(csv.string() + ".meta");
}

std::vector<std::string> csv_columns(std::size_t n_obs) {
  std::vector<std::string> cols = {"theta",   "phi",      "length",     "position", "theta_n",
                                   "phi_n",   "length_n", "position_n", "task",     "spurious"};
  for (std::size_t i = 0; i < n_obs; ++i) cols.push_back("x" + std::to_string(i));
  return cols;
}

void write_csv(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  const auto cols = csv_columns(split.header.n_obs);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const FactorRecord& r : split.records) {
    if (r.x.size() != split.header.n_obs) {
      throw ContractViolation("record observation size " + std::to_string(r.x.size()) +
                              " does not match n_obs " + std::to_string(split.header.n_obs));
    }
    for (double v : r.xi) out << format_double(v) << ',';
    for (double v : r.xi_norm) out << format_double(v) << ',';
    out << r.task_label << ',';
    if (r.spurious) out << *r.spurious;
    for (double v : r.x) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw LoadError("write failed for " + path.string());

  std::ofstream meta(sidecar_path(path));
  if (!meta) throw LoadError("cannot write " + sidecar_path(path).string());
  meta << "factor_ranges=";
  for (std::size_t i = 0; i < kFactorCount; ++i) {
    meta << (i ? "," : "") << format_double(split.header.factor_ranges[i].lo) << ','
         << format_double(split.header.factor_ranges[i].hi);
  }
  meta << "\nmixer_seed=" << split.header.mixer_seed << "\nn_obs=" << split.header.n_obs
       << "\nrole=" << role_name(split.role) << '\n';
}

DatasetSplit read_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw LoadError("no such dataset: " + path.string());
  const auto kv = read_key_values(sidecar_path(path));
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("sidecar missing key '" + key + "'", 0);
    return it->second;
  };

  DatasetSplit split;
  {
    const auto fields = split_fields(need("factor_ranges"));
    if (fields.size() != 2 * kFactorCount) throw ParseError("factor_ranges needs 8 values", 0);
    for (std::size_t i = 0; i < kFactorCount; ++i) {
      split.header.factor_ranges[i].lo = parse_double(fields[2 * i], 0, "factor_ranges");
      split.header.factor_ranges[i].hi = parse_double(fields[2 * i + 1], 0, "factor_ranges");
    }
  }
  try {
    split.header.mixer_seed = std::stoull(need("mixer_seed"));
    split.header.n_obs = std::stoull(need("n_obs"));
  } catch (const std::logic_error&) {
    throw ParseError("sidecar has a non-integer mixer_seed or n_obs", 0);
  }
  if (auto it = kv.find("role"); it != kv.end()) {
    split.role = it->second == "test" ? SplitRole::kTest : SplitRole::kTrain;
  }

  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  const auto cols = csv_columns(split.header.n_obs);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("missing header row", 1);
  {
    const auto header = split_fields(line);
    if (header.size() != cols.size()) {
      throw ParseError("header has " + std::to_string(header.size()) + " columns, expected " +
                           std::to_string(cols.size()),
                       1);
    }
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (header[i] != cols[i]) {
        throw ParseError("header column " + std::to_string(i) + " is '" +
                             std::string(header[i]) + "', expected '" + cols[i] + "'",
                         1);
      }
    }
  }

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != cols.size()) {
      throw ParseError("expected " + std::to_string(cols.size()) + " columns, found " +
                           std::to_string(f.size()),
                       lineno);
    }
    FactorRecord r;
    for (std::size_t i = 0; i < kFactorCount; ++i) {
      r.xi[i] = parse_double(f[i], lineno, cols[i]);
      r.xi_norm[i] = parse_double(f[kFactorCount + i], lineno, cols[kFactorCount + i]);
    }
    const double task = parse_double(f[8], lineno, "task");
    if (task != 0.0 && task != 1.0) throw ParseError("task must be 0 or 1", lineno);
    r.task_label = static_cast<int>(task);
    if (!f[9].empty()) {
      const double s = parse_double(f[9], lineno, "spurious");
      if (s != 1.0 && s != -1.0) throw ParseError("spurious must be -1 or 1", lineno);
      r.spurious = static_cast<int>(s);
    }
    r.x.resize(split.header.n_obs);
    for (std::size_t i = 0; i < split.header.n_obs; ++i) {
      r.x[i] = parse_double(f[10 + i], lineno, cols[10 + i]);
    }
    split.records.push_back(std::move(r));
  }
  return split;
}

}  // namespace dcvae::datagen
