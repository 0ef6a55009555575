#include "dcvae/eval/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "dcvae/diffnum/adam.hpp"
#include "dcvae/errors.hpp"
#include "dcvae/parallel.hpp"

namespace dcvae::eval {

std::vector<double> Matrix::column(std::size_t c) const {
  if (c >= cols) throw ContractViolation("column index out of range");
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = data[r * cols + c];
  return out;
}

Matrix representations(const model::DcvaeModel& model, const datagen::DatasetSplit& split) {
  Matrix m;
  m.rows = split.records.size();
  m.cols = model.config().latent_dim;
  m.data.assign(m.rows * m.cols, 0.0);
  const auto n = static_cast<std::int64_t>(m.rows);
  std::vector<std::exception_ptr> errors(m.rows);
#pragma omp parallel for num_threads(thread_budget()) schedule(static)
  for (std::int64_t r = 0; r < n; ++r) {
    const auto k = static_cast<std::size_t>(r);
    try {
      auto rep = model.representation(split.records[k].x);
      std::copy(rep.begin(), rep.end(), m.data.begin() + static_cast<std::ptrdiff_t>(k * m.cols));
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return m;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ContractViolation("spearman: need two equal-length samples of size >= 2");
  }
  auto ra = ranks(a);
  auto rb = ranks(b);
  return pearson(ra, rb);
}

// ---------------------------------------------------------------------------
// Downstream classifier. Small enough that a hand-written backward pass is
// much cheaper than recording a tape per sample.

namespace {

struct ProbeScratch {
  std::vector<double> xs, h;
};

double probe_logit(const DownstreamClassifier& c, std::span<const double> rep, ProbeScratch& s) {
  const std::size_t d = rep.size();
  const std::size_t hdim = c.hidden.out_features();
  s.xs.resize(d);
  s.h.resize(hdim);
  for (std::size_t i = 0; i < d; ++i) s.xs[i] = (rep[i] - c.feature_mean[i]) / c.feature_scale[i];
  const auto& w1 = c.hidden.weight.value.values();
  const auto& b1 = c.hidden.bias.value.values();
  for (std::size_t k = 0; k < hdim; ++k) {
    double a = b1[k];
    for (std::size_t i = 0; i < d; ++i) a += w1[k * d + i] * s.xs[i];
    s.h[k] = std::tanh(a);
  }
  const auto& w2 = c.output.weight.value.values();
  double logit = c.output.bias.value[0];
  for (std::size_t k = 0; k < hdim; ++k) logit += w2[k] * s.h[k];
  return logit;
}

double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

}  // namespace

double DownstreamClassifier::probability(std::span<const double> rep) const {
  if (rep.size() != feature_mean.size()) throw ContractViolation("classifier input has wrong size");
  ProbeScratch s;
  return sigmoid(probe_logit(*this, rep, s));
}

double DownstreamClassifier::accuracy(const Matrix& reps, std::span<const int> labels) const {
  if (reps.rows != labels.size() || reps.rows == 0) {
    throw ContractViolation("accuracy: need one label per representation");
  }
  std::size_t correct = 0;
  for (std::size_t r = 0; r < reps.rows; ++r) correct += predict(reps.row(r)) == labels[r] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(reps.rows);
}

DownstreamClassifier fit_downstream(const Matrix& reps, std::span<const int> labels,
                                    const DownstreamOptions& options) {
  if (reps.rows != labels.size() || reps.rows == 0) {
    throw ContractViolation("fit_downstream: need one label per representation");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractViolation("fit_downstream: labels must be 0 or 1");
  }
  if (std::all_of(labels.begin(), labels.end(), [&](int y) { return y == labels[0]; })) {
    throw DegenerateDataError("fit_downstream: every training label is " + std::to_string(labels[0]));
  }
  const std::size_t d = reps.cols;
  const std::size_t n = reps.rows;

  DownstreamClassifier c;
  c.feature_mean.assign(d, 0.0);
  c.feature_scale.assign(d, 1.0);
  for (std::size_t i = 0; i < d; ++i) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += reps.data[r * d + i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (reps.data[r * d + i] - mean) * (reps.data[r * d + i] - mean);
    var /= static_cast<double>(n);
    c.feature_mean[i] = mean;
    c.feature_scale[i] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }

  std::mt19937_64 rng(options.seed);
  c.hidden = diffnum::make_dense("probe.l0", d, options.hidden, rng);
  c.output = diffnum::make_dense("probe.l1", options.hidden, 1, rng);
  diffnum::ParamGroup group{"probe",
                            {&c.hidden.weight, &c.hidden.bias, &c.output.weight, &c.output.bias},
                            options.learning_rate};
  // Standard Adam moments for the probe; it is not part of the model.
  auto state = diffnum::AdamState::zeros_like(group, {0.9, 0.999, 1e-8});
  std::vector<diffnum::Tensor> grads;
  for (auto* p : group.params) grads.emplace_back(p->value.shape(), 0.0);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  ProbeScratch s;
  const std::size_t hdim = options.hidden;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t count = std::min(options.batch_size, n - start);
      for (auto& gt : grads) gt.fill(0.0);
      auto& gw1 = grads[0];
      auto& gb1 = grads[1];
      auto& gw2 = grads[2];
      auto& gb2 = grads[3];
      const auto& w2 = c.output.weight.value;
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t r = order[start + k];
        const double logit = probe_logit(c, reps.row(r), s);
        const double gl = (sigmoid(logit) - static_cast<double>(labels[r])) / static_cast<double>(count);
        gb2[0] += gl;
        for (std::size_t j = 0; j < hdim; ++j) {
          gw2[j] += gl * s.h[j];
          const double gpre = gl * w2[j] * (1.0 - s.h[j] * s.h[j]);
          gb1[j] += gpre;
          for (std::size_t i = 0; i < d; ++i) gw1[j * d + i] += gpre * s.xs[i];
        }
      }
      diffnum::adam_step(group, grads, state);
    }
  }
  c.training_accuracy = c.accuracy(reps, labels);
  return c;
}

double sample_efficiency(double acc_100, double acc_all) {
  if (!(acc_all > 0.0)) throw ContractViolation("sample_efficiency: acc_all must be positive");
  if (!(acc_100 > 0.0) || acc_100 > 100.0 || acc_all > 100.0) {
    throw ContractViolation("sample_efficiency: accuracies must be in (0, 100]");
  }
  return 100.0 * acc_100 / acc_all;
}

RobustnessReport robustness_from_predictions(std::span<const int> predictions,
                                             std::span<const int> task_labels,
                                             std::span<const int> spurious) {
  if (predictions.size() != task_labels.size() || predictions.size() != spurious.size() ||
      predictions.empty()) {
    throw ContractViolation("robustness: predictions, labels and spurious bits must align");
  }
  RobustnessReport rep;
  for (int t = 0; t < 2; ++t) {
    for (int sp = 0; sp < 2; ++sp) {
      rep.groups[static_cast<std::size_t>(2 * t + sp)].task_label = t;
      rep.groups[static_cast<std::size_t>(2 * t + sp)].spurious = sp;
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if ((task_labels[i] != 0 && task_labels[i] != 1) || (spurious[i] != 0 && spurious[i] != 1)) {
      throw ContractViolation("robustness: labels must be 0 or 1");
    }
    auto& g = rep.groups[static_cast<std::size_t>(2 * task_labels[i] + spurious[i])];
    ++g.count;
    const bool ok = predictions[i] == task_labels[i];
    g.correct += ok ? 1 : 0;
    correct += ok ? 1 : 0;
  }
  rep.test_avg = 100.0 * static_cast<double>(correct) / static_cast<double>(predictions.size());
  rep.test_worst = 100.0;
  for (auto& g : rep.groups) {
    g.present = g.count > 0;
    if (!g.present) {
      rep.missing_group = true;
      continue;
    }
    g.accuracy = 100.0 * static_cast<double>(g.correct) / static_cast<double>(g.count);
    rep.test_worst = std::min(rep.test_worst, g.accuracy);
  }
  return rep;
}

RobustnessReport robustness_eval(const DownstreamClassifier& classifier, const Matrix& reps,
                                 const datagen::DatasetSplit& test) {
  if (reps.rows != test.records.size()) throw ContractViolation("robustness: one rep per record");
  std::vector<int> pred(reps.rows), task(reps.rows), sp(reps.rows);
  for (std::size_t r = 0; r < reps.rows; ++r) {
    const auto& rec = test.records[r];
    if (!rec.spurious) throw PreconditionError("robustness: test split has no spurious bits");
    pred[r] = classifier.predict(reps.row(r));
    task[r] = rec.task_label;
    sp[r] = *rec.spurious > 0 ? 1 : 0;  // stored as ±1
  }
  return robustness_from_predictions(pred, task, sp);
}

// ---------------------------------------------------------------------------
// Structure

std::vector<model::Edge> prune_adjacency(const flows::AdjacencyMatrix& adjacency, double tau) {
  if (!(tau > 0.0)) throw ContractViolation("prune_adjacency: tau must be positive");
  std::vector<model::Edge> out;
  for (std::size_t i = 0; i < adjacency.dim(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (adjacency.mask(i, j) && std::abs(adjacency.effective(i, j)) > tau) out.push_back({j, i});
    }
  }
  return out;
}

StructuralDiff structural_diff(std::span<const model::Edge> estimated,
                               std::span<const model::Edge> truth) {
  std::set<model::Edge> est(estimated.begin(), estimated.end());
  std::set<model::Edge> tru(truth.begin(), truth.end());
  StructuralDiff diff;
  std::set_difference(tru.begin(), tru.end(), est.begin(), est.end(), std::back_inserter(diff.missing));
  std::set_difference(est.begin(), est.end(), tru.begin(), tru.end(), std::back_inserter(diff.extra));
  diff.hamming = diff.missing.size() + diff.extra.size();
  return diff;
}

namespace {

std::vector<std::size_t> bin_indices(std::span<const double> v, std::size_t bins, bool& constant) {
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<std::size_t> idx(v.size(), 0);
  constant = !(hi > lo);
  if (constant) return idx;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto b = static_cast<std::size_t>((v[i] - lo) / width);
    idx[i] = std::min(b, bins - 1);
  }
  return idx;
}

}  // namespace

double mi_binned(std::span<const double> a, std::span<const double> b, std::size_t bins) {
  if (a.size() != b.size()) throw ContractViolation("mi_binned: samples must have equal length");
  if (a.size() < 1000) throw ContractViolation("mi_binned: need at least 1000 samples");
  if (bins < 2) throw ContractViolation("mi_binned: need at least 2 bins");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw NumericError("mi_binned: non-finite sample");
  }
  bool ca = false, cb = false;
  auto ia = bin_indices(a, bins, ca);
  auto ib = bin_indices(b, bins, cb);
  if (ca || cb) return 0.0;
  std::vector<double> joint(bins * bins, 0.0), pa(bins, 0.0), pb(bins, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[ia[i] * bins + ib[i]] += 1.0;
    pa[ia[i]] += 1.0;
    pb[ib[i]] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (std::size_t i = 0; i < bins; ++i) {
    for (std::size_t j = 0; j < bins; ++j) {
      const double c = joint[i * bins + j];
      if (c == 0.0) continue;
      // c/n * log2(c n / (a_i b_j))
      mi += c / n * std::log2(c * n / (pa[i] * pb[j]));
    }
  }
  return std::max(0.0, mi);
}

// ---------------------------------------------------------------------------
// Traversal / intervention

std::vector<double> factor_estimates(const model::DcvaeModel& model,
                                     std::span<const double> z_tilde) {
  auto rep = model.representation(model.decode(z_tilde));
  rep.resize(model.config().m);
  return rep;
}

std::vector<double> default_sweep(std::span<const double> column, std::size_t count) {
  if (column.empty() || count == 0) throw ContractViolation("default_sweep: empty input");
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double lo = quantile(0.01), hi = quantile(0.99);
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    out[k] = count == 1 ? 0.5 * (lo + hi)
                        : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  }
  return out;
}

namespace {

std::span<const double> flow_x(const model::DcvaeModel& model, std::span<const double> x) {
  return model.config().conditioner_uses_x ? x : std::span<const double>{};
}

/// do() on the model's flow, or plain coordinate assignment when the flow is
/// disabled (the latent is then z itself).
std::vector<double> model_do(const model::DcvaeModel& model, std::span<const double> z,
                             std::span<const flows::Intervention> ivs, std::span<const double> x) {
  if (!model.config().flow_enabled) {
    std::vector<double> out(z.begin(), z.end());
    std::vector<bool> seen(out.size(), false);
    for (const auto& iv : ivs) {
      if (iv.dim >= out.size() || seen[iv.dim]) throw ContractViolation("invalid or repeated intervention dim");
      seen[iv.dim] = true;
      out[iv.dim] = iv.value;
    }
    return out;
  }
  return flows::do_operation(z, ivs, model.adjacency, model.flow_params, flow_x(model, x));
}

void check_dims(const model::DcvaeModel& model, std::span<const std::size_t> dims) {
  for (std::size_t d : dims) {
    if (d >= model.config().m) {
      throw ContractViolation("unknown dim " + std::to_string(d + 1) + " (valid: 1.." +
                              std::to_string(model.config().m) + ")");
    }
  }
}

}  // namespace

std::vector<GridRow> build_grid(GridKind kind, const model::DcvaeModel& model,
                                const datagen::DatasetSplit& inputs,
                                std::span<const std::size_t> input_ids,
                                std::span<const std::size_t> dims,
                                std::span<const double> values,
                                std::span<const flows::Intervention> extra) {
  check_dims(model, dims);
  const std::size_t m = model.config().m;
  for (std::size_t id : input_ids) {
    if (id >= inputs.records.size()) throw ContractViolation("input id " + std::to_string(id) + " out of range");
  }
  const std::size_t per_input = dims.size() * values.size();
  std::vector<GridRow> rows(input_ids.size() * per_input);
  const auto n = static_cast<std::int64_t>(input_ids.size());
  std::vector<std::exception_ptr> errors(input_ids.size());
#pragma omp parallel for num_threads(thread_budget()) schedule(static)
  for (std::int64_t ii = 0; ii < n; ++ii) {
    const auto k = static_cast<std::size_t>(ii);
    try {
      const auto& x = inputs.records[input_ids[k]].x;
      const auto z = model.encode(x).mean;
      for (std::size_t di = 0; di < dims.size(); ++di) {
        std::vector<std::vector<double>> zts;
        if (kind == GridKind::kTraverse) {
          if (model.config().flow_enabled) {
            zts = flows::traverse(z, dims[di], values, m, model.adjacency, model.flow_params,
                                  flow_x(model, x));
          } else {
            for (double v : values) {
              std::vector<double> zt = z;
              zt[dims[di]] = v;
              zts.push_back(std::move(zt));
            }
          }
        } else {
          for (double v : values) {
            std::vector<flows::Intervention> ivs{{dims[di], v}};
            ivs.insert(ivs.end(), extra.begin(), extra.end());
            zts.push_back(model_do(model, z, ivs, x));
          }
        }
        for (std::size_t vi = 0; vi < values.size(); ++vi) {
          GridRow& row = rows[k * per_input + di * values.size() + vi];
          row.input_id = input_ids[k];
          row.dim = dims[di];
          row.value = values[vi];
          row.z_tilde = zts[vi];
          row.x_hat = model.decode(row.z_tilde);
          row.factor_estimates = model.representation(row.x_hat);
          row.factor_estimates.resize(m);
        }
      }
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

void write_grid(const std::vector<GridRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "input_id,dim,value";
  if (!rows.empty()) {
    for (std::size_t i = 0; i < rows[0].z_tilde.size(); ++i) out << ",ztilde_" << i;
    for (std::size_t i = 0; i < rows[0].x_hat.size(); ++i) out << ",xhat_" << i;
    for (std::size_t i = 0; i < rows[0].factor_estimates.size(); ++i) out << ",factor_est_" << i;
  }
  out << '\n';
  for (const auto& r : rows) {
    out << r.input_id << ',' << r.dim + 1 << ',' << format_double(r.value);
    for (double v : r.z_tilde) out << ',' << format_double(v);
    for (double v : r.x_hat) out << ',' << format_double(v);
    for (double v : r.factor_estimates) out << ',' << format_double(v);
    out << '\n';
  }
}

Matrix intervention_effects(const model::DcvaeModel& model, const datagen::DatasetSplit& inputs,
                            std::span<const std::size_t> input_ids,
                            const std::vector<std::vector<double>>& sweeps) {
  const std::size_t m = model.config().m;
  if (sweeps.size() != m) throw ContractViolation("intervention_effects: one sweep per dim");
  if (input_ids.empty()) throw ContractViolation("intervention_effects: no inputs");
  std::vector<Matrix> per_input(input_ids.size());
  const auto n = static_cast<std::int64_t>(input_ids.size());
  std::vector<std::exception_ptr> errors(input_ids.size());
#pragma omp parallel for num_threads(thread_budget()) schedule(static)
  for (std::int64_t ii = 0; ii < n; ++ii) {
    const auto k = static_cast<std::size_t>(ii);
    try {
      const auto& x = inputs.records.at(input_ids[k]).x;
      const auto z = model.encode(x).mean;
      const auto ref = factor_estimates(model, model.flow(z, x).z_tilde);
      Matrix& acc = per_input[k];
      acc.rows = acc.cols = m;
      acc.data.assign(m * m, 0.0);
      for (std::size_t dim = 0; dim < m; ++dim) {
        for (double v : sweeps[dim]) {
          const flows::Intervention iv{dim, v};
          const auto est = factor_estimates(model, model_do(model, z, {&iv, 1}, x));
          for (std::size_t j = 0; j < m; ++j) {
            acc.data[dim * m + j] += std::abs(est[j] - ref[j]) / static_cast<double>(sweeps[dim].size());
          }
        }
      }
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  Matrix out;
  out.rows = out.cols = m;
  out.data.assign(m * m, 0.0);
  for (const auto& acc : per_input) {
    for (std::size_t i = 0; i < m * m; ++i) out.data[i] += acc.data[i];
  }
  for (double& v : out.data) v /= static_cast<double>(input_ids.size());
  return out;
}

// ---------------------------------------------------------------------------
// Suite

namespace {

std::vector<int> task_labels(const datagen::DatasetSplit& split) {
  std::vector<int> out;
  out.reserve(split.records.size());
  for (const auto& r : split.records) out.push_back(r.task_label);
  return out;
}

std::vector<double> factor_column(const datagen::DatasetSplit& split, std::size_t f) {
  std::vector<double> out;
  out.reserve(split.records.size());
  for (const auto& r : split.records) out.push_back(r.xi[f]);
  return out;
}

}  // namespace

SuiteResult run_suite(const model::DcvaeModel& model, const datagen::DatasetSplit& train,
                      const datagen::DatasetSplit& test, const SuiteOptions& options) {
  if (train.records.size() < options.n_small) {
    throw PreconditionError("training split has fewer than " + std::to_string(options.n_small) +
                            " records");
  }
  SuiteResult res;
  const Matrix tr = representations(model, train);
  const Matrix te = representations(model, test);
  const auto ytr = task_labels(train);
  const auto yte = task_labels(test);

  const DownstreamClassifier all = fit_downstream(tr, ytr, options.probe);
  Matrix small;
  small.rows = options.n_small;
  small.cols = tr.cols;
  small.data.assign(tr.data.begin(), tr.data.begin() + static_cast<std::ptrdiff_t>(small.rows * small.cols));
  const DownstreamClassifier few =
      fit_downstream(small, std::span<const int>(ytr).first(options.n_small), options.probe);
  res.acc_all = all.accuracy(te, yte);
  res.acc_small = few.accuracy(te, yte);
  res.efficiency = sample_efficiency(res.acc_small, res.acc_all);

  const bool has_spurious =
      !test.records.empty() && std::all_of(test.records.begin(), test.records.end(),
                                           [](const auto& r) { return r.spurious.has_value(); });
  if (has_spurious) res.robustness = robustness_eval(all, te, test);

  res.edges = prune_adjacency(model.adjacency, options.tau);
  const auto truth = model::pendulum_true_edges();
  res.diff = structural_diff(res.edges, truth);

  res.mi.rows = train.records.size() >= 1000 ? tr.cols : 0;
  res.mi.cols = datagen::kFactorCount;
  res.mi.data.assign(res.mi.rows * res.mi.cols, 0.0);
  for (std::size_t f = 0; f < datagen::kFactorCount && res.mi.rows > 0; ++f) {
    const auto xi = factor_column(train, f);
    for (std::size_t k = 0; k < tr.cols; ++k) {
      res.mi.data[k * res.mi.cols + f] = mi_binned(tr.column(k), xi, options.mi_bins);
    }
  }
  const std::size_t m = std::min<std::size_t>(model.config().m, datagen::kFactorCount);
  for (std::size_t i = 0; i < m; ++i) {
    res.spearman.push_back(std::abs(spearman(te.column(i), factor_column(test, i))));
  }
  return res;
}

std::string format_edges(std::span<const model::Edge> edges) {
  std::string out;
  for (const auto& e : edges) {
    if (!out.empty()) out += ';';
    out += std::to_string(e.parent + 1) + "->" + std::to_string(e.child + 1);
  }
  return out;
}

Report suite_report(const SuiteResult& r) {
  Report rep;
  rep.emplace_back("acc_100", format_double(r.acc_small));
  rep.emplace_back("acc_all", format_double(r.acc_all));
  rep.emplace_back("sample_efficiency", format_double(r.efficiency));
  if (r.robustness) {
    rep.emplace_back("test_avg", format_double(r.robustness->test_avg));
    rep.emplace_back("test_worst", format_double(r.robustness->test_worst));
    for (const auto& g : r.robustness->groups) {
      const std::string key =
          "group_task" + std::to_string(g.task_label) + "_spurious" + std::to_string(g.spurious);
      rep.emplace_back(key, g.present ? format_double(g.accuracy) : "absent");
    }
    rep.emplace_back("robustness_missing_group", r.robustness->missing_group ? "1" : "0");
  } else {
    rep.emplace_back("test_avg", "n/a");
    rep.emplace_back("test_worst", "n/a");
  }
  rep.emplace_back("tau_edges", format_edges(r.edges));
  rep.emplace_back("missing_edges", format_edges(r.diff.missing));
  rep.emplace_back("extra_edges", format_edges(r.diff.extra));
  rep.emplace_back("hamming", std::to_string(r.diff.hamming));
  if (r.mi.rows == 0) rep.emplace_back("mi", "n/a");
  for (std::size_t k = 0; k < r.mi.rows; ++k) {
    for (std::size_t f = 0; f < r.mi.cols; ++f) {
      rep.emplace_back("mi_dim" + std::to_string(k + 1) + "_factor" + std::to_string(f + 1),
                       format_double(r.mi.data[k * r.mi.cols + f]));
    }
  }
  for (std::size_t i = 0; i < r.spearman.size(); ++i) {
    rep.emplace_back("spearman_dim" + std::to_string(i + 1), format_double(r.spearman[i]));
  }
  return rep;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void write_report(const Report& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [k, v] : report) out << k << '=' << v << '\n';
}

}  // namespace dcvae::eval
