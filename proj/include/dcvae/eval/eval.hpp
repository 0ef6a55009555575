#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcvae/datagen/pendulum.hpp"
#include "dcvae/diffnum/layers.hpp"
#include "dcvae/flows/causal_flow.hpp"
#include "dcvae/model/dcvae_model.hpp"

namespace dcvae::eval {

/// Row-major sample matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::vector<double> column(std::size_t c) const;
};

/// Noise-free representations flow(encoder mean) for every record, in
/// parallel across records.
Matrix representations(const model::DcvaeModel& model, const datagen::DatasetSplit& split);

/// Rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Downstream classification

struct DownstreamOptions {
  std::size_t hidden = 32;
  std::size_t epochs = 200;
  std::size_t batch_size = 1;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// d -> 32 -> 1 probe with a sigmoid output. Inputs are standardized with
/// statistics of the training representations.
class DownstreamClassifier {
 public:
  double probability(std::span<const double> rep) const;
  int predict(std::span<const double> rep) const { return probability(rep) >= 0.5 ? 1 : 0; }
  /// Percent correct.
  double accuracy(const Matrix& reps, std::span<const int> labels) const;

  double training_accuracy = 0.0;
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
  diffnum::Dense hidden;
  diffnum::Dense output;
};

/// Throws DegenerateDataError when all labels are equal.
DownstreamClassifier fit_downstream(const Matrix& reps, std::span<const int> labels,
                                    const DownstreamOptions& options = {});

/// 100 * acc_100 / acc_all.
double sample_efficiency(double acc_100, double acc_all);

struct GroupAccuracy {
  int task_label = 0;
  int spurious = 0;
  std::size_t count = 0;
  std::size_t correct = 0;
  bool present = false;
  double accuracy = 0.0;  // percent; 0 when absent
};

struct RobustnessReport {
  double test_avg = 0.0;
  double test_worst = 0.0;
  /// Keyed (task, spurious) in the order (0,0), (0,1), (1,0), (1,1).
  std::array<GroupAccuracy, 4> groups{};
  /// Set when a group had no records and was left out of the minimum.
  bool missing_group = false;
};

RobustnessReport robustness_from_predictions(std::span<const int> predictions,
                                             std::span<const int> task_labels,
                                             std::span<const int> spurious);

/// Throws PreconditionError when the split has no spurious bits.
RobustnessReport robustness_eval(const DownstreamClassifier& classifier, const Matrix& reps,
                                 const datagen::DatasetSplit& test);

// ---------------------------------------------------------------------------
// Structure

/// Edges j -> i with |effective A[i][j]| > tau (strict). Entries outside the
/// mask are never reported.
std::vector<model::Edge> prune_adjacency(const flows::AdjacencyMatrix& adjacency,
                                         double tau = 0.25);

struct StructuralDiff {
  std::vector<model::Edge> missing;
  std::vector<model::Edge> extra;
  std::size_t hamming = 0;
};

StructuralDiff structural_diff(std::span<const model::Edge> estimated,
                               std::span<const model::Edge> truth);

/// Plug-in mutual information in bits on an equal-width bins x bins
/// histogram, floored at 0. Needs at least 1000 paired samples.
double mi_binned(std::span<const double> a, std::span<const double> b, std::size_t bins = 16);

// ---------------------------------------------------------------------------
// Traversal / intervention

/// First m coordinates of representation(decode(z_tilde)).
std::vector<double> factor_estimates(const model::DcvaeModel& model,
                                     std::span<const double> z_tilde);

/// 10 values spaced evenly between the 1st and 99th percentile of `column`.
std::vector<double> default_sweep(std::span<const double> column, std::size_t count = 10);

enum class GridKind { kTraverse, kIntervene };

struct GridRow {
  std::size_t input_id = 0;
  std::size_t dim = 0;  // 0-based
  double value = 0.0;
  std::vector<double> z_tilde;
  std::vector<double> x_hat;
  std::vector<double> factor_estimates;
};

/// traverse: one row per (input, dim, value) from flows::traverse.
/// intervene: one row per (input, dim, value) with do(z~_dim = value)
/// combined with `extra` interventions on other dimensions.
std::vector<GridRow> build_grid(GridKind kind, const model::DcvaeModel& model,
                                const datagen::DatasetSplit& inputs,
                                std::span<const std::size_t> input_ids,
                                std::span<const std::size_t> dims,
                                std::span<const double> values,
                                std::span<const flows::Intervention> extra = {});

/// CSV with 1-based dims: input_id,dim,value,ztilde_*,xhat_*,factor_est_*.
void write_grid(const std::vector<GridRow>& rows, const std::filesystem::path& path);

/// Mean |Δ factor estimate| per (intervened dim, factor) over inputs and
/// sweep values, relative to the un-intervened decode-then-re-encode.
/// Result is m x m with row = intervened dim, col = factor.
Matrix intervention_effects(const model::DcvaeModel& model, const datagen::DatasetSplit& inputs,
                            std::span<const std::size_t> input_ids,
                            const std::vector<std::vector<double>>& sweeps);

// ---------------------------------------------------------------------------
// Downstream suite

struct SuiteOptions {
  DownstreamOptions probe;
  /// Size of the small training subset for the efficiency score.
  std::size_t n_small = 100;
  double tau = 0.25;
  std::size_t mi_bins = 16;
};

struct SuiteResult {
  double acc_small = 0.0;  // percent on the full test split
  double acc_all = 0.0;
  double efficiency = 0.0;
  std::optional<RobustnessReport> robustness;  // when the test split has spurious bits
  std::vector<model::Edge> edges;
  StructuralDiff diff;  // against the pendulum graph
  Matrix mi;            // latent dim x factor, bits, on the training split; empty below 1000 records
  std::vector<double> spearman;  // |rho| of dim i vs factor i on the test split, i < m
};

/// Probes fit on the first n_small and on all training representations,
/// both scored on the whole test split.
SuiteResult run_suite(const model::DcvaeModel& model, const datagen::DatasetSplit& train,
                      const datagen::DatasetSplit& test, const SuiteOptions& options = {});

// ---------------------------------------------------------------------------
// Report

/// Ordered key=value lines.
using Report = std::vector<std::pair<std::string, std::string>>;
void write_report(const Report& report, const std::filesystem::path& path);
std::string format_double(double v);
Report suite_report(const SuiteResult& result);
std::string format_edges(std::span<const model::Edge> edges);

}  // namespace dcvae::eval
