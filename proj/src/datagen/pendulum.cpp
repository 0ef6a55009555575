#include "dcvae/datagen/pendulum.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "dcvae/errors.hpp"
#include "dcvae/parallel.hpp"

namespace dcvae::datagen {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kMixerBiasScale = 0.2;

std::seed_seq make_seed_seq(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return std::seed_seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                       static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                       static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
}

std::mt19937_64 make_stream(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto seq = make_seed_seq(a, b, c);
  return std::mt19937_64(seq);
}

Eigen::MatrixXd orthonormal_columns(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) g(r, c) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

std::vector<double> row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    }
  }
  return out;
}

}  // namespace

Shadow shadow_physics(double theta_deg, double phi_deg) {
  // The sampler stays inside [-45, 45] x [50, 130]; the geometry itself
  // holds for any hanging pendulum and any light above the horizon.
  if (!(theta_deg >= -90.0 && theta_deg <= 90.0)) {
    throw PreconditionError("pendulum angle " + std::to_string(theta_deg) +
                            " outside [-90, 90]");
  }
  if (!(phi_deg > 0.0 && phi_deg < 180.0)) {
    throw PreconditionError("light angle " + std::to_string(phi_deg) + " outside (0, 180)");
  }
  const double phi = phi_deg * kDegToRad;
  const double theta = theta_deg * kDegToRad;
  // tan(phi) changes sign at 90 degrees; project with cot = cos/sin, sin > 0 here.
  const double sin_phi = std::sin(phi);
  if (!(sin_phi > 0.0)) throw PreconditionError("light angle gives no ground projection");
  const double cot_phi = std::cos(phi) / sin_phi;

  const double ball_x = kRodLength * std::sin(theta);
  const double ball_y = kPivotHeight - kRodLength * std::cos(theta);
  const double proj_ball = ball_x + ball_y * cot_phi;
  const double proj_pivot = kPivotHeight * cot_phi;
  return {std::abs(proj_ball - proj_pivot), 0.5 * (proj_ball + proj_pivot)};
}

FactorRanges pendulum_factor_ranges() {
  // For fixed phi, length = L|cos(theta + phi)| / sin(phi) peaks at a theta
  // endpoint and position is increasing in theta, so scanning phi with
  // theta at +-45 finds both maxima and the position minimum. Length
  // reaches 0 wherever theta + phi = 90.
  FactorRanges r{};
  r[kTheta] = {kThetaMin, kThetaMax};
  r[kPhi] = {kPhiMin, kPhiMax};
  r[kLength] = {0.0, 0.0};
  r[kPosition] = {INFINITY, -INFINITY};
  constexpr int kSteps = 80000;
  for (int k = 0; k <= kSteps; ++k) {
    const double phi = kPhiMin + (kPhiMax - kPhiMin) * static_cast<double>(k) / kSteps;
    for (double theta : {kThetaMin, kThetaMax}) {
      const Shadow s = shadow_physics(theta, phi);
      r[kLength].hi = std::max(r[kLength].hi, s.length);
      r[kPosition].lo = std::min(r[kPosition].lo, s.position);
      r[kPosition].hi = std::max(r[kPosition].hi, s.position);
    }
  }
  return r;
}

FactorVector normalize_factors(const FactorVector& raw, const FactorRanges& ranges) {
  static constexpr const char* kNames[] = {"theta", "phi", "length", "position"};
  FactorVector out{};
  for (std::size_t i = 0; i < kFactorCount; ++i) {
    const auto [lo, hi] = ranges[i];
    if (!(hi > lo)) throw ContractViolation(std::string("empty range for ") + kNames[i]);
    if (!(raw[i] >= lo && raw[i] <= hi)) {
      throw RangeError(std::string(kNames[i]) + " = " + std::to_string(raw[i]) +
                       " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    out[i] = 2.0 * (raw[i] - lo) / (hi - lo) - 1.0;
  }
  return out;
}

Mixer::Mixer(std::uint64_t seed) : seed_(seed) {
  std::mt19937_64 rng = make_stream(seed, 0x6d69786572ULL, 0);
  const Eigen::MatrixXd q1 = orthonormal_columns(rng, kBaseObsDim, kFactorCount);
  const Eigen::MatrixXd q2 = orthonormal_columns(rng, kBaseObsDim, kBaseObsDim);
  w1_ = row_major(q1);
  w2_ = row_major(q2);
  std::normal_distribution<double> normal(0.0, kMixerBiasScale);
  b1_.resize(kBaseObsDim);
  b2_.resize(kBaseObsDim);
  for (double& b : b1_) b = normal(rng);
  for (double& b : b2_) b = normal(rng);
}

std::vector<double> Mixer::apply(std::span<const double> xi_norm) const {
  if (xi_norm.size() != kFactorCount) {
    throw ContractViolation("mixer expects " + std::to_string(kFactorCount) + " factors, got " +
                            std::to_string(xi_norm.size()));
  }
  std::array<double, kBaseObsDim> hidden{};
  for (std::size_t r = 0; r < kBaseObsDim; ++r) {
    double acc = b1_[r];
    for (std::size_t c = 0; c < kFactorCount; ++c) acc += w1_[r * kFactorCount + c] * xi_norm[c];
    hidden[r] = std::tanh(acc);
  }
  std::vector<double> x(kBaseObsDim);
  for (std::size_t r = 0; r < kBaseObsDim; ++r) {
    double acc = b2_[r];
    for (std::size_t c = 0; c < kBaseObsDim; ++c) acc += w2_[r * kBaseObsDim + c] * hidden[c];
    x[r] = std::tanh(acc);
  }
  return x;
}

std::vector<double> mix_observation(std::span<const double> xi_norm, std::uint64_t mixer_seed) {
  return Mixer(mixer_seed).apply(xi_norm);
}

int make_task_label(std::span<const double> xi_norm) {
  if (xi_norm.size() < 2) throw ContractViolation("task label needs theta and phi");
  return (xi_norm[kTheta] > 0.0 && xi_norm[kPhi] > 0.0) ? 1 : 0;
}

const char* role_name(SplitRole role) noexcept {
  return role == SplitRole::kTrain ? "train" : "test";
}

DatasetSplit generate_split(std::size_t count, SplitRole role, std::uint64_t seed,
                            const Mixer& mixer, const DatasetHeader& header) {
  DatasetSplit split;
  split.role = role;
  split.header = header;
  split.header.n_obs = kBaseObsDim;
  split.records.resize(count);
  const std::uint64_t role_tag = role == SplitRole::kTrain ? 1 : 2;
  const auto n = static_cast<std::int64_t>(count);

#pragma omp parallel for num_threads(thread_budget()) schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    std::mt19937_64 rng = make_stream(seed, role_tag, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> theta_dist(kThetaMin, kThetaMax);
    std::uniform_real_distribution<double> phi_dist(kPhiMin, kPhiMax);
    FactorRecord& rec = split.records[static_cast<std::size_t>(i)];
    rec.xi[kTheta] = theta_dist(rng);
    rec.xi[kPhi] = phi_dist(rng);
    const Shadow s = shadow_physics(rec.xi[kTheta], rec.xi[kPhi]);
    rec.xi[kLength] = s.length;
    rec.xi[kPosition] = s.position;
    rec.xi_norm = normalize_factors(rec.xi, header.factor_ranges);
    rec.task_label = make_task_label(rec.xi_norm);
    rec.x = mixer.apply(rec.xi_norm);
  }
  return split;
}

PendulumDataset generate_pendulum(const GenerateOptions& options) {
  DatasetHeader header;
  header.factor_ranges = pendulum_factor_ranges();
  header.mixer_seed = options.mixer_seed.value_or(options.seed ^ 0x9e3779b97f4a7c15ULL);
  header.n_obs = kBaseObsDim;
  const Mixer mixer(header.mixer_seed);
  return {generate_split(options.n_train, SplitRole::kTrain, options.seed, mixer, header),
          generate_split(options.n_test, SplitRole::kTest, options.seed, mixer, header)};
}

void inject_spurious(DatasetSplit& split, double align_ratio, std::uint64_t seed) {
  if (!(align_ratio > 0.0 && align_ratio <= 1.0)) {
    throw ContractViolation("align_ratio must lie in (0, 1]");
  }
  if (split.header.n_obs != kBaseObsDim) {
    throw ContractViolation("split already carries spurious coordinates");
  }
  std::mt19937_64 rng = make_stream(seed, split.role == SplitRole::kTrain ? 3 : 4, 0);
  std::bernoulli_distribution agree(align_ratio);
  std::bernoulli_distribution coin(0.5);
  for (FactorRecord& rec : split.records) {
    int bit = 0;
    if (split.role == SplitRole::kTrain) {
      const int sign = 2 * rec.task_label - 1;
      bit = agree(rng) ? sign : -sign;
    } else {
      bit = coin(rng) ? 1 : -1;
    }
    rec.spurious = bit;
    for (std::size_t k = 0; k < kSpuriousCopies; ++k) rec.x.push_back(static_cast<double>(bit));
  }
  split.header.n_obs = kBaseObsDim + kSpuriousCopies;
}

}  // namespace dcvae::datagen
