#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dcvae::datagen {

inline constexpr std::size_t kFactorCount = 4;
inline constexpr std::size_t kBaseObsDim = 16;
inline constexpr std::size_t kSpuriousCopies = 2;

/// Factor order used everywhere: pendulum angle, light angle, shadow
/// length, shadow position.
enum Factor : std::size_t { kTheta = 0, kPhi = 1, kLength = 2, kPosition = 3 };

using FactorVector = std::array<double, kFactorCount>;

// Scene: pivot at (0, kPivotHeight), rod of length kRodLength, ground y = 0.
inline constexpr double kPivotHeight = 10.0;
inline constexpr double kRodLength = 3.5;
inline constexpr double kThetaMin = -45.0;
inline constexpr double kThetaMax = 45.0;
inline constexpr double kPhiMin = 50.0;
inline constexpr double kPhiMax = 130.0;

struct Shadow {
  double length = 0.0;
  double position = 0.0;
};

/// Shadow cast on the ground by parallel light at elevation `phi_deg` onto
/// the segment pivot-ball of a pendulum at angle `theta_deg` from vertical.
/// A point (px, py) projects to px + py / tan(phi). Accepts theta in
/// [-90, 90] and phi in (0, 180); PreconditionError otherwise.
Shadow shadow_physics(double theta_deg, double phi_deg);

struct FactorRange {
  double lo = 0.0;
  double hi = 0.0;
};
using FactorRanges = std::array<FactorRange, kFactorCount>;

/// Simulator ranges: theta and phi by construction; length and position are
/// the extrema of shadow_physics over the (theta, phi) rectangle.
FactorRanges pendulum_factor_ranges();

/// Affine map of each coordinate from [lo, hi] onto [-1, 1]. Throws
/// RangeError for a value outside its range.
FactorVector normalize_factors(const FactorVector& raw, const FactorRanges& ranges);

/// Injective nonlinear map [-1,1]^4 -> R^16 standing in for rendering:
/// x = tanh(W2 tanh(W1 xi + b1) + b2), W1 16x4 with orthonormal columns and
/// W2 16x16 orthogonal, both from QR of a Gaussian draw seeded by `seed`.
class Mixer {
 public:
  explicit Mixer(std::uint64_t seed);

  std::vector<double> apply(std::span<const double> xi_norm) const;

  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<double>& w1() const noexcept { return w1_; }  // 16x4 row-major
  const std::vector<double>& b1() const noexcept { return b1_; }
  const std::vector<double>& w2() const noexcept { return w2_; }  // 16x16 row-major
  const std::vector<double>& b2() const noexcept { return b2_; }

 private:
  std::uint64_t seed_;
  std::vector<double> w1_, b1_, w2_, b2_;
};

std::vector<double> mix_observation(std::span<const double> xi_norm, std::uint64_t mixer_seed);

/// 1 iff the normalized pendulum angle and light angle are both positive.
int make_task_label(std::span<const double> xi_norm);

struct FactorRecord {
  FactorVector xi{};
  FactorVector xi_norm{};
  int task_label = 0;
  std::optional<int> spurious;
  std::vector<double> x;

  /// Supervision labels; the normalized factors.
  std::span<const double> y() const noexcept { return xi_norm; }
  /// Auxiliary variable of the conditional prior; defaults to y.
  std::span<const double> u() const noexcept { return xi_norm; }
};

enum class SplitRole { kTrain, kTest };

const char* role_name(SplitRole role) noexcept;

struct DatasetHeader {
  FactorRanges factor_ranges{};
  std::uint64_t mixer_seed = 0;
  std::size_t n_obs = kBaseObsDim;
};

struct DatasetSplit {
  std::vector<FactorRecord> records;
  SplitRole role = SplitRole::kTrain;
  DatasetHeader header;

  std::size_t size() const noexcept { return records.size(); }
};

struct GenerateOptions {
  std::size_t n_train = 5847;
  std::size_t n_test = 1461;
  std::uint64_t seed = 0;
  /// Defaults to a value derived from `seed`.
  std::optional<std::uint64_t> mixer_seed;
};

struct PendulumDataset {
  DatasetSplit train;
  DatasetSplit test;
};

/// Records with theta, phi ~ independent uniform. Each record draws from its
/// own stream seeded by (seed, role, index), so generation is parallel and
/// its output does not depend on the thread count.
DatasetSplit generate_split(std::size_t count, SplitRole role, std::uint64_t seed,
                            const Mixer& mixer, const DatasetHeader& header);

PendulumDataset generate_pendulum(const GenerateOptions& options);

/// Appends the spurious bit twice to every observation. Train records agree
/// with the task sign with probability `align_ratio`; test records get a
/// fair coin.
void inject_spurious(DatasetSplit& split, double align_ratio, std::uint64_t seed);

}  // namespace dcvae::datagen
