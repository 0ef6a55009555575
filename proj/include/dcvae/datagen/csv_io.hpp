#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dcvae/datagen/pendulum.hpp"

namespace dcvae::datagen {

/// `<csv>.meta`, holding factor_ranges, mixer_seed, n_obs and role.
std::filesystem::path sidecar_path(const std::filesystem::path& csv);

std::vector<std::string> csv_columns(std::size_t n_obs);

/// Writes the CSV and its sidecar. Values use shortest round-trip
/// formatting, so read_csv(write_csv(s)) reproduces every double exactly.
void write_csv(const DatasetSplit& split, const std::filesystem::path& path);

/// Throws ParseError naming the offending line, LoadError for a missing
/// file or sidecar.
DatasetSplit read_csv(const std::filesystem::path& path);

}  // namespace dcvae::datagen
