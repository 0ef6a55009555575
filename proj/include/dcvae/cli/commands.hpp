#pragma once

#include <ostream>

namespace dcvae::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // numeric or training failure
inline constexpr int kExitUsage = 2;    // usage, config or input error

/// Entry point of the dcvae tool: gen-data, train, eval, intervene,
/// gradcheck. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dcvae::cli
