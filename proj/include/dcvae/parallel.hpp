#pragma once

namespace dcvae {

/// Thread cap for the OpenMP kernels. Reads DCVAE_THREADS on first use
/// (default 1); set_thread_budget() overrides it for the process.
int thread_budget();
void set_thread_budget(int threads);

/// True when the library was compiled with OpenMP.
bool has_openmp() noexcept;

}  // namespace dcvae
