#pragma once

// Data-parallel inner loops shared by the dense network and the interval
// bound propagation. Every kernel has a scalar reference implementation; an
// AVX2/FMA variant is compiled separately and chosen at runtime when the CPU
// supports it. SAFEADAPT_KERNELS=scalar|avx2 in the environment overrides the
// choice (unknown or unsupported values fall back to scalar).

#include <cstddef>
#include <string_view>

namespace safeadapt::kernels {

struct KernelTable {
  std::string_view name;

  /// sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);

  /// y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  /// One output row of a parameter-interval affine map for nonnegative
  /// inputs (0 <= xl <= xu). Weights live in [wc - wr, wc + wr].
  /// Writes the row sums of the per-term lower and upper products.
  void (*interval_row_nonneg)(const double* wc, const double* wr, const double* xl,
                              const double* xu, std::size_t n, double* lo, double* hi);

  /// Reverse pass of interval_row_nonneg. Given d/dlo and d/dhi of the row,
  /// accumulates d/dwr into g_wr and d/dxl, d/dxu into g_xl, g_xu.
  void (*interval_row_nonneg_backward)(const double* wc, const double* wr, const double* xl,
                                       const double* xu, std::size_t n, double g_lo,
                                       double g_hi, double* g_wr, double* g_xl,
                                       double* g_xu);
};

const KernelTable& scalar_kernels() noexcept;

/// nullptr when the AVX2 variant was not compiled in or the CPU lacks
/// AVX2/FMA.
const KernelTable* avx2_kernels() noexcept;

/// The table used by the library; resolved once on first call.
const KernelTable& active() noexcept;

}  // namespace safeadapt::kernels
