#include "safeadapt/kernels.hpp"

namespace safeadapt::kernels {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// For x >= 0 the extreme products of [wl, wu] x [xl, xu] sit at
//   lo = wl * (wl > 0 ? xl : xu),   hi = wu * (wu >= 0 ? xu : xl).
// This equals the min/max over the four corner products; the sign tests pick
// the corner whose slope in the widening direction is extremal when products
// tie (degenerate intervals), which the subgradient relies on.
void interval_row_nonneg(const double* wc, const double* wr, const double* xl, const double* xu,
                         std::size_t n, double* lo, double* hi) {
  double lo_sum = 0.0;
  double hi_sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double wl = wc[j] - wr[j];
    const double wu = wc[j] + wr[j];
    lo_sum += wl * (wl > 0.0 ? xl[j] : xu[j]);
    hi_sum += wu * (wu >= 0.0 ? xu[j] : xl[j]);
  }
  *lo = lo_sum;
  *hi = hi_sum;
}

void interval_row_nonneg_backward(const double* wc, const double* wr, const double* xl,
                                  const double* xu, std::size_t n, double g_lo, double g_hi,
                                  double* g_wr, double* g_xl, double* g_xu) {
  for (std::size_t j = 0; j < n; ++j) {
    const double wl = wc[j] - wr[j];
    const double wu = wc[j] + wr[j];
    const bool lo_upper = !(wl > 0.0);
    const bool hi_upper = wu >= 0.0;
    const double x_lo = lo_upper ? xu[j] : xl[j];
    const double x_hi = hi_upper ? xu[j] : xl[j];
    g_wr[j] += g_hi * x_hi - g_lo * x_lo;
    if (g_xl == nullptr) continue;
    const double dl = g_lo * wl;
    const double dh = g_hi * wu;
    (lo_upper ? g_xu[j] : g_xl[j]) += dl;
    (hi_upper ? g_xu[j] : g_xl[j]) += dh;
  }
}

}  // namespace

const KernelTable& scalar_kernels() noexcept {
  static const KernelTable table{"scalar", &dot, &axpy, &interval_row_nonneg,
                                 &interval_row_nonneg_backward};
  return table;
}

}  // namespace safeadapt::kernels
