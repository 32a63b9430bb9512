// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include "safeadapt/kernels.hpp"

namespace safeadapt::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void interval_row_nonneg(const double* wc, const double* wr, const double* xl, const double* xu,
                         std::size_t n, double* lo, double* hi) {
  const __m256d zero = _mm256_setzero_pd();
  __m256d lo_acc = zero;
  __m256d hi_acc = zero;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d c = _mm256_loadu_pd(wc + j);
    const __m256d r = _mm256_loadu_pd(wr + j);
    const __m256d vl = _mm256_loadu_pd(xl + j);
    const __m256d vu = _mm256_loadu_pd(xu + j);
    const __m256d wl = _mm256_sub_pd(c, r);
    const __m256d wu = _mm256_add_pd(c, r);
    const __m256d lo_upper = _mm256_cmp_pd(wl, zero, _CMP_NGT_UQ);
    const __m256d hi_upper = _mm256_cmp_pd(wu, zero, _CMP_GE_OQ);
    lo_acc = _mm256_fmadd_pd(wl, _mm256_blendv_pd(vl, vu, lo_upper), lo_acc);
    hi_acc = _mm256_fmadd_pd(wu, _mm256_blendv_pd(vl, vu, hi_upper), hi_acc);
  }
  double lo_sum = hsum(lo_acc);
  double hi_sum = hsum(hi_acc);
  for (; j < n; ++j) {
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
  const __m256d zero = _mm256_setzero_pd();
  const __m256d gl = _mm256_set1_pd(g_lo);
  const __m256d gh = _mm256_set1_pd(g_hi);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d c = _mm256_loadu_pd(wc + j);
    const __m256d r = _mm256_loadu_pd(wr + j);
    const __m256d vl = _mm256_loadu_pd(xl + j);
    const __m256d vu = _mm256_loadu_pd(xu + j);
    const __m256d wl = _mm256_sub_pd(c, r);
    const __m256d wu = _mm256_add_pd(c, r);
    const __m256d lo_upper = _mm256_cmp_pd(wl, zero, _CMP_NGT_UQ);
    const __m256d hi_upper = _mm256_cmp_pd(wu, zero, _CMP_GE_OQ);
    const __m256d x_lo = _mm256_blendv_pd(vl, vu, lo_upper);
    const __m256d x_hi = _mm256_blendv_pd(vl, vu, hi_upper);
    const __m256d d_wr = _mm256_fnmadd_pd(gl, x_lo, _mm256_mul_pd(gh, x_hi));
    _mm256_storeu_pd(g_wr + j, _mm256_add_pd(_mm256_loadu_pd(g_wr + j), d_wr));
    if (g_xl == nullptr) continue;
    const __m256d dl = _mm256_mul_pd(gl, wl);
    const __m256d dh = _mm256_mul_pd(gh, wu);
    const __m256d to_upper = _mm256_add_pd(_mm256_and_pd(lo_upper, dl), _mm256_and_pd(hi_upper, dh));
    const __m256d to_lower =
        _mm256_add_pd(_mm256_andnot_pd(lo_upper, dl), _mm256_andnot_pd(hi_upper, dh));
    _mm256_storeu_pd(g_xu + j, _mm256_add_pd(_mm256_loadu_pd(g_xu + j), to_upper));
    _mm256_storeu_pd(g_xl + j, _mm256_add_pd(_mm256_loadu_pd(g_xl + j), to_lower));
  }
  for (; j < n; ++j) {
    const double wl = wc[j] - wr[j];
    const double wu = wc[j] + wr[j];
    const bool lo_upper = !(wl > 0.0);
    const bool hi_upper = wu >= 0.0;
    const double x_lo = lo_upper ? xu[j] : xl[j];
    const double x_hi = hi_upper ? xu[j] : xl[j];
    g_wr[j] += g_hi * x_hi - g_lo * x_lo;
    if (g_xl == nullptr) continue;
    (lo_upper ? g_xu[j] : g_xl[j]) += g_lo * wl;
    (hi_upper ? g_xu[j] : g_xl[j]) += g_hi * wu;
  }
}

}  // namespace

const KernelTable& table() noexcept {
  static const KernelTable t{"avx2", &dot, &axpy, &interval_row_nonneg,
                             &interval_row_nonneg_backward};
  return t;
}

}  // namespace safeadapt::kernels::avx2
