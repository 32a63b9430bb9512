#include <cstdlib>
#include <string_view>

#include "safeadapt/kernels.hpp"

namespace safeadapt::kernels {

#if defined(SAFEADAPT_HAVE_AVX2)
namespace avx2 {
const KernelTable& table() noexcept;
}
#endif

const KernelTable* avx2_kernels() noexcept {
#if defined(SAFEADAPT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2::table() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable& resolve() noexcept {
  const char* forced = std::getenv("SAFEADAPT_KERNELS");
  if (forced != nullptr && std::string_view(forced) == "scalar") return scalar_kernels();
  if (const KernelTable* t = avx2_kernels()) return *t;
  return scalar_kernels();
}

}  // namespace

const KernelTable& active() noexcept {
  static const KernelTable& table = resolve();
  return table;
}

}  // namespace safeadapt::kernels
