#include <cstdlib>
#include <string>

#include "alq/error.hpp"
#include "alq/kernels.hpp"

namespace alq::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& pick() {
  const char* env = std::getenv("ALQ_SIMD");
  const std::string mode = env ? env : "auto";
  if (mode == "scalar") return scalar_table();
#if defined(ALQ_HAVE_AVX2_KERNELS)
  if (mode == "avx2") {
    if (!cpu_has_avx2()) raise(Errc::bad_config, "ALQ_SIMD=avx2 but CPU lacks AVX2/FMA");
    return avx2_table();
  }
  if (mode == "auto") return cpu_has_avx2() ? avx2_table() : scalar_table();
#else
  if (mode == "avx2") raise(Errc::bad_config, "ALQ_SIMD=avx2 but this build has no AVX2 kernels");
#endif
  if (mode != "auto") raise(Errc::bad_config, "ALQ_SIMD must be scalar, avx2, or auto");
  return scalar_table();
}

}  // namespace

const KernelTable& active_table() {
  static const KernelTable& table = pick();
  return table;
}

}  // namespace alq::kernels
