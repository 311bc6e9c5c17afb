#pragma once

#include <cstddef>
#include <cstdint>

namespace alq::kernels {

// Inner loops of scoring and similarity, in scalar reference form and SIMD
// variants selected at runtime. All variants compute in double precision and
// must agree with the scalar reference to ~1e-12; the equivalence suite under
// tests/ enforces this for every entry point.
//
// Probability inputs are float32 maps; map outputs are double. Map kernels
// with a `stride` walk E member maps of n cells each, `stride` floats apart.
struct KernelTable {
  const char* name;

  // Bernoulli entropy -[p ln p + (1-p) ln(1-p)], p clamped to [eps, 1-eps].
  void (*entropy_map_f32)(const float* p, std::size_t n, double eps, double* out);
  void (*entropy_map_f64)(const double* p, std::size_t n, double eps, double* out);

  // Elementwise mean over `members` maps.
  void (*mean_map)(const float* probs, std::size_t stride, uint32_t members, std::size_t n,
                   double* out);

  // H(mean map) - mean over members of H(member map).
  // `scratch` must hold 2*n doubles.
  void (*mi_map)(const float* probs, std::size_t stride, uint32_t members, std::size_t n,
                 double eps, double* out, double* scratch);

  // Hallucinated-gradient magnitude |p - yhat| with yhat = (p >= 0.5); equals min(p, 1-p).
  void (*grad_map_f32)(const float* p, std::size_t n, double* out);
  void (*grad_map_f64)(const double* p, std::size_t n, double* out);

  // Per-cell population variance of the member gradient magnitudes.
  void (*grad_variance_map)(const float* probs, std::size_t stride, uint32_t members,
                            std::size_t n, double* out);

  // Index of the first value outside [0,1] (NaN included), or n if none.
  std::size_t (*range_check)(const float* p, std::size_t n);

  double (*max_reduce)(const double* v, std::size_t n);
  double (*sum_reduce)(const double* v, std::size_t n);

  // Embedding math for the diversity samplers.
  double (*sq_l2_distance)(const float* a, const float* b, std::size_t d);
  double (*dot)(const float* a, const float* b, std::size_t d);
};

const KernelTable& scalar_table();

#if defined(ALQ_HAVE_AVX2_KERNELS)
const KernelTable& avx2_table();
#endif

// Runtime-selected table: best variant the CPU supports, overridable with
// ALQ_SIMD=scalar|avx2|auto (checked once, at first use).
const KernelTable& active_table();

// Scalar Bernoulli entropy, shared by detection scoring and reference code.
double bernoulli_entropy(double p, double eps);

}  // namespace alq::kernels
