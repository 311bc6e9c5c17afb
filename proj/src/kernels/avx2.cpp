#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "alq/kernels.hpp"

// AVX2 variants of the scoring and similarity inner loops. All math is done
// in double lanes (4-wide) so the fast path meets the same accuracy bounds as
// the scalar reference; float inputs are widened on load.

namespace alq::kernels {
namespace {

// ---------------------------------------------------------------------------
// 4-lane natural log. Reduce to x = m * 2^e with m in [sqrt(1/2), sqrt(2)),
// then log(m) = 2 atanh(t) with t = (m-1)/(m+1), |t| <= 0.1716: the odd
// series through t^21 truncates below 3e-19 on that range. Inputs must be
// positive normal doubles; the entropy clamp guarantees that here.
// ---------------------------------------------------------------------------

inline __m256d atanh2_poly(__m256d t) {
  const __m256d u = _mm256_mul_pd(t, t);
  __m256d w = _mm256_set1_pd(2.0 / 21.0);
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0 / 19.0));
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0 / 17.0));
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0 / 15.0));
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0 / 13.0));
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0 / 11.0));
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0 / 9.0));
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0 / 7.0));
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0 / 5.0));
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0 / 3.0));
  w = _mm256_fmadd_pd(w, u, _mm256_set1_pd(2.0));
  return _mm256_mul_pd(t, w);
}

inline __m256d log_pd(__m256d x) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256i bits = _mm256_castpd_si256(x);

  // exponent field -> double, e = field - 1022 (frexp convention, m in [0.5,1))
  const __m256i expf = _mm256_srli_epi64(bits, 52);
  const __m256i magic = _mm256_set1_epi64x(0x4330000000000000LL);
  __m256d e = _mm256_sub_pd(_mm256_castsi256_pd(_mm256_or_si256(expf, magic)),
                            _mm256_set1_pd(4503599627370496.0 + 1022.0));

  const __m256i mant_mask = _mm256_set1_epi64x(0x000FFFFFFFFFFFFFLL);
  const __m256i half_exp = _mm256_set1_epi64x(0x3FE0000000000000LL);
  __m256d m = _mm256_castsi256_pd(_mm256_or_si256(_mm256_and_si256(bits, mant_mask), half_exp));

  // normalize mantissa into [sqrt(1/2), sqrt(2))
  const __m256d below = _mm256_cmp_pd(m, _mm256_set1_pd(0.70710678118654752440), _CMP_LT_OQ);
  e = _mm256_sub_pd(e, _mm256_and_pd(below, one));
  m = _mm256_add_pd(m, _mm256_and_pd(below, m));

  const __m256d t =
      _mm256_div_pd(_mm256_sub_pd(m, one), _mm256_add_pd(m, one));
  // ln 2 split keeps e * ln2 exact in the high part
  __m256d r = _mm256_fmadd_pd(e, _mm256_set1_pd(-2.121944400546905827679e-4), atanh2_poly(t));
  r = _mm256_fmadd_pd(e, _mm256_set1_pd(0.693359375), r);
  return r;
}

inline __m256d entropy_pd(__m256d p, __m256d eps, __m256d one_m_eps) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d q = _mm256_min_pd(_mm256_max_pd(p, eps), one_m_eps);
  const __m256d r = _mm256_sub_pd(one, q);
  __m256d t = _mm256_mul_pd(q, log_pd(q));
  t = _mm256_fmadd_pd(r, log_pd(r), t);
  return _mm256_sub_pd(_mm256_setzero_pd(), t);
}

inline __m256d load4_pd(const float* p) { return _mm256_cvtps_pd(_mm_loadu_ps(p)); }

double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double hmax(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d m = _mm_max_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_max_sd(m, _mm_unpackhi_pd(m, m)));
}

// ---------------------------------------------------------------------------
// Kernel entry points
// ---------------------------------------------------------------------------

void entropy_map_f32(const float* p, std::size_t n, double eps, double* out) {
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vome = _mm256_set1_pd(1.0 - eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, entropy_pd(load4_pd(p + i), veps, vome));
  for (; i < n; ++i) out[i] = bernoulli_entropy(double(p[i]), eps);
}

void entropy_map_f64(const double* p, std::size_t n, double eps, double* out) {
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vome = _mm256_set1_pd(1.0 - eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, entropy_pd(_mm256_loadu_pd(p + i), veps, vome));
  for (; i < n; ++i) out[i] = bernoulli_entropy(p[i], eps);
}

void mean_map(const float* probs, std::size_t stride, uint32_t members, std::size_t n,
              double* out) {
  const __m256d inv = _mm256_set1_pd(1.0 / members);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_setzero_pd();
    for (uint32_t e = 0; e < members; ++e) acc = _mm256_add_pd(acc, load4_pd(probs + e * stride + i));
    _mm256_storeu_pd(out + i, _mm256_mul_pd(acc, inv));
  }
  const double sinv = 1.0 / members;
  for (; i < n; ++i) {
    double acc = 0;
    for (uint32_t e = 0; e < members; ++e) acc += double(probs[e * stride + i]);
    out[i] = acc * sinv;
  }
}

void mi_map(const float* probs, std::size_t stride, uint32_t members, std::size_t n, double eps,
            double* out, double* scratch) {
  double* sum_p = scratch;
  double* sum_h = scratch + n;
  std::fill(sum_p, sum_p + 2 * n, 0.0);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vome = _mm256_set1_pd(1.0 - eps);
  for (uint32_t e = 0; e < members; ++e) {
    const float* m = probs + e * stride;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      const __m256d p = load4_pd(m + i);
      _mm256_storeu_pd(sum_p + i, _mm256_add_pd(_mm256_loadu_pd(sum_p + i), p));
      _mm256_storeu_pd(sum_h + i,
                       _mm256_add_pd(_mm256_loadu_pd(sum_h + i), entropy_pd(p, veps, vome)));
    }
    for (; i < n; ++i) {
      sum_p[i] += double(m[i]);
      sum_h[i] += bernoulli_entropy(double(m[i]), eps);
    }
  }
  const __m256d inv = _mm256_set1_pd(1.0 / members);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mean = _mm256_mul_pd(_mm256_loadu_pd(sum_p + i), inv);
    const __m256d h_mean = entropy_pd(mean, veps, vome);
    _mm256_storeu_pd(out + i,
                     _mm256_fnmadd_pd(_mm256_loadu_pd(sum_h + i), inv, h_mean));
  }
  const double sinv = 1.0 / members;
  for (; i < n; ++i)
    out[i] = bernoulli_entropy(sum_p[i] * sinv, eps) - sum_h[i] * sinv;
}

void grad_map_f32(const float* p, std::size_t n, double* out) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = load4_pd(p + i);
    _mm256_storeu_pd(out + i, _mm256_min_pd(v, _mm256_sub_pd(one, v)));
  }
  for (; i < n; ++i) out[i] = std::min(double(p[i]), 1.0 - double(p[i]));
}

void grad_map_f64(const double* p, std::size_t n, double* out) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(p + i);
    _mm256_storeu_pd(out + i, _mm256_min_pd(v, _mm256_sub_pd(one, v)));
  }
  for (; i < n; ++i) out[i] = std::min(p[i], 1.0 - p[i]);
}

void grad_variance_map(const float* probs, std::size_t stride, uint32_t members, std::size_t n,
                       double* out) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d inv = _mm256_set1_pd(1.0 / members);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d s = zero, s2 = zero;
    for (uint32_t e = 0; e < members; ++e) {
      const __m256d v = load4_pd(probs + e * stride + i);
      const __m256d g = _mm256_min_pd(v, _mm256_sub_pd(one, v));
      s = _mm256_add_pd(s, g);
      s2 = _mm256_add_pd(s2, _mm256_mul_pd(g, g));
    }
    const __m256d mean = _mm256_mul_pd(s, inv);
    const __m256d var =
        _mm256_sub_pd(_mm256_mul_pd(s2, inv), _mm256_mul_pd(mean, mean));
    _mm256_storeu_pd(out + i, _mm256_max_pd(zero, var));
  }
  const double sinv = 1.0 / members;
  for (; i < n; ++i) {
    double s = 0, s2 = 0;
    for (uint32_t e = 0; e < members; ++e) {
      const double v = double(probs[e * stride + i]);
      const double g = std::min(v, 1.0 - v);
      s += g;
      s2 += g * g;
    }
    const double mean = s * sinv;
    out[i] = std::max(0.0, s2 * sinv - mean * mean);
  }
}

std::size_t range_check(const float* p, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  const __m256 one = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(p + i);
    const __m256 ok = _mm256_and_ps(_mm256_cmp_ps(v, zero, _CMP_GE_OQ),
                                    _mm256_cmp_ps(v, one, _CMP_LE_OQ));
    if (_mm256_movemask_ps(ok) != 0xFF) {
      for (std::size_t j = i; j < i + 8; ++j)
        if (!(p[j] >= 0.0f && p[j] <= 1.0f)) return j;
    }
  }
  for (; i < n; ++i)
    if (!(p[i] >= 0.0f && p[i] <= 1.0f)) return i;
  return n;
}

double max_reduce(const double* v, std::size_t n) {
  if (n < 4) {
    double m = v[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, v[i]);
    return m;
  }
  __m256d acc = _mm256_loadu_pd(v);
  std::size_t i = 4;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(v + i));
  double m = hmax(acc);
  for (; i < n; ++i) m = std::max(m, v[i]);
  return m;
}

double sum_reduce(const double* v, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(v + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += v[i];
  return s;
}

double sq_l2_distance(const float* a, const float* b, std::size_t d) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= d; i += 4) {
    const __m256d diff = _mm256_sub_pd(load4_pd(a + i), load4_pd(b + i));
    acc = _mm256_fmadd_pd(diff, diff, acc);
  }
  double s = hsum(acc);
  for (; i < d; ++i) {
    const double diff = double(a[i]) - double(b[i]);
    s += diff * diff;
  }
  return s;
}

double dot(const float* a, const float* b, std::size_t d) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= d; i += 4) acc = _mm256_fmadd_pd(load4_pd(a + i), load4_pd(b + i), acc);
  double s = hsum(acc);
  for (; i < d; ++i) s += double(a[i]) * double(b[i]);
  return s;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table = {
      "avx2",         entropy_map_f32, entropy_map_f64, mean_map,   mi_map,
      grad_map_f32,   grad_map_f64,    grad_variance_map, range_check, max_reduce,
      sum_reduce,     sq_l2_distance,  dot,
  };
  return table;
}

}  // namespace alq::kernels
