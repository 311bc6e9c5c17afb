#include "alq/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace alq::kernels {

double bernoulli_entropy(double p, double eps) {
  const double q = std::clamp(p, eps, 1.0 - eps);
  return -(q * std::log(q) + (1.0 - q) * std::log(1.0 - q));
}

namespace {

void entropy_map_f32(const float* p, std::size_t n, double eps, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = bernoulli_entropy(double(p[i]), eps);
}

void entropy_map_f64(const double* p, std::size_t n, double eps, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = bernoulli_entropy(p[i], eps);
}

void mean_map(const float* probs, std::size_t stride, uint32_t members, std::size_t n,
              double* out) {
  const double inv = 1.0 / members;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0;
    for (uint32_t e = 0; e < members; ++e) acc += double(probs[e * stride + i]);
    out[i] = acc * inv;
  }
}

void mi_map(const float* probs, std::size_t stride, uint32_t members, std::size_t n, double eps,
            double* out, double* scratch) {
  double* sum_p = scratch;
  double* sum_h = scratch + n;
  std::fill(sum_p, sum_p + 2 * n, 0.0);
  for (uint32_t e = 0; e < members; ++e) {
    const float* m = probs + e * stride;
    for (std::size_t i = 0; i < n; ++i) {
      sum_p[i] += double(m[i]);
      sum_h[i] += bernoulli_entropy(double(m[i]), eps);
    }
  }
  const double inv = 1.0 / members;
  for (std::size_t i = 0; i < n; ++i)
    out[i] = bernoulli_entropy(sum_p[i] * inv, eps) - sum_h[i] * inv;
}

// min(p, 1-p): |p - yhat| with the yhat = 1 tie-break at exactly 0.5.
void grad_map_f32(const float* p, std::size_t n, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = double(p[i]);
    out[i] = std::min(v, 1.0 - v);
  }
}

void grad_map_f64(const double* p, std::size_t n, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::min(p[i], 1.0 - p[i]);
}

void grad_variance_map(const float* probs, std::size_t stride, uint32_t members, std::size_t n,
                       double* out) {
  const double inv = 1.0 / members;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0, s2 = 0;
    for (uint32_t e = 0; e < members; ++e) {
      const double v = double(probs[e * stride + i]);
      const double g = std::min(v, 1.0 - v);
      s += g;
      s2 += g * g;
    }
    const double mean = s * inv;
    out[i] = std::max(0.0, s2 * inv - mean * mean);
  }
}

std::size_t range_check(const float* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p[i] >= 0.0f && p[i] <= 1.0f)) return i;
  }
  return n;
}

double max_reduce(const double* v, std::size_t n) {
  double m = v[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, v[i]);
  return m;
}

double sum_reduce(const double* v, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += v[i];
  return s;
}

double sq_l2_distance(const float* a, const float* b, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = double(a[i]) - double(b[i]);
    s += diff * diff;
  }
  return s;
}

double dot(const float* a, const float* b, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) s += double(a[i]) * double(b[i]);
  return s;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table = {
      "scalar",       entropy_map_f32, entropy_map_f64, mean_map,   mi_map,
      grad_map_f32,   grad_map_f64,    grad_variance_map, range_check, max_reduce,
      sum_reduce,     sq_l2_distance,  dot,
  };
  return table;
}

}  // namespace alq::kernels
