#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "alq/kernels.hpp"
#include "alq/rng.hpp"
#include "oracles.hpp"

using namespace alq;
using kernels::KernelTable;

namespace {

constexpr double kEps = 1e-12;

std::vector<float> random_probs(std::size_t n, uint64_t seed, bool include_edges = true) {
  Rng rng(seed);
  std::vector<float> p(n);
  for (auto& v : p) v = float(rng.uniform());
  if (include_edges && n >= 8) {
    p[0] = 0.0f;
    p[1] = 1.0f;
    p[2] = 0.5f;
    p[3] = 1e-12f;
    p[4] = 1.0f - 1e-7f;
    p[5] = 1e-7f;
  }
  return p;
}

}  // namespace

TEST_CASE("bernoulli entropy matches frozen scalar evaluations") {
  // H(0.5) = ln 2; H(0.9) and H(0.6) evaluated independently at high precision
  CHECK(kernels::bernoulli_entropy(0.5, kEps) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-12));
  CHECK(kernels::bernoulli_entropy(0.9, kEps) ==
        doctest::Approx(0.32508297339144824).epsilon(1e-12));
  CHECK(kernels::bernoulli_entropy(0.6, kEps) ==
        doctest::Approx(0.6730116670092564).epsilon(1e-12));
  // degenerate certainty collapses to ~0 via the clamp
  CHECK(kernels::bernoulli_entropy(0.0, kEps) < 1e-5);
  CHECK(kernels::bernoulli_entropy(1.0, kEps) < 1e-5);
  CHECK(kernels::bernoulli_entropy(0.0, kEps) == doctest::Approx(2.863102111592805e-11));
}

TEST_CASE("entropy is symmetric in p vs 1-p") {
  Rng rng(99);
  const auto& k = kernels::scalar_table();
  for (int i = 0; i < 1000; ++i) {
    const double p = rng.uniform();
    double a = 0, b = 0;
    const double q = 1.0 - p;
    k.entropy_map_f64(&p, 1, kEps, &a);
    k.entropy_map_f64(&q, 1, kEps, &b);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a >= 0.0);
    CHECK(a <= 0.6931471805599453 + 1e-12);
  }
}

TEST_CASE("scalar kernels match the long-double oracle") {
  const auto& k = kernels::scalar_table();
  const auto p = random_probs(257, 7);
  std::vector<double> h(p.size());
  k.entropy_map_f32(p.data(), p.size(), kEps, h.data());
  for (std::size_t i = 0; i < p.size(); ++i)
    CHECK(std::abs(h[i] - double(oracle::entropy((long double)p[i]))) < 1e-12);

  std::vector<double> g(p.size());
  k.grad_map_f32(p.data(), p.size(), g.data());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(std::abs(g[i] - double(oracle::grad_magnitude((long double)p[i]))) < 1e-15);
    CHECK(g[i] >= 0.0);
    CHECK(g[i] <= 0.5);
  }
  // grad = 0 exactly iff p in {0, 1}
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.5);
}

TEST_CASE("grad examples: confident, undecided, leaning") {
  const auto& k = kernels::scalar_table();
  const float p[3] = {1.0f, 0.5f, 0.8f};
  double g[3];
  k.grad_map_f32(p, 3, g);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.5);  // the tie at 0.5 hallucinates label 1
  CHECK(g[2] == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("mean map averages members") {
  const auto& k = kernels::scalar_table();
  const std::size_t n = 5;
  std::vector<float> probs = {0.2f, 0.2f, 0.2f, 0.2f, 0.2f, 0.8f, 0.8f, 0.8f, 0.8f, 0.8f};
  std::vector<double> mean(n);
  k.mean_map(probs.data(), n, 2, n, mean.data());
  for (const auto v : mean) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));

  // E=1 is the identity
  k.mean_map(probs.data(), n, 1, n, mean.data());
  for (std::size_t i = 0; i < n; ++i) CHECK(mean[i] == doctest::Approx(0.2).epsilon(1e-7));

  // random 6-member stacks against an elementwise recomputation
  const auto p = random_probs(6 * 64, 11, false);
  std::vector<double> out(64);
  k.mean_map(p.data(), 64, 6, 64, out.data());
  for (std::size_t i = 0; i < 64; ++i) {
    long double acc = 0;
    for (int e = 0; e < 6; ++e) acc += (long double)p[e * 64 + i];
    CHECK(std::abs(out[i] - double(acc / 6)) < 1e-7);
  }
}

TEST_CASE("mutual information: frozen example and properties") {
  const auto& k = kernels::scalar_table();
  // E=2 with p = 0.3 and 0.7: H(0.5) - (H(0.3)+H(0.7))/2
  const float probs[2] = {0.3f, 0.7f};
  double mi = 0;
  std::vector<double> scratch(2);
  k.mi_map(probs, 1, 2, 1, kEps, &mi, scratch.data());
  CHECK(mi == doctest::Approx(0.08228287850505185).epsilon(1e-6));

  // identical members: exactly zero disagreement
  const auto p = random_probs(6 * 32, 13, false);
  std::vector<float> identical(6 * 32);
  for (int e = 0; e < 6; ++e)
    for (int i = 0; i < 32; ++i) identical[e * 32 + i] = p[i];
  std::vector<double> out(32), scratch2(64);
  k.mi_map(identical.data(), 32, 6, 32, kEps, out.data(), scratch2.data());
  for (const auto v : out) CHECK(std::abs(v) < 1e-9);

  // maximal disagreement approaches ln 2
  const float extremes[2] = {1e-12f, 1.0f - 1e-7f};
  k.mi_map(extremes, 1, 2, 1, kEps, &mi, scratch.data());
  CHECK(mi > 0.69);
}

TEST_CASE("mi stays within [0, H(mean)] on random stacks") {
  const auto& k = kernels::scalar_table();
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const uint32_t members = 2 + uint32_t(rng.uniform_index(7));
    const std::size_t n = 1 + rng.uniform_index(40);
    std::vector<float> p(members * n);
    for (auto& v : p) v = float(rng.uniform());
    std::vector<double> mi(n), mean(n), h_mean(n), scratch(2 * n);
    k.mi_map(p.data(), n, members, n, kEps, mi.data(), scratch.data());
    k.mean_map(p.data(), n, members, n, mean.data());
    k.entropy_map_f64(mean.data(), n, kEps, h_mean.data());
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(mi[i] >= -1e-9);
      CHECK(mi[i] <= h_mean[i] + 1e-9);
    }
  }
}

TEST_CASE("grad variance: frozen example and zero cases") {
  const auto& k = kernels::scalar_table();
  // members 0.1 and 0.3 have gradients 0.1, 0.3 -> population variance 0.01
  const float two[2] = {0.1f, 0.3f};
  double var = 0;
  k.grad_variance_map(two, 1, 2, 1, &var);
  CHECK(var == doctest::Approx(0.01).epsilon(1e-6));

  const float same[3] = {0.2f, 0.2f, 0.2f};
  k.grad_variance_map(same, 1, 3, 1, &var);
  CHECK(var == doctest::Approx(0.0).epsilon(1e-15));

  // random stacks against the two-pass long-double recomputation
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const uint32_t members = 2 + uint32_t(rng.uniform_index(6));
    std::vector<float> p(members);
    std::vector<long double> pl(members);
    for (uint32_t e = 0; e < members; ++e) {
      p[e] = float(rng.uniform());
      pl[e] = (long double)p[e];
    }
    k.grad_variance_map(p.data(), 1, members, 1, &var);
    CHECK(std::abs(var - double(oracle::grad_variance(pl))) < 1e-12);
    CHECK(var >= 0.0);
  }
}

TEST_CASE("range check finds the first offender") {
  const auto& k = kernels::scalar_table();
  auto p = random_probs(100, 31);
  CHECK(k.range_check(p.data(), p.size()) == p.size());
  p[57] = 1.5f;
  CHECK(k.range_check(p.data(), p.size()) == 57);
  p[57] = -0.01f;
  CHECK(k.range_check(p.data(), p.size()) == 57);
  p[57] = std::nanf("");
  CHECK(k.range_check(p.data(), p.size()) == 57);
}

TEST_CASE("reductions and embedding math") {
  const auto& k = kernels::scalar_table();
  std::vector<double> v = {0.3, -1.0, 2.5, 0.0, 2.5};
  CHECK(k.max_reduce(v.data(), v.size()) == 2.5);
  CHECK(k.sum_reduce(v.data(), v.size()) == doctest::Approx(4.3).epsilon(1e-14));

  const float a[2] = {0.0f, 0.0f};
  const float b[2] = {3.0f, 4.0f};
  CHECK(k.sq_l2_distance(a, b, 2) == 25.0);
  CHECK(k.dot(b, b, 2) == 25.0);
}

#if defined(ALQ_HAVE_AVX2_KERNELS)

TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!__builtin_cpu_supports("avx2") || !__builtin_cpu_supports("fma")) return;
  const KernelTable& s = kernels::scalar_table();
  const KernelTable& v = kernels::avx2_table();
  Rng rng(41);

  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(300);
    const uint32_t members = 1 + uint32_t(rng.uniform_index(8));
    auto p = random_probs(members * n, 1000 + uint64_t(trial));

    std::vector<double> out_s(n), out_v(n), scratch(2 * n);

    s.entropy_map_f32(p.data(), n, kEps, out_s.data());
    v.entropy_map_f32(p.data(), n, kEps, out_v.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(out_s[i] - out_v[i]) < 1e-12);

    s.mean_map(p.data(), n, members, n, out_s.data());
    v.mean_map(p.data(), n, members, n, out_v.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(out_s[i] - out_v[i]) < 1e-12);

    s.mi_map(p.data(), n, members, n, kEps, out_s.data(), scratch.data());
    v.mi_map(p.data(), n, members, n, kEps, out_v.data(), scratch.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(out_s[i] - out_v[i]) < 1e-12);

    s.grad_map_f32(p.data(), n, out_s.data());
    v.grad_map_f32(p.data(), n, out_v.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(out_s[i] == out_v[i]);

    if (members >= 2) {
      s.grad_variance_map(p.data(), n, members, n, out_s.data());
      v.grad_variance_map(p.data(), n, members, n, out_v.data());
      for (std::size_t i = 0; i < n; ++i) CHECK(out_s[i] == out_v[i]);
    }

    std::vector<double> dp(n);
    for (std::size_t i = 0; i < n; ++i) dp[i] = double(p[i]);
    s.entropy_map_f64(dp.data(), n, kEps, out_s.data());
    v.entropy_map_f64(dp.data(), n, kEps, out_v.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(out_s[i] - out_v[i]) < 1e-12);

    s.grad_map_f64(dp.data(), n, out_s.data());
    v.grad_map_f64(dp.data(), n, out_v.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(out_s[i] == out_v[i]);

    CHECK(s.range_check(p.data(), p.size()) == v.range_check(p.data(), p.size()));
    if (n >= 9) {
      p[n - 2] = 1.0f + 1e-6f;
      CHECK(s.range_check(p.data(), n) == v.range_check(p.data(), n));
    }

    CHECK(s.max_reduce(dp.data(), n) == v.max_reduce(dp.data(), n));
    CHECK(std::abs(s.sum_reduce(dp.data(), n) - v.sum_reduce(dp.data(), n)) <
          1e-12 * (1.0 + std::abs(s.sum_reduce(dp.data(), n))));

    const std::size_t d = 1 + rng.uniform_index(64);
    std::vector<float> e1(d), e2(d);
    for (auto& x : e1) x = float(rng.gaussian());
    for (auto& x : e2) x = float(rng.gaussian());
    const double ds = s.sq_l2_distance(e1.data(), e2.data(), d);
    const double dv = v.sq_l2_distance(e1.data(), e2.data(), d);
    CHECK(std::abs(ds - dv) < 1e-12 * (1.0 + ds));
    const double dots = s.dot(e1.data(), e2.data(), d);
    const double dotv = v.dot(e1.data(), e2.data(), d);
    CHECK(std::abs(dots - dotv) < 1e-12 * (1.0 + std::abs(dots)));
  }
}

TEST_CASE("avx2 entropy meets the high-precision bound") {
  if (!__builtin_cpu_supports("avx2") || !__builtin_cpu_supports("fma")) return;
  const auto& v = kernels::avx2_table();
  const auto p = random_probs(1024, 53);
  std::vector<double> h(p.size());
  v.entropy_map_f32(p.data(), p.size(), kEps, h.data());
  for (std::size_t i = 0; i < p.size(); ++i)
    CHECK(std::abs(h[i] - double(oracle::entropy((long double)p[i]))) < 1e-12);
}

#endif  // ALQ_HAVE_AVX2_KERNELS

TEST_CASE("active table is one of the registered variants") {
  const std::string name = kernels::active_table().name;
#if defined(ALQ_HAVE_AVX2_KERNELS)
  CHECK((name == "scalar" || name == "avx2"));
#else
  CHECK(name == "scalar");
#endif
}
