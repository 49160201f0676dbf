// Scalar/AVX2 kernel equivalence and reference-value checks. Elementwise
// kernels must match bit-for-bit across modes; reductions get a tolerance
// because the accumulation order differs.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <vector>

#include "cel/kernels.hpp"
#include "cel/rng.hpp"

using namespace cel;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -2.0,
                               double hi = 2.0) {
  rng::Engine e(seed);
  std::vector<double> v(n);
  for (double& x : v) x = e.uniform(lo, hi);
  return v;
}

struct ModeGuard {
  kernels::Mode saved;
  ModeGuard() : saved(kernels::active_mode()) {}
  ~ModeGuard() { kernels::set_mode(saved); }
};

}  // namespace

TEST_CASE("dot matches a hand-computed value") {
  const double a[] = {1.0, 2.0, 3.0};
  const double b[] = {4.0, -5.0, 6.0};
  CHECK(kernels::dot(a, b, 3) == 12.0);
}

TEST_CASE("sum of an arithmetic sequence is exact") {
  std::vector<double> v(100);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i + 1);
  CHECK(kernels::sum(v.data(), v.size()) == 5050.0);
}

TEST_CASE("axpy accumulates against a plain loop") {
  auto x = random_vec(37, 1);
  auto y = random_vec(37, 2);
  auto expect = y;
  for (std::size_t i = 0; i < x.size(); ++i) expect[i] += 1.75 * x[i];
  kernels::axpy(1.75, x.data(), y.data(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == expect[i]);
}

TEST_CASE("nrm2 of a 3-4 vector is 5") {
  const double v[] = {3.0, 4.0};
  CHECK(kernels::nrm2(v, 2) == 5.0);
}

TEST_CASE("max handles negatives and singleton input") {
  const double v[] = {-7.0, -2.5, -9.0};
  CHECK(kernels::max(v, 3) == -2.5);
  CHECK(kernels::max(v, 1) == -7.0);
}

TEST_CASE("softmax rows sum to one and survive large shifts") {
  for (std::size_t n : {1u, 2u, 5u, 17u}) {
    auto v = random_vec(n, 100 + n, -3.0, 3.0);
    kernels::softmax_inplace(v.data(), n);
    double s = 0;
    for (double x : v) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  double big[3] = {1000.0, 1001.0, 999.0};
  kernels::softmax_inplace(big, 3);
  CHECK(std::isfinite(big[0]));
  CHECK(big[1] > big[0]);
  CHECK(big[0] > big[2]);
}

TEST_CASE("softmax of two equal logits is exactly a half each") {
  double v[2] = {42.0, 42.0};
  kernels::softmax_inplace(v, 2);
  CHECK(v[0] == 0.5);
  CHECK(v[1] == 0.5);
}

TEST_CASE("elementwise kernels are bit-identical across modes") {
  if (!kernels::avx2_available()) return;
  ModeGuard guard;
  for (std::size_t n = 1; n <= 19; ++n) {
    auto x = random_vec(n, 10 * n + 1);
    auto y0 = random_vec(n, 10 * n + 2);
    auto y1 = y0;

    kernels::set_mode(kernels::Mode::scalar);
    kernels::axpy(0.37, x.data(), y0.data(), n);
    kernels::set_mode(kernels::Mode::avx2);
    kernels::axpy(0.37, x.data(), y1.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y0[i] == y1[i]);

    auto s0 = random_vec(n, 10 * n + 3);
    auto s1 = s0;
    kernels::set_mode(kernels::Mode::scalar);
    kernels::scal(-1.25, s0.data(), n);
    kernels::set_mode(kernels::Mode::avx2);
    kernels::scal(-1.25, s1.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(s0[i] == s1[i]);
  }
}

TEST_CASE("reductions agree across modes within tolerance") {
  if (!kernels::avx2_available()) return;
  ModeGuard guard;
  for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 64u, 129u, 1000u}) {
    auto a = random_vec(n, 55 + n);
    auto b = random_vec(n, 56 + n);

    kernels::set_mode(kernels::Mode::scalar);
    double dot_s = kernels::dot(a.data(), b.data(), n);
    double sum_s = kernels::sum(a.data(), n);
    double max_s = kernels::max(a.data(), n);
    kernels::set_mode(kernels::Mode::avx2);
    double dot_v = kernels::dot(a.data(), b.data(), n);
    double sum_v = kernels::sum(a.data(), n);
    double max_v = kernels::max(a.data(), n);

    CHECK(dot_s == doctest::Approx(dot_v).epsilon(1e-13));
    CHECK(sum_s == doctest::Approx(sum_v).epsilon(1e-13));
    CHECK(max_s == max_v);  // max is order-independent, must be exact
  }
}

TEST_CASE("within one mode repeated reductions are deterministic") {
  auto a = random_vec(257, 7);
  auto b = random_vec(257, 8);
  double d1 = kernels::dot(a.data(), b.data(), a.size());
  double d2 = kernels::dot(a.data(), b.data(), a.size());
  CHECK(d1 == d2);
}

TEST_CASE("CEL_SERIAL pins the scalar path") {
  ModeGuard guard;
  setenv("CEL_SERIAL", "1", 1);
  kernels::init_from_env();
  CHECK(kernels::active_mode() == kernels::Mode::scalar);
  unsetenv("CEL_SERIAL");
  kernels::init_from_env();
  if (kernels::avx2_available()) CHECK(kernels::active_mode() == kernels::Mode::avx2);
}

TEST_CASE("requesting avx2 without support falls back to scalar") {
  ModeGuard guard;
  kernels::set_mode(kernels::Mode::avx2);
  if (!kernels::avx2_available()) CHECK(kernels::active_mode() == kernels::Mode::scalar);
  else CHECK(kernels::active_mode() == kernels::Mode::avx2);
}
