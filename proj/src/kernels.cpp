#include "cel/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace cel::kernels {

namespace detail {

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void scal_scalar(double a, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = a * x[i];
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc = acc + a[i] * b[i];
  return acc;
}

double sum_scalar(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc = acc + a[i];
  return acc;
}

double max_scalar(const double* a, std::size_t n) {
  double m = a[0];
  for (std::size_t i = 1; i < n; ++i)
    if (a[i] > m) m = a[i];
  return m;
}

#if CEL_ENABLE_AVX2
void axpy_avx2(double a, const double* x, double* y, std::size_t n);
void scal_avx2(double a, double* x, std::size_t n);
double dot_avx2(const double* a, const double* b, std::size_t n);
double sum_avx2(const double* a, std::size_t n);
double max_avx2(const double* a, std::size_t n);
#endif

struct Table {
  void (*axpy)(double, const double*, double*, std::size_t) = axpy_scalar;
  void (*scal)(double, double*, std::size_t) = scal_scalar;
  double (*dot)(const double*, const double*, std::size_t) = dot_scalar;
  double (*sum)(const double*, std::size_t) = sum_scalar;
  double (*max)(const double*, std::size_t) = max_scalar;
};

namespace {
Table g_table;
Mode g_mode = Mode::scalar;
}  // namespace

}  // namespace detail

bool avx2_available() {
#if CEL_ENABLE_AVX2
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

void set_mode(Mode m) {
  using namespace detail;
  if (m == Mode::avx2 && !avx2_available()) m = Mode::scalar;
  if (m == Mode::avx2) {
#if CEL_ENABLE_AVX2
    g_table.axpy = axpy_avx2;
    g_table.scal = scal_avx2;
    g_table.dot = dot_avx2;
    g_table.sum = sum_avx2;
    g_table.max = max_avx2;
#endif
  } else {
    g_table = Table{};
  }
  g_mode = m;
}

Mode active_mode() { return detail::g_mode; }

void init_from_env() {
  const char* serial = std::getenv("CEL_SERIAL");
  if (serial != nullptr && std::strcmp(serial, "1") == 0) {
    set_mode(Mode::scalar);
  } else {
    set_mode(avx2_available() ? Mode::avx2 : Mode::scalar);
  }
}

void axpy(double a, const double* x, double* y, std::size_t n) { detail::g_table.axpy(a, x, y, n); }
void scal(double a, double* x, std::size_t n) { detail::g_table.scal(a, x, n); }
double dot(const double* a, const double* b, std::size_t n) { return detail::g_table.dot(a, b, n); }
double sum(const double* a, std::size_t n) { return detail::g_table.sum(a, n); }
double max(const double* a, std::size_t n) { return detail::g_table.max(a, n); }

void softmax_inplace(double* a, std::size_t n) {
  if (n == 0) return;
  const double m = max(a, n);
  for (std::size_t i = 0; i < n; ++i) a[i] = std::exp(a[i] - m);
  const double z = sum(a, n);
  scal(1.0 / z, a, n);
}

}  // namespace cel::kernels
