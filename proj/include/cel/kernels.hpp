#pragma once

// Dense double-precision kernels used by every numeric inner loop in the
// library. Each primitive has a scalar reference implementation and, on
// x86-64 with AVX2, a vectorized variant. The active variant is picked at
// runtime; CEL_SERIAL=1 in the environment pins the scalar reference path,
// which is the bit-deterministic mode the reproducibility contract is
// stated against.
//
// Elementwise kernels (axpy, scal) produce identical bits in both modes.
// Reductions (dot, sum) may differ in the last bits between modes because
// the accumulation order differs; within one mode they are deterministic.

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace cel::kernels {

enum class Mode { scalar, avx2 };

bool avx2_available();

// Selects the kernel table. Requesting avx2 on a machine without it falls
// back to scalar.
void set_mode(Mode m);
Mode active_mode();

// CEL_SERIAL=1 -> scalar; otherwise the widest available variant.
void init_from_env();

// y[i] += a * x[i]
void axpy(double a, const double* x, double* y, std::size_t n);
// x[i] *= a
void scal(double a, double* x, std::size_t n);
// sum_i a[i] * b[i]
double dot(const double* a, const double* b, std::size_t n);
// sum_i a[i]
double sum(const double* a, std::size_t n);
// max_i a[i]; n must be >= 1, entries must be ordered (no NaN)
double max(const double* a, std::size_t n);

inline double nrm2(const double* a, std::size_t n) { return std::sqrt(dot(a, a, n)); }

// In-place softmax with max-shift. exp() is applied elementwise; the
// normalizing sum goes through the dispatched sum kernel.
void softmax_inplace(double* a, std::size_t n);

}  // namespace cel::kernels
