#pragma once

// Minimal row-major containers shared across modules. Mat is a 2-d array,
// Ten3 a 3-d array with the innermost dimension contiguous per (i, j) row.

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace cel {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

  double* row(std::size_t i) { return v.data() + i * cols; }
  const double* row(std::size_t i) const { return v.data() + i * cols; }
  std::span<double> row_span(std::size_t i) { return {row(i), cols}; }
  std::span<const double> row_span(std::size_t i) const { return {row(i), cols}; }
  double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
  void fill(double x) { v.assign(v.size(), x); }
};

struct Ten3 {
  std::size_t n0 = 0, n1 = 0, n2 = 0;
  std::vector<double> v;

  Ten3() = default;
  Ten3(std::size_t a, std::size_t b, std::size_t c) : n0(a), n1(b), n2(c), v(a * b * c, 0.0) {}

  double* row(std::size_t i, std::size_t j) { return v.data() + (i * n1 + j) * n2; }
  const double* row(std::size_t i, std::size_t j) const { return v.data() + (i * n1 + j) * n2; }
  std::span<double> row_span(std::size_t i, std::size_t j) { return {row(i, j), n2}; }
  std::span<const double> row_span(std::size_t i, std::size_t j) const { return {row(i, j), n2}; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return v[(i * n1 + j) * n2 + k]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return v[(i * n1 + j) * n2 + k]; }
  void fill(double x) { v.assign(v.size(), x); }
};

}  // namespace cel
