#pragma once

// Randomness utilities with two flavors:
//
//  * CounterRng: a stateless counter-based stream. Every draw is a pure
//    function of (seed, domain, i, j), so consumers are order-independent
//    and trivially parallel. Candidate generation and synthetic data use
//    this flavor.
//
//  * Engine: a sequential mt19937_64 wrapper with explicit bit-to-double
//    mapping and a multiply-shift bounded integer draw, so the stream does
//    not depend on the standard library's distribution implementations.
//    Parameter init and epoch shuffles use this flavor.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

namespace cel::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline double bits_to_unit(std::uint64_t b) {
  // 53 mantissa bits -> [0, 1)
  return static_cast<double>(b >> 11) * 0x1.0p-53;
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t domain = 0)
      : key_(splitmix64(splitmix64(seed) ^ splitmix64(domain ^ 0xA5A5A5A5A5A5A5A5ULL))) {}

  std::uint64_t bits(std::uint64_t i, std::uint64_t j) const {
    std::uint64_t h = splitmix64(key_ ^ (i * 0xD6E8FEB86659FD93ULL));
    return splitmix64(h ^ (j * 0xCA5A826395121157ULL));
  }

  double uniform(std::uint64_t i, std::uint64_t j) const { return bits_to_unit(bits(i, j)); }

  // One standard normal per (i, j); consumes uniform slots (i, 2j) and
  // (i, 2j+1) internally so callers can index gaussians densely in j.
  double gaussian(std::uint64_t i, std::uint64_t j) const {
    double u1 = bits_to_unit(bits(i, 2 * j));
    double u2 = bits_to_unit(bits(i, 2 * j + 1));
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_;
};

class Engine {
 public:
  explicit Engine(std::uint64_t seed) : g_(splitmix64(seed)) {}

  std::uint64_t bits() { return g_(); }
  double uniform() { return bits_to_unit(g_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); multiply-shift keeps the draw portable.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(g_()) * n) >> 64);
  }

  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 g_;
};

// In-place Fisher-Yates driven by Engine::below.
template <class T>
void fisher_yates(std::span<T> xs, Engine& e) {
  if (xs.size() < 2) return;
  for (std::size_t i = xs.size() - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(e.below(i + 1));
    std::swap(xs[i], xs[j]);
  }
}

}  // namespace cel::rng
