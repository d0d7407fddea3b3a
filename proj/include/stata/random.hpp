/* Copyright 2026 The StatA Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef STATA_RANDOM_HPP_
#define STATA_RANDOM_HPP_

// Deterministic sampling built on mt19937_64 with hand-rolled distributions.
// std::*_distribution output is implementation-defined; task generation must
// reproduce byte-identically, so every draw here is pinned down exactly.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace stata {

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in (0, 1]; safe as a log() argument.
  double uniform_pos() { return 1.0 - uniform(); }

  /// Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(eng_());  // full 64-bit range
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % span);
  }

  /// Standard normal draw (Box-Muller, pair-cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// log of a Gamma(shape, 1) draw. Works in log space so that tiny shapes
  /// (e.g. Dirichlet concentration 1e-3) do not underflow.
  double log_gamma_draw(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("log_gamma_draw: shape <= 0");
    if (shape < 1.0) {
      // Gamma(a) = Gamma(a+1) * U^(1/a), applied in log space.
      const double boost = std::log(uniform_pos()) / shape;
      return log_gamma_draw(shape + 1.0) + boost;
    }
    // Marsaglia-Tsang squeeze for shape >= 1.
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
        return std::log(d * v);
      }
    }
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// `count` distinct values drawn uniformly from [0, n), in random order.
  std::vector<int64_t> sample_distinct(int64_t n, int64_t count) {
    if (count > n) throw std::invalid_argument("sample_distinct: count > n");
    std::vector<int64_t> pool(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    // Partial Fisher-Yates: the first `count` slots end up uniform.
    for (int64_t i = 0; i < count; ++i) {
      const int64_t j = uniform_int(i, n - 1);
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    pool.resize(static_cast<size_t>(count));
    return pool;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace stata

#endif  // STATA_RANDOM_HPP_
