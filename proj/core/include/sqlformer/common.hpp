#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqlformer {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or arity violation in a tensor op; the message names the shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or degenerate numeric states (e.g. fully masked rows).
class NumericsError : public Error {
 public:
  using Error::Error;
};

// Misuse of the single-use gradient tape.
class TapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data and files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Training aborted because the loss went non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(int step, const std::string& what) : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Deterministic random source used everywhere randomness is needed.
///
/// The raw engine is std::mt19937_64, whose output sequence is pinned by the
/// standard. The float transforms are hand-rolled because the std
/// distributions are implementation-defined and would break seed
/// reproducibility across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  /// Normal(0, stddev) resampled until within clip_sigmas standard deviations.
  float truncated_normal(float stddev, double clip_sigmas = 2.0) {
    double z = normal();
    while (std::abs(z) > clip_sigmas) z = normal();
    return static_cast<float>(z * stddev);
  }

  /// Uniform integer in [0, n). n must be positive.
  uint64_t below(uint64_t n) { return engine_() % n; }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 engine_;
};

}  // namespace sqlformer
