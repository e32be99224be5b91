#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace slab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Error raised when a caller violates an operation's preconditions.
struct InvalidArgument : std::runtime_error {
  explicit InvalidArgument(const std::string& msg) : std::runtime_error(msg) {}
};

/// Error raised when a numerical routine leaves its valid domain
/// (non-finite states, underflowing importance weights, ...).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

#define SLAB_REQUIRE(cond, msg)                  \
  do {                                           \
    if (!(cond)) throw ::slab::InvalidArgument(msg); \
  } while (0)

/// Deterministic RNG with an explicit normal stream (Box-Muller) so that
/// simulations are a pure function of the seed regardless of libstdc++
/// internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  std::uint64_t next_u64() {
    // xorshift* keeps the stream cheap and reproducible.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  double uniform() {  // in (0,1)
    return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Mat normal_mat(int rows, int cols) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  int categorical(const Vec& probs) {
    double u = uniform();
    double acc = 0.0;
    for (int k = 0; k < probs.size(); ++k) {
      acc += probs[k];
      if (u <= acc) return k;
    }
    return static_cast<int>(probs.size()) - 1;
  }

  /// Independent child stream; `salt` decorrelates streams drawn from the
  /// same parent seed.
  Rng fork(std::uint64_t salt) {
    return Rng(next_u64() ^ (salt * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL));
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace slab
