#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

namespace qcm {

// Counter-based PRNG. Every draw is a stateless hash of (key, stream, counter),
// so independent streams never share state, replay is exact, and results do not
// depend on the standard library (std::normal_distribution is
// implementation-defined, which would break bit-identical reruns).
// Mixer is the splitmix64 finalizer applied to a Weyl sequence.
class CounterRng {
public:
  CounterRng(std::uint64_t key, std::uint64_t stream)
      : base_(mix64(key + kGolden) ^ mix64(stream * kGolden + 0xD1B54A32D192ED03ull)) {}

  std::uint64_t next_u64() { return mix64(base_ + ++count_ * kGolden); }

  // one bit per call, 64 bits consumed per underlying draw
  int next_bit() {
    if (bits_left_ == 0) {
      word_ = next_u64();
      bits_left_ = 64;
    }
    int b = static_cast<int>(word_ & 1u);
    word_ >>= 1;
    --bits_left_;
    return b;
  }

  // uniform on [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer on [0, n), n >= 1; rejection-free 128-bit scaling
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // standard normal via Box-Muller; second value of each pair is cached
  double gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    // u1 in (0, 1] so the log is finite
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // circular complex gaussian with E|z|^2 = var
  std::complex<double> gaussian_complex(double var) {
    double s = std::sqrt(0.5 * var);
    double re = gaussian();
    double im = gaussian();
    return {s * re, s * im};
  }

private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  static std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t base_ = 0;
  std::uint64_t count_ = 0;
  std::uint64_t word_ = 0;
  int bits_left_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace qcm
