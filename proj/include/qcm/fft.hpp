#pragma once

#include <fftw3.h>

#include <Eigen/Core>
#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <stdexcept>

namespace qcm {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Thin FFTW wrapper for power-of-two complex transforms on Eigen arrays.
// Plans (FFTW_ESTIMATE, deterministic) are cached per instance and created
// under a global lock -- FFTW's planner is not thread-safe, execution is.
// Transforms run on an internal aligned buffer so callers need no fftw_malloc.
//
// Sign convention: forward() computes X_k = sum_n x_n e^{-j 2 pi k n / N};
// inverse() is the exact inverse (backward transform scaled by 1/N).
class Fft {
public:
  Fft() = default;
  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;

  ~Fft() {
    for (auto& [n, p] : cache_) {
      fftw_destroy_plan(p.fwd);
      fftw_destroy_plan(p.inv);
      fftw_free(p.buf);
    }
  }

  void forward(Eigen::ArrayXcd& a) { run(a, true); }
  void inverse(Eigen::ArrayXcd& a) { run(a, false); }

private:
  struct Plans {
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;
    fftw_complex* buf = nullptr;
  };

  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  Plans& get(std::size_t n) {
    auto it = cache_.find(n);
    if (it != cache_.end()) return it->second;
    if (!is_pow2(n)) throw std::invalid_argument("Fft: length must be a power of two");
    Plans p;
    p.buf = fftw_alloc_complex(n);
    {
      std::lock_guard<std::mutex> lock(planner_mutex());
      p.fwd = fftw_plan_dft_1d(static_cast<int>(n), p.buf, p.buf, FFTW_FORWARD, FFTW_ESTIMATE);
      p.inv = fftw_plan_dft_1d(static_cast<int>(n), p.buf, p.buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    return cache_.emplace(n, p).first->second;
  }

  void run(Eigen::ArrayXcd& a, bool fwd) {
    const std::size_t n = static_cast<std::size_t>(a.size());
    Plans& p = get(n);
    auto* buf = reinterpret_cast<std::complex<double>*>(p.buf);
    Eigen::Map<Eigen::ArrayXcd>(buf, a.size()) = a;
    fftw_execute(fwd ? p.fwd : p.inv);
    a = Eigen::Map<Eigen::ArrayXcd>(buf, a.size());
    if (!fwd) a /= static_cast<double>(n);
  }

  std::map<std::size_t, Plans> cache_;
};

// FFT bin frequencies for an n-point grid at sample rate fs:
// bin k holds frequency k*fs/n for k < n/2, (k-n)*fs/n otherwise.
inline Eigen::ArrayXd fft_freq(std::size_t n, double fs) {
  Eigen::ArrayXd f(n);
  const double df = fs / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto ks = static_cast<std::ptrdiff_t>(k);
    const auto half = static_cast<std::ptrdiff_t>(n / 2);
    f[ks] = df * static_cast<double>(ks < half ? ks : ks - static_cast<std::ptrdiff_t>(n));
  }
  return f;
}

}  // namespace qcm
