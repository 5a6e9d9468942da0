#pragma once

#include <Eigen/Core>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <utility>

#include "qcm/fft.hpp"

namespace qcm {

// Dual-polarization complex baseband waveform on a circular (FFT) grid.
struct WaveformGrid {
  Eigen::ArrayXcd x, y;
  double fs = 0;       // sample rate [Hz]
  int os = 1;          // samples per symbol
  double f_center = 0; // offset of the grid center from the link center [Hz]

  long n() const { return x.size(); }
  double symbol_rate() const { return fs / os; }
  double mean_power() const {
    return (x.abs2().sum() + y.abs2().sum()) / static_cast<double>(n());
  }
};

// Raised-cosine magnitude response sampled on the length-n FFT grid.
// Unit height, two-sided width (1+beta)*symbol_rate; beta = 0 degenerates to
// the ideal brick wall on the half-open band [-Rs/2, Rs/2), which keeps the
// folded (symbol-rate aliased) response exactly 1 on every bin.
inline Eigen::ArrayXd raised_cosine_response(long n, double fs, double symbol_rate, double beta) {
  if (beta < 0 || beta > 1) throw std::invalid_argument("raised cosine: roll-off must be in [0,1]");
  const auto freq = fft_freq(n, fs);
  Eigen::ArrayXd h(n);
  const double f1 = (1.0 - beta) * symbol_rate / 2, f2 = (1.0 + beta) * symbol_rate / 2;
  for (long i = 0; i < n; ++i) {
    const double af = std::abs(freq[i]);
    if (af <= f1)
      h[i] = 1.0;
    else if (af < f2)
      h[i] = 0.5 * (1.0 + std::cos(M_PI / (beta * symbol_rate) * (af - f1)));
    else
      h[i] = 0.0;
  }
  if (beta == 0.0)  // brick wall, half-open band
    for (long i = 0; i < n; ++i)
      h[i] = (freq[i] >= -symbol_rate / 2 && freq[i] < symbol_rate / 2) ? 1.0 : 0.0;
  return h;
}

namespace detail {

inline Eigen::ArrayXcd filter_upsampled(const Eigen::ArrayXcd& symbols, int os,
                                        const Eigen::ArrayXd& gain, Fft& fft) {
  const long n = symbols.size() * os;
  Eigen::ArrayXcd up = Eigen::ArrayXcd::Zero(n);
  for (long k = 0; k < symbols.size(); ++k) up[k * os] = symbols[k];
  fft.forward(up);
  up *= gain;
  fft.inverse(up);
  return up;
}

}  // namespace detail

// Root-raised-cosine transmit shaping. The filter gain os*sqrt(H_rc) makes a
// unit-mean-energy symbol stream into a unit-mean-power waveform, and the
// unit-height matched filter below recovers the symbols exactly (the cascade
// is the Nyquist raised cosine).
inline WaveformGrid shape_symbols(const Eigen::ArrayXcd& sx, const Eigen::ArrayXcd& sy, int os,
                                  double beta, double symbol_rate, Fft& fft) {
  if (sx.size() != sy.size()) throw std::invalid_argument("shape_symbols: pol length mismatch");
  if (os < 1) throw std::invalid_argument("shape_symbols: os must be >= 1");
  WaveformGrid w;
  w.os = os;
  w.fs = os * symbol_rate;
  const long n = sx.size() * os;
  const Eigen::ArrayXd g = double(os) * raised_cosine_response(n, w.fs, symbol_rate, beta).sqrt();
  w.x = detail::filter_upsampled(sx, os, g, fft);
  w.y = detail::filter_upsampled(sy, os, g, fft);
  return w;
}

// Unit-height root-raised-cosine matched filter, in place.
inline void matched_filter(WaveformGrid& w, double beta, Fft& fft) {
  const Eigen::ArrayXd g = raised_cosine_response(w.n(), w.fs, w.symbol_rate(), beta).sqrt();
  fft.forward(w.x);
  w.x *= g;
  fft.inverse(w.x);
  fft.forward(w.y);
  w.y *= g;
  fft.inverse(w.y);
}

// Every os-th sample starting at `phase`.
inline std::pair<Eigen::ArrayXcd, Eigen::ArrayXcd> downsample(const WaveformGrid& w, int phase) {
  if (phase < 0 || phase >= w.os) throw std::invalid_argument("downsample: bad phase");
  const long m = w.n() / w.os;
  Eigen::ArrayXcd a(m), b(m);
  for (long k = 0; k < m; ++k) {
    a[k] = w.x[k * w.os + phase];
    b[k] = w.y[k * w.os + phase];
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Welch periodogram of a real record: Hann window, 50% overlap, two-sided
// density on the fft_freq(nseg, fs) grid. The record mean is removed first.
// ---------------------------------------------------------------------------
struct PsdEstimate {
  Eigen::ArrayXd freq;  // Hz, fft_freq layout
  Eigen::ArrayXd psd;   // [input units^2 / Hz], two-sided
  double fs = 0;
};

inline PsdEstimate welch_psd(const Eigen::ArrayXd& v, double fs, long nseg, Fft& fft) {
  if (nseg <= 0 || (nseg & (nseg - 1)) != 0)
    throw std::invalid_argument("welch_psd: segment length must be a power of two");
  if (v.size() < nseg) throw std::invalid_argument("welch_psd: record shorter than one segment");
  Eigen::ArrayXd win(nseg);
  for (long t = 0; t < nseg; ++t) win[t] = 0.5 * (1.0 - std::cos(2.0 * M_PI * t / nseg));
  const double wss = win.square().sum();
  const double mean = v.mean();

  PsdEstimate out;
  out.fs = fs;
  out.freq = fft_freq(nseg, fs);
  out.psd = Eigen::ArrayXd::Zero(nseg);
  const long hop = nseg / 2;
  long count = 0;
  Eigen::ArrayXcd seg(nseg);
  for (long start = 0; start + nseg <= v.size(); start += hop, ++count) {
    for (long t = 0; t < nseg; ++t) seg[t] = (v[start + t] - mean) * win[t];
    fft.forward(seg);
    out.psd += seg.abs2();
  }
  out.psd *= 1.0 / (double(count) * fs * wss);
  return out;
}

}  // namespace qcm
