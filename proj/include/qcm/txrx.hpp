#pragma once

// Transmitter and receiver DSP for dual-polarization WDM frames.
//
// Transmit side: per channel, a counter-based bit source selects 4D symbols,
// which are root-raised-cosine shaped on the common sample grid and shifted
// to a bin-snapped frequency slot; the slots are summed into one composite
// waveform.  Snapping slot offsets to exact FFT bins keeps the frame circular,
// so the periodic boundary conditions of the split-step channel hold exactly.
//
// Receive side (ideal, data-aided): dispersion compensation on the composite
// grid, channel-of-interest shift to baseband, matched RRC filter, downsample,
// cyclic correlation alignment against the known transmitted sequence, and a
// single least-squares complex scalar per polarization that removes the
// average phase rotation and any residual gain.

#include <complex>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qcm/channel.hpp"
#include "qcm/constellation.hpp"
#include "qcm/fft.hpp"
#include "qcm/rng.hpp"
#include "qcm/signal.hpp"

namespace qcm {

struct ChannelPlan {
  int n_channels = 5;
  double spacing_hz = 75e9;
  double symbol_rate = 70e9;
  double rolloff = 0.05;
};

// Everything the genie receiver needs to know about what was sent.
struct TxFrame {
  ChannelPlan plan;
  Constellation4D format;
  long n_symbols = 0;
  int os = 1;
  std::uint64_t seed = 0;
  std::vector<Eigen::ArrayXcd> sym_x, sym_y;            // per channel
  std::vector<std::vector<Eigen::Index>> symbol_index;  // rows into format
  std::vector<std::vector<std::uint8_t>> bits;          // n_symbols*format.bits
};

struct DspOutput {
  Eigen::ArrayXcd tx_x, tx_y;  // transmitted symbols of the channel of interest
  Eigen::ArrayXcd rx_x, rx_y;  // received symbols, aligned 1:1 with tx
  std::vector<Eigen::Index> tx_index;  // constellation row of each tx symbol
  std::complex<double> scale_x{1.0, 0.0};  // residual scalars that were removed
  std::complex<double> scale_y{1.0, 0.0};
  int channel_index = 0;
  long timing_shift = 0;  // alignment shift [symbols]
  int timing_phase = 0;   // alignment phase [samples within a symbol]
};

// Two-sided width of the occupied WDM band.
inline double wdm_band_hz(const ChannelPlan& p) {
  return (p.n_channels - 1) * p.spacing_hz + p.symbol_rate * (1.0 + p.rolloff);
}

namespace detail {

// Slot offset of channel c as an integer number of FFT bins.
inline long long channel_offset_bins(const ChannelPlan& p, int c, long n, double fs) {
  const double nominal = (c - 0.5 * (p.n_channels - 1)) * p.spacing_hz;
  return static_cast<long long>(std::llround(nominal / (fs / n)));
}

// In-place multiply by exp(sign * j 2 pi k i / n); integer phase bookkeeping
// keeps the tone exactly periodic over the frame.
inline void shift_by_bins(Eigen::ArrayXcd& v, long long k, int sign) {
  const long long n = v.size();
  long long kk = ((k % n) + n) % n;
  for (long long i = 0; i < n; ++i) {
    const double ang = 2.0 * M_PI * static_cast<double>((kk * i) % n) / n;
    v[i] *= std::complex<double>(std::cos(ang), sign * std::sin(ang));
  }
}

inline bool is_pow2(long v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace detail

// Generate the per-channel bit/symbol content and the composite waveform.
// Channels draw from independent streams of one master seed.  Per-channel
// power equals the format's (unit) mean symbol energy; the launch-power sweep
// rescales the composite afterwards.
inline std::pair<TxFrame, WaveformGrid> transmit(const Constellation4D& format,
                                                 const ChannelPlan& plan,
                                                 long n_symbols, int os,
                                                 std::uint64_t seed, Fft& fft) {
  if (!detail::is_pow2(n_symbols))
    throw std::invalid_argument("transmit: n_symbols must be a power of two");
  if (os < 1) throw std::invalid_argument("transmit: oversampling must be >= 1");
  if (plan.n_channels < 1 || !(plan.spacing_hz > 0) || !(plan.symbol_rate > 0))
    throw std::invalid_argument("transmit: invalid channel plan");
  const double fs = os * plan.symbol_rate;
  const long n = n_symbols * os;

  // Aliasing guard: the outermost channel edge must stay inside the grid.
  const double edge = 0.5 * (plan.n_channels - 1) * plan.spacing_hz +
                      0.5 * plan.symbol_rate * (1.0 + plan.rolloff);
  if (edge > 0.5 * fs)
    throw std::invalid_argument(
        "transmit: WDM band of " + std::to_string(wdm_band_hz(plan)) +
        " Hz does not fit the sample rate of " + std::to_string(fs) +
        " Hz; raise the oversampling factor");

  TxFrame frame;
  frame.plan = plan;
  frame.format = format;
  frame.n_symbols = n_symbols;
  frame.os = os;
  frame.seed = seed;

  WaveformGrid grid{Eigen::ArrayXcd::Zero(n), Eigen::ArrayXcd::Zero(n), fs, os};
  for (int c = 0; c < plan.n_channels; ++c) {
    CounterRng rng(seed, 0x7C00 + static_cast<std::uint64_t>(c));
    Eigen::ArrayXcd sx(n_symbols), sy(n_symbols);
    std::vector<Eigen::Index> idx(n_symbols);
    std::vector<std::uint8_t> bits;
    bits.reserve(static_cast<size_t>(n_symbols) * format.bits);
    for (long i = 0; i < n_symbols; ++i) {
      const auto k = static_cast<Eigen::Index>(rng.uniform_int(format.size()));
      idx[i] = k;
      sx[i] = format.x(k);
      sy[i] = format.y(k);
      for (int b = format.bits - 1; b >= 0; --b)
        bits.push_back(static_cast<std::uint8_t>((format.labels[k] >> b) & 1u));
    }

    WaveformGrid ch = shape_symbols(sx, sy, os, plan.rolloff, plan.symbol_rate, fft);
    const long long kbin = detail::channel_offset_bins(plan, c, n, fs);
    detail::shift_by_bins(ch.x, kbin, +1);
    detail::shift_by_bins(ch.y, kbin, +1);
    grid.x += ch.x;
    grid.y += ch.y;

    frame.sym_x.push_back(std::move(sx));
    frame.sym_y.push_back(std::move(sy));
    frame.symbol_index.push_back(std::move(idx));
    frame.bits.push_back(std::move(bits));
  }
  return {std::move(frame), std::move(grid)};
}

// Pure rescale so the average power per channel hits the target.
inline WaveformGrid set_launch_power(WaveformGrid wave, int n_channels,
                                     double p_per_channel_dbm) {
  const double target_w = 1e-3 * std::pow(10.0, p_per_channel_dbm / 10.0);
  const double have = wave.mean_power() / n_channels;
  const double scale = std::sqrt(target_w / have);
  wave.x *= scale;
  wave.y *= scale;
  return wave;
}

// Full receiver chain for one channel of interest.  `length_km` of `fiber`
// is compensated first (0 for back-to-back).  Throws if the correlation peak
// that fixes the frame alignment is not unique.
inline DspOutput receive(const WaveformGrid& wave, const TxFrame& frame,
                         const FiberSpec& fiber, double length_km,
                         int channel_index, Fft& fft) {
  const ChannelPlan& plan = frame.plan;
  if (channel_index < 0 || channel_index >= plan.n_channels)
    throw std::invalid_argument("receive: channel index out of range");
  if (wave.os != frame.os || wave.n() != frame.n_symbols * frame.os)
    throw std::invalid_argument("receive: waveform does not match the frame");

  WaveformGrid w = wave;
  if (length_km != 0.0) cd_compensate(w, fiber, length_km, fft);

  const long long kbin =
      detail::channel_offset_bins(plan, channel_index, w.n(), w.fs);
  detail::shift_by_bins(w.x, kbin, -1);
  detail::shift_by_bins(w.y, kbin, -1);
  matched_filter(w, plan.rolloff, fft);

  // Alignment: cyclic cross-correlation of the X polarization against the
  // known sequence, over every downsampling phase.  The winner fixes (phase,
  // shift); uniqueness is judged against the best candidate more than one
  // symbol away from the winner (the immediate neighbours carry the pulse
  // tails of the true peak and are not evidence of ambiguity).
  const Eigen::ArrayXcd& tx_x = frame.sym_x[channel_index];
  const long m = frame.n_symbols;
  Eigen::ArrayXcd ref = tx_x;
  fft.forward(ref);
  ref = ref.conjugate();

  Eigen::ArrayXd best_per_phase(frame.os);
  std::vector<Eigen::ArrayXd> corr_mag(frame.os);
  double peak = -1.0;
  int peak_phase = 0;
  long peak_shift = 0;
  for (int p = 0; p < frame.os; ++p) {
    auto [dx, dy] = downsample(w, p);
    Eigen::ArrayXcd corr = dx;
    fft.forward(corr);
    corr *= ref;
    fft.inverse(corr);
    corr_mag[p] = corr.abs();
    for (long s = 0; s < m; ++s) {
      if (corr_mag[p][s] > peak) {
        peak = corr_mag[p][s];
        peak_phase = p;
        peak_shift = s;
      }
    }
  }
  double runner_up = 0.0;
  const long peak_t = peak_shift * frame.os + peak_phase;
  const long nn = m * frame.os;
  for (int p = 0; p < frame.os; ++p) {
    for (long s = 0; s < m; ++s) {
      const long t = s * frame.os + p;
      long d = std::abs(t - peak_t);
      d = std::min(d, nn - d);
      if (d <= frame.os) continue;
      runner_up = std::max(runner_up, corr_mag[p][s]);
    }
  }
  if (!(peak > 2.0 * runner_up))
    throw std::runtime_error(
        "receive: alignment failed, correlation peak is not unique");

  auto [dx, dy] = downsample(w, peak_phase);
  DspOutput out;
  out.channel_index = channel_index;
  out.timing_phase = peak_phase;
  out.timing_shift = peak_shift;
  out.tx_x = tx_x;
  out.tx_y = frame.sym_y[channel_index];
  out.tx_index = frame.symbol_index[channel_index];
  out.rx_x.resize(m);
  out.rx_y.resize(m);
  for (long i = 0; i < m; ++i) {
    out.rx_x[i] = dx[(i + peak_shift) % m];
    out.rx_y[i] = dy[(i + peak_shift) % m];
  }

  // Average phase rotation + residual gain: one least-squares complex scalar
  // per polarization, fitted against the known transmitted symbols.
  const auto ls_scale = [](const Eigen::ArrayXcd& tx,
                           const Eigen::ArrayXcd& rx) -> std::complex<double> {
    const std::complex<double> num = (rx * tx.conjugate()).sum();
    const double den = tx.abs2().sum();
    return num / den;
  };
  out.scale_x = ls_scale(out.tx_x, out.rx_x);
  out.scale_y = ls_scale(out.tx_y, out.rx_y);
  if (std::abs(out.scale_x) == 0.0 || std::abs(out.scale_y) == 0.0)
    throw std::runtime_error("receive: degenerate scale estimate");
  out.rx_x /= out.scale_x;
  out.rx_y /= out.scale_y;
  return out;
}

// ---------------------------------------------------------------------------
// Waveform dumps for inspection: little-endian complex64, interleaved X/Y.

inline void write_waveform(const std::string& path, const WaveformGrid& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_waveform: cannot open " + path);
  const char magic[8] = {'Q', 'C', 'M', 'W', 'A', 'V', '1', '\n'};
  out.write(magic, 8);
  const std::uint64_t n = static_cast<std::uint64_t>(wave.n());
  const std::int32_t os = wave.os;
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(reinterpret_cast<const char*>(&wave.fs), 8);
  out.write(reinterpret_cast<const char*>(&wave.f_center), 8);
  out.write(reinterpret_cast<const char*>(&os), 4);
  std::vector<float> row(4);
  for (std::uint64_t i = 0; i < n; ++i) {
    row[0] = static_cast<float>(wave.x[i].real());
    row[1] = static_cast<float>(wave.x[i].imag());
    row[2] = static_cast<float>(wave.y[i].real());
    row[3] = static_cast<float>(wave.y[i].imag());
    out.write(reinterpret_cast<const char*>(row.data()), 16);
  }
  if (!out) throw std::runtime_error("write_waveform: write failed on " + path);
}

inline WaveformGrid read_waveform(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_waveform: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "QCMWAV1\n")
    throw std::runtime_error("read_waveform: bad header in " + path);
  std::uint64_t n = 0;
  std::int32_t os = 0;
  WaveformGrid wave;
  in.read(reinterpret_cast<char*>(&n), 8);
  in.read(reinterpret_cast<char*>(&wave.fs), 8);
  in.read(reinterpret_cast<char*>(&wave.f_center), 8);
  in.read(reinterpret_cast<char*>(&os), 4);
  if (!in) throw std::runtime_error("read_waveform: truncated header in " + path);
  wave.os = os;
  wave.x.resize(static_cast<Eigen::Index>(n));
  wave.y.resize(static_cast<Eigen::Index>(n));
  std::vector<float> row(4);
  for (std::uint64_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), 16);
    if (!in) throw std::runtime_error("read_waveform: truncated data in " + path);
    wave.x[i] = {row[0], row[1]};
    wave.y[i] = {row[2], row[3]};
  }
  return wave;
}

}  // namespace qcm
