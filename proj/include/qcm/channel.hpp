#pragma once

// Nonlinear fiber channel: dual-polarization split-step propagation with
// lumped amplification.
//
// The waveform is advanced through the span by a symmetric split-step scheme
// for the Manakov equation (polarization-averaged Kerr effect, factor 8/9).
// Chromatic dispersion and loss are applied in the frequency domain, the
// nonlinear phase rotation in the time domain:
//
//   linear(dz):     X(f) *= exp( j (beta2/2) w^2 dz - (alpha/2) dz )
//   nonlinear(dz):  E    *= exp( j (8/9) gamma (|Ex|^2 + |Ey|^2) dz )
//
// Half linear steps of adjacent segments are merged, so each segment costs one
// linear operator and one nonlinear rotation.  Step sizes follow an analytic
// mean-power budget: the average nonlinear phase per step is capped, and the
// cap relaxes as loss drains the signal.  The FFT imposes circular boundary
// conditions, which is the intended topology for cyclic test frames.
//
// After each span an EDFA restores the launch power exactly (gain = span
// loss) and, unless the link is configured noiseless, adds white complex
// Gaussian ASE per polarization with spectral density (G-1) h nu n_sp where
// n_sp = 10^(NF/10) / 2.

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qcm/fft.hpp"
#include "qcm/fiber.hpp"
#include "qcm/rng.hpp"
#include "qcm/signal.hpp"

namespace qcm {

// How the split-step segment lengths are chosen.
struct StepPolicy {
  bool adaptive = true;        // false: uniform segments of fixed_step_km
  double max_phase_rad = 1e-3; // cap on mean nonlinear phase per segment
  double max_step_km = 0.5;    // cap on segment length
  double fixed_step_km = 0.1;  // segment length when adaptive == false
};

struct LinkConfig {
  FiberSpec fiber;
  double length_km = 80.0;      // total link length
  double noise_figure_db = 4.5; // amplifier NF; 0 selects noiseless mode
  int n_spans = 1;              // split link into equal amplified spans
  bool amplify = true;          // false: leave the raw span output (diagnostics)
  StepPolicy step;
};

inline LinkConfig make_link(const FiberSpec& fiber, double length_km,
                            double noise_figure_db = 4.5) {
  LinkConfig link;
  link.fiber = fiber;
  link.length_km = length_km;
  link.noise_figure_db = noise_figure_db;
  return link;
}

inline LinkConfig make_link(const std::string& fiber_name, double length_km,
                            double noise_figure_db = 4.5) {
  if (fiber_name == "SSMF") return make_link(ssmf(), length_km, noise_figure_db);
  if (fiber_name == "NZDSF") return make_link(nzdsf(), length_km, noise_figure_db);
  throw std::invalid_argument("make_link: unknown fiber '" + fiber_name + "'");
}

// Optional per-call diagnostics from propagate().
struct PropagationStats {
  long total_steps = 0;
  double min_step_km = 0;
  double max_step_km = 0;
};

namespace detail {

inline void validate_link(const LinkConfig& link) {
  if (!(link.length_km > 0))
    throw std::invalid_argument("propagate: link length must be positive");
  if (!(link.fiber.alpha_db_per_km >= 0))
    throw std::invalid_argument("propagate: fiber attenuation must be >= 0");
  if (!(link.fiber.lambda_nm > 0))
    throw std::invalid_argument("propagate: fiber wavelength must be positive");
  if (link.n_spans < 1)
    throw std::invalid_argument("propagate: n_spans must be >= 1");
  const double nf = link.noise_figure_db;
  if (nf != 0.0 && !(nf >= 3.0))
    throw std::invalid_argument(
        "propagate: noise figure must be >= 3 dB (or 0 for noiseless mode)");
  const StepPolicy& sp = link.step;
  if (!(sp.max_phase_rad > 0) || !(sp.max_step_km > 0) || !(sp.fixed_step_km > 0))
    throw std::invalid_argument("propagate: step policy fields must be positive");
}

// Segment lengths for one span under the given policy.  `kappa_p0` is the
// nonlinear rate (8/9) gamma P0 [rad/km] at span entry; the local mean power
// decays as exp(-alpha z), so the phase budget allows steps to grow with z.
inline std::vector<double> plan_steps(const StepPolicy& sp, double span_km,
                                      double kappa_p0, double alpha) {
  std::vector<double> steps;
  if (!sp.adaptive) {
    const long n = std::max(1L, static_cast<long>(std::ceil(span_km / sp.fixed_step_km)));
    const double dz = span_km / static_cast<double>(n);
    if (kappa_p0 * dz > sp.max_phase_rad) {
      throw std::runtime_error(
          "propagate: fixed step of " + std::to_string(dz) +
          " km yields mean nonlinear phase " + std::to_string(kappa_p0 * dz) +
          " rad per step, above the configured cap of " +
          std::to_string(sp.max_phase_rad) +
          " rad; shorten fixed_step_km or switch to the adaptive policy");
    }
    steps.assign(static_cast<size_t>(n), dz);
    return steps;
  }
  double z = 0.0;
  while (z < span_km) {
    double dz = sp.max_step_km;
    const double rate = kappa_p0 * std::exp(-alpha * z);  // rad/km at depth z
    if (rate * dz > sp.max_phase_rad) dz = sp.max_phase_rad / rate;
    if (z + dz > span_km) dz = span_km - z;
    if (!(dz > 0)) break;  // guard against FP underflow at the span end
    steps.push_back(dz);
    z += dz;
  }
  if (steps.empty()) steps.push_back(span_km);
  return steps;
}

}  // namespace detail

// Propagate a dual-polarization waveform through the link.  Deterministic for
// a fixed (wave, link, seed) triple.  ASE is drawn from a counter-based
// generator keyed by `seed`, so replays are bit-identical.
inline WaveformGrid propagate(WaveformGrid wave, const LinkConfig& link,
                              std::uint64_t seed, Fft& fft,
                              PropagationStats* stats = nullptr) {
  detail::validate_link(link);
  if (wave.x.size() != wave.y.size())
    throw std::invalid_argument("propagate: polarization lengths differ");
  const Eigen::Index n = wave.x.size();
  if (n < 2) throw std::invalid_argument("propagate: waveform too short");

  const double alpha = alpha_per_km(link.fiber);
  const double beta2 = beta2_s2_per_km(link.fiber);
  const double kappa = (8.0 / 9.0) * link.fiber.gamma_per_w_km;
  const double span_km = link.length_km / link.n_spans;

  // (beta2/2) w^2 [1/km] on the FFT frequency grid.
  const Eigen::ArrayXd freq = fft_freq(n, wave.fs);
  const Eigen::ArrayXd disp_rate =
      0.5 * beta2 * (2.0 * M_PI * freq).square();

  // Linear operator for a segment of length dz, cached: the adaptive schedule
  // repeats max_step_km for the whole loss-dominated tail of the span.
  Eigen::ArrayXcd lin_mult(n);
  double lin_mult_dz = -1.0;
  const auto apply_linear = [&](double dz) {
    if (dz != lin_mult_dz) {
      lin_mult = (std::complex<double>(0.0, 1.0) * (disp_rate * dz) -
                  0.5 * alpha * dz)
                     .exp();
      lin_mult_dz = dz;
    }
    fft.forward(wave.x);
    wave.x *= lin_mult;
    fft.inverse(wave.x);
    fft.forward(wave.y);
    wave.y *= lin_mult;
    fft.inverse(wave.y);
  };

  Eigen::ArrayXd phase(n);
  const auto apply_nonlinear = [&](double dz) {
    if (kappa == 0.0) return;
    phase = (wave.x.abs2() + wave.y.abs2()) * (kappa * dz);
    const Eigen::ArrayXcd rot =
        phase.cos().cast<std::complex<double>>() +
        std::complex<double>(0.0, 1.0) * phase.sin().cast<std::complex<double>>();
    wave.x *= rot;
    wave.y *= rot;
  };

  CounterRng rng(seed, 0xA5E);  // ASE stream
  if (stats) *stats = PropagationStats{};

  for (int span = 0; span < link.n_spans; ++span) {
    const double p0 = wave.mean_power();
    const std::vector<double> steps =
        detail::plan_steps(link.step, span_km, kappa * p0, alpha);
    if (stats) {
      stats->total_steps += static_cast<long>(steps.size());
      for (double dz : steps) {
        if (stats->min_step_km == 0 || dz < stats->min_step_km)
          stats->min_step_km = dz;
        if (dz > stats->max_step_km) stats->max_step_km = dz;
      }
    }

    // Symmetric scheme with merged half steps:
    //   L(dz0/2) N(dz0) L((dz0+dz1)/2) N(dz1) ... N(dzK) L(dzK/2)
    apply_linear(0.5 * steps.front());
    for (size_t k = 0; k < steps.size(); ++k) {
      apply_nonlinear(steps[k]);
      const double next = (k + 1 < steps.size()) ? steps[k + 1] : 0.0;
      apply_linear(0.5 * (steps[k] + next));
    }

    if (link.amplify) {
      const double gain = std::exp(alpha * span_km);  // restores launch power
      wave.x *= std::sqrt(gain);
      wave.y *= std::sqrt(gain);
      if (link.noise_figure_db > 0.0 && gain > 1.0) {
        const double n_sp = std::pow(10.0, link.noise_figure_db / 10.0) / 2.0;
        const double s_ase = (gain - 1.0) * photon_energy(link.fiber) * n_sp;
        const double var = s_ase * wave.fs;  // noise power in the sim bandwidth
        for (Eigen::Index i = 0; i < n; ++i) wave.x[i] += rng.gaussian_complex(var);
        for (Eigen::Index i = 0; i < n; ++i) wave.y[i] += rng.gaussian_complex(var);
      }
    }
  }
  return wave;
}

// Exact inverse of the accumulated dispersion of `length_km` of fiber (loss
// is already undone by the amplifiers).  A waveform that represents a band
// offset from the link center (f_center != 0) sees the dispersion parabola
// evaluated at its absolute frequencies, which folds the per-band group delay
// into the same all-pass inverse.
inline void cd_compensate(WaveformGrid& wave, const FiberSpec& fiber,
                          double length_km, Fft& fft) {
  const Eigen::Index n = wave.x.size();
  const Eigen::ArrayXd freq = fft_freq(n, wave.fs) + wave.f_center;
  const Eigen::ArrayXd phi =
      -0.5 * beta2_s2_per_km(fiber) * (2.0 * M_PI * freq).square() * length_km;
  const Eigen::ArrayXcd mult =
      phi.cos().cast<std::complex<double>>() +
      std::complex<double>(0.0, 1.0) * phi.sin().cast<std::complex<double>>();
  fft.forward(wave.x);
  wave.x *= mult;
  fft.inverse(wave.x);
  fft.forward(wave.y);
  wave.y *= mult;
  fft.inverse(wave.y);
}

}  // namespace qcm
