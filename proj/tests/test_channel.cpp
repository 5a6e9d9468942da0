#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "qcm/channel.hpp"
#include "qcm/constellation.hpp"
#include "qcm/signal.hpp"

using namespace qcm;
using Catch::Approx;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Shaped dual-pol test waveform drawn from a constellation, scaled to a total
// launch power [W].
WaveformGrid make_test_wave(long n_sym, int os, double power_w, std::uint64_t seed,
                            Fft& fft, double symbol_rate = 70e9) {
  const auto fmt = make_format("512QCM-QAM");
  CounterRng rng(seed, 0x7E57);
  Eigen::ArrayXcd sx(n_sym), sy(n_sym);
  for (long i = 0; i < n_sym; ++i) {
    const long k = static_cast<long>(rng.uniform_int(fmt.size()));
    sx[i] = fmt.x(k);
    sy[i] = fmt.y(k);
  }
  auto w = shape_symbols(sx, sy, os, 0.05, symbol_rate, fft);
  const double scale = std::sqrt(power_w / w.mean_power());
  w.x *= scale;
  w.y *= scale;
  return w;
}

double rms_diff(const WaveformGrid& a, const WaveformGrid& b) {
  const double num = (a.x - b.x).abs2().sum() + (a.y - b.y).abs2().sum();
  const double den = b.x.abs2().sum() + b.y.abs2().sum();
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("dispersion coefficient conversion") {
  // beta2 = -D lambda^2 / (2 pi c); independent arithmetic for the two fibers:
  // 16.9 * 1550^2 / (2 pi * 299792.458) = 21.555 ps^2/km
  CHECK(beta2_ps2_per_km(ssmf()) == Approx(-21.555).margin(0.01));
  CHECK(beta2_ps2_per_km(nzdsf()) == Approx(-4.9742).margin(0.005));
  FiberSpec flat = ssmf();
  flat.dispersion_ps_nm_km = 0.0;
  CHECK(beta2_ps2_per_km(flat) == 0.0);
  FiberSpec anomalous = ssmf();
  anomalous.dispersion_ps_nm_km = -16.9;  // dispersion-compensating sign
  CHECK(beta2_ps2_per_km(anomalous) == Approx(21.555).margin(0.01));
  // h c / lambda at 1550 nm = 1.28158e-19 J
  CHECK(photon_energy(ssmf()) == Approx(1.28158e-19).epsilon(1e-4));
}

TEST_CASE("linear channel: dispersion is exactly invertible") {
  Fft fft;
  auto in = make_test_wave(1 << 11, 4, 1e-3, 5, fft);

  LinkConfig link = make_link(ssmf(), 80.0, 0.0);
  link.fiber.gamma_per_w_km = 0.0;  // linear regime
  auto out = propagate(in, link, 1, fft);

  // Amplifier restores the launch power exactly.
  CHECK(out.mean_power() == Approx(in.mean_power()).epsilon(1e-9));

  SECTION("local frequency-domain inverse recovers the input") {
    // Independent oracle: undo exp(j (beta2/2) w^2 L) with a multiplier built
    // here from scratch.
    const Eigen::ArrayXd freq = fft_freq(out.n(), out.fs);
    const double b2 = beta2_s2_per_km(link.fiber);
    Eigen::ArrayXcd inv(out.n());
    for (long i = 0; i < out.n(); ++i) {
      const double w = 2.0 * kPi * freq[i];
      inv[i] = std::exp(std::complex<double>(0.0, -0.5 * b2 * w * w * 80.0));
    }
    fft.forward(out.x);
    out.x *= inv;
    fft.inverse(out.x);
    fft.forward(out.y);
    out.y *= inv;
    fft.inverse(out.y);
    CHECK(rms_diff(out, in) < 1e-9);
  }

  SECTION("cd_compensate recovers the input") {
    cd_compensate(out, link.fiber, 80.0, fft);
    CHECK(rms_diff(out, in) < 1e-9);
  }

  SECTION("dispersion actually did something before compensation") {
    CHECK(rms_diff(out, in) > 0.1);
  }
}

TEST_CASE("lossless nonlinear propagation conserves energy") {
  Fft fft;
  auto in = make_test_wave(1 << 10, 4, 5e-3, 6, fft);
  FiberSpec fiber = ssmf();
  fiber.alpha_db_per_km = 0.0;
  LinkConfig link = make_link(fiber, 40.0, 0.0);
  auto out = propagate(in, link, 1, fft);
  CHECK(out.mean_power() == Approx(in.mean_power()).epsilon(1e-6));
  // and the waveform is genuinely transformed
  CHECK(rms_diff(out, in) > 0.01);
}

TEST_CASE("pure Kerr rotation matches the analytic phase") {
  // With D = 0 and alpha = 0 the channel reduces to a pointwise phase shift
  // of (8/9) gamma L (|Ex|^2 + |Ey|^2).
  Fft fft;
  FiberSpec fiber;
  fiber.name = "KERR";
  fiber.alpha_db_per_km = 0.0;
  fiber.dispersion_ps_nm_km = 0.0;
  fiber.gamma_per_w_km = 1.31;
  const double length = 10.0;
  LinkConfig link = make_link(fiber, length, 0.0);

  CounterRng rng(9, 1);
  const long n = 4096;
  WaveformGrid in{Eigen::ArrayXcd(n), Eigen::ArrayXcd(n), 280e9, 4};
  for (long i = 0; i < n; ++i) {
    in.x[i] = rng.gaussian_complex(1e-3);
    in.y[i] = rng.gaussian_complex(1e-3);
  }

  auto out = propagate(in, link, 1, fft);
  const double kappa = (8.0 / 9.0) * fiber.gamma_per_w_km;
  double max_phase_err = 0.0, max_mag_err = 0.0;
  for (long i = 0; i < n; ++i) {
    const double p = std::norm(in.x[i]) + std::norm(in.y[i]);
    const std::complex<double> expect_rot =
        std::exp(std::complex<double>(0.0, kappa * length * p));
    for (const auto& [o, s] : {std::pair{out.x[i], in.x[i]}, {out.y[i], in.y[i]}}) {
      if (std::abs(s) < 1e-12) continue;
      const std::complex<double> rot = o / s;
      max_phase_err = std::max(max_phase_err, std::abs(std::arg(rot / expect_rot)));
      max_mag_err = std::max(max_mag_err, std::abs(std::abs(rot) - 1.0));
    }
  }
  CHECK(max_phase_err < 1e-4);
  CHECK(max_mag_err < 1e-9);
}

TEST_CASE("halving the step budget changes the field by < 1e-3 RMS") {
  Fft fft;
  auto in = make_test_wave(1 << 12, 4, 1e-2, 7, fft);  // 10 dBm launch
  LinkConfig coarse = make_link(ssmf(), 80.0, 0.0);
  LinkConfig fine = coarse;
  fine.step.max_phase_rad /= 2.0;
  fine.step.max_step_km /= 2.0;

  PropagationStats sc{}, sf{};
  auto a = propagate(in, coarse, 1, fft, &sc);
  auto b = propagate(in, fine, 1, fft, &sf);
  INFO("coarse steps " << sc.total_steps << ", fine steps " << sf.total_steps);
  REQUIRE(sf.total_steps > sc.total_steps);
  CHECK(rms_diff(a, b) < 1e-3);
  // The adaptive schedule respects both caps.
  CHECK(sc.max_step_km <= 0.5 + 1e-12);
  CHECK(sc.min_step_km > 0.0);
}

TEST_CASE("raw span attenuates by exactly alpha*L dB") {
  Fft fft;
  auto in = make_test_wave(1 << 10, 4, 1e-3, 8, fft);
  LinkConfig link = make_link(ssmf(), 80.0, 0.0);
  link.fiber.gamma_per_w_km = 0.0;
  link.amplify = false;
  auto out = propagate(in, link, 1, fft);
  const double ratio_db = 10.0 * std::log10(out.mean_power() / in.mean_power());
  CHECK(ratio_db == Approx(-0.21 * 80.0).margin(1e-6));
}

TEST_CASE("amplifier noise has the configured spectral density") {
  Fft fft;
  const long n = 1 << 20;
  WaveformGrid in{Eigen::ArrayXcd::Zero(n), Eigen::ArrayXcd::Zero(n), 560e9, 8};
  LinkConfig link = make_link(ssmf(), 80.0, 4.5);
  link.fiber.gamma_per_w_km = 0.0;
  link.step.max_step_km = 80.0;  // zero signal, so one linear step suffices

  auto out = propagate(in, link, 3, fft);

  const double gain = std::exp(alpha_per_km(link.fiber) * 80.0);
  const double n_sp = std::pow(10.0, 4.5 / 10.0) / 2.0;
  const double s_ase = (gain - 1.0) * photon_energy(link.fiber) * n_sp;
  const double want = s_ase * in.fs;  // per-pol noise power across the band
  const double vx = out.x.abs2().mean();
  const double vy = out.y.abs2().mean();
  CHECK(vx == Approx(want).epsilon(0.01));
  CHECK(vy == Approx(want).epsilon(0.01));
  // circular symmetry: real/imag parts carry half the power each
  CHECK(out.x.real().square().mean() == Approx(want / 2).epsilon(0.02));
  CHECK(out.x.imag().square().mean() == Approx(want / 2).epsilon(0.02));

  SECTION("noiseless mode adds nothing") {
    LinkConfig quiet = link;
    quiet.noise_figure_db = 0.0;
    auto silent = propagate(in, quiet, 3, fft);
    CHECK(silent.x.abs2().maxCoeff() == 0.0);
    CHECK(silent.y.abs2().maxCoeff() == 0.0);
  }
}

TEST_CASE("propagation replays bit-identically for a fixed seed") {
  Fft fft;
  auto in = make_test_wave(1 << 10, 4, 2e-3, 11, fft);
  LinkConfig link = make_link(ssmf(), 80.0, 4.5);

  auto a = propagate(in, link, 42, fft);
  auto b = propagate(in, link, 42, fft);
  bool identical = true;
  for (long i = 0; i < a.n() && identical; ++i)
    identical = a.x[i] == b.x[i] && a.y[i] == b.y[i];
  CHECK(identical);

  auto c = propagate(in, link, 43, fft);
  CHECK(rms_diff(a, c) > 0.0);
}

TEST_CASE("multi-span linear link matches one continuous run") {
  Fft fft;
  auto in = make_test_wave(1 << 10, 4, 1e-3, 12, fft);
  LinkConfig whole = make_link(ssmf(), 160.0, 0.0);
  whole.fiber.gamma_per_w_km = 0.0;
  LinkConfig split = whole;
  split.n_spans = 2;
  auto a = propagate(in, whole, 1, fft);
  auto b = propagate(in, split, 1, fft);
  CHECK(rms_diff(a, b) < 1e-10);
}

TEST_CASE("link validation and step-policy abort") {
  Fft fft;
  auto in = make_test_wave(1 << 8, 4, 1e-2, 13, fft);

  LinkConfig bad_len = make_link(ssmf(), -5.0, 0.0);
  CHECK_THROWS_AS(propagate(in, bad_len, 1, fft), std::invalid_argument);

  LinkConfig bad_nf = make_link(ssmf(), 80.0, 2.0);  // 0 < NF < 3 is unphysical
  CHECK_THROWS_AS(propagate(in, bad_nf, 1, fft), std::invalid_argument);

  LinkConfig nf3 = make_link(ssmf(), 1.0, 3.0);  // boundary is allowed
  CHECK_NOTHROW(propagate(in, nf3, 1, fft));

  LinkConfig bad_spans = make_link(ssmf(), 80.0, 0.0);
  bad_spans.n_spans = 0;
  CHECK_THROWS_AS(propagate(in, bad_spans, 1, fft), std::invalid_argument);

  LinkConfig neg_alpha = make_link(ssmf(), 80.0, 0.0);
  neg_alpha.fiber.alpha_db_per_km = -0.1;
  CHECK_THROWS_AS(propagate(in, neg_alpha, 1, fft), std::invalid_argument);

  // A fixed step whose mean nonlinear phase exceeds the cap aborts with a
  // diagnostic instead of silently under-resolving the Kerr rotation.
  LinkConfig fixed = make_link(ssmf(), 10.0, 0.0);
  fixed.step.adaptive = false;
  fixed.step.fixed_step_km = 0.5;  // at 10 dBm: ~5.8e-3 rad/step > 1e-3 cap
  CHECK_THROWS_WITH(propagate(in, fixed, 1, fft),
                    Catch::Matchers::ContainsSubstring("nonlinear phase"));
  fixed.step.fixed_step_km = 0.05;  // ~5.8e-4 rad/step: inside the cap
  CHECK_NOTHROW(propagate(in, fixed, 1, fft));

  LinkConfig unknown;
  CHECK_THROWS_AS(make_link("SMF28", 80.0), std::invalid_argument);
}
