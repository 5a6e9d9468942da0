#pragma once

#include <cmath>
#include <string>

namespace qcm {

constexpr double kSpeedOfLight = 299792458.0;  // m/s
constexpr double kPlanck = 6.62607015e-34;     // J s

// Physical fiber parameters in the units they are usually quoted in.
struct FiberSpec {
  std::string name;
  double alpha_db_per_km = 0;      // attenuation, >= 0
  double dispersion_ps_nm_km = 0;  // D
  double gamma_per_w_km = 0;       // Kerr coefficient
  double lambda_nm = 1550.0;       // center wavelength, > 0
};

inline FiberSpec ssmf() { return {"SSMF", 0.21, 16.9, 1.31, 1550.0}; }
inline FiberSpec nzdsf() { return {"NZDSF", 0.20, 3.9, 1.60, 1550.0}; }

// field attenuation coefficient in natural log units [1/km] applies to power
// as exp(-alpha z)
inline double alpha_per_km(const FiberSpec& f) {
  return f.alpha_db_per_km * std::log(10.0) / 10.0;
}

// group velocity dispersion beta2 = -D lambda^2 / (2 pi c)  [ps^2/km]
inline double beta2_ps2_per_km(const FiberSpec& f) {
  const double c_nm_per_ps = kSpeedOfLight * 1e-3;  // 2.998e5 nm/ps
  return -f.dispersion_ps_nm_km * f.lambda_nm * f.lambda_nm / (2.0 * M_PI * c_nm_per_ps);
}

// beta2 in SI [s^2/km], convenient next to frequencies in Hz
inline double beta2_s2_per_km(const FiberSpec& f) { return beta2_ps2_per_km(f) * 1e-24; }

// photon energy h*nu at the center wavelength [J]
inline double photon_energy(const FiberSpec& f) {
  return kPlanck * kSpeedOfLight / (f.lambda_nm * 1e-9);
}

}  // namespace qcm
