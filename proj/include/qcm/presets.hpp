#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "qcm/config.hpp"

namespace qcm {

// Built-in campaign configurations.  The desk-* presets finish on a
// workstation (reduced symbol count, coarse power grid, one distance per
// fiber); the paper-* presets carry the full-size grids for users with the
// compute budget.  Every physical parameter of the modeled system (fiber
// constants, amplifier noise figure, channel plan, pulse shaping) is spelled
// out explicitly so a preset is a complete, self-documenting experiment.
inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"desk-ssmf", "desk-nzdsf", "paper-ssmf",
                                                 "paper-nzdsf"};
  return names;
}

namespace detail {

inline KvConfig preset_base() {
  KvConfig kv;
  kv.set("format.names",
         "512QCM-QAM,512SP-QAM,2048QCM-QAM,2048SP-QAM,8192QCM-QAM,8192SP-QAM");
  kv.set("link.noise_figure_db", "4.5");
  kv.set("link.n_spans", "1");
  kv.set("signal.os", "8");
  kv.set("plan.n_channels", "5");
  kv.set("plan.spacing_ghz", "75");
  kv.set("plan.symbol_rate_gbaud", "70");
  kv.set("plan.rolloff", "0.05");
  kv.set("step.adaptive", "true");
  kv.set("step.max_phase_rad", "0.001");
  kv.set("step.max_step_km", "0.5");
  kv.set("step.fixed_step_km", "0.1");
  kv.set("psd.n_symbols", "262144");
  kv.set("psd.os", "4");
  kv.set("psd.welch_segment", "4096");
  kv.set("psd.band_fraction", "0.73");
  kv.set("psd.filter_span_km", "80");
  kv.set("reach.code_rate", "0.8");
  kv.set("scatter.distance_km", "160");
  kv.set("scatter.power_dbm", "12");
  return kv;
}

inline void preset_fiber(KvConfig& kv, bool ssmf) {
  if (ssmf) {
    kv.set("fiber.name", "SSMF");
    kv.set("fiber.attenuation_db_per_km", "0.21");
    kv.set("fiber.dispersion_ps_per_nm_km", "16.9");
    kv.set("fiber.gamma_per_w_km", "1.31");
  } else {
    kv.set("fiber.name", "NZDSF");
    kv.set("fiber.attenuation_db_per_km", "0.2");
    kv.set("fiber.dispersion_ps_per_nm_km", "3.9");
    kv.set("fiber.gamma_per_w_km", "1.6");
  }
  kv.set("fiber.lambda_nm", "1550");
}

}  // namespace detail

inline KvConfig preset_config(const std::string& name) {
  KvConfig kv = detail::preset_base();
  const bool ssmf = name == "desk-ssmf" || name == "paper-ssmf";
  const bool desk = name == "desk-ssmf" || name == "desk-nzdsf";
  if (!ssmf && name != "desk-nzdsf" && name != "paper-nzdsf")
    throw std::invalid_argument("unknown preset '" + name +
                                "' (expected desk-ssmf, desk-nzdsf, paper-ssmf, or paper-nzdsf)");
  detail::preset_fiber(kv, ssmf);
  kv.set("run.out_dir", "out-" + name);
  if (desk) {
    kv.set("run.desk_scale", "true");
    kv.set("run.seeds", "1");
    kv.set("signal.n_symbols", "16384");
    kv.set("grid.powers_dbm", "-2,0,2,4,6,8,10,12,14");
    if (ssmf) {
      kv.set("grid.distances_km", "199");
      kv.set("reach.distances_km", "143,183,223");
      kv.set("reach.powers_dbm", "7,9,11,13");
    } else {
      kv.set("grid.distances_km", "183");
      kv.set("reach.distances_km", "127,167,207");
      kv.set("reach.powers_dbm", "3,5,7,9");
    }
  } else {
    kv.set("run.desk_scale", "false");
    kv.set("run.seeds", "1,2,3");
    kv.set("signal.n_symbols", "131072");
    kv.set("grid.powers_dbm", "-2,-1,0,1,2,3,4,5,6,7,8,9,10,11,12,13,14");
    if (ssmf) {
      kv.set("grid.distances_km", "158,177,199");
      kv.set("reach.distances_km", "143,163,183,203,223");
      kv.set("reach.powers_dbm", "7,8,9,10,11,12,13");
    } else {
      kv.set("grid.distances_km", "142,161,183");
      kv.set("reach.distances_km", "127,147,167,187,207");
      kv.set("reach.powers_dbm", "2,3,4,5,6,7,8,9");
    }
  }
  return kv;
}

}  // namespace qcm
