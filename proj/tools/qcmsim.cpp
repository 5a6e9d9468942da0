#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "qcm/constellation.hpp"
#include "qcm/experiment.hpp"
#include "qcm/presets.hpp"
#include "qcm/version.hpp"

namespace {

int cmd_formats() {
  std::printf("%-14s %8s %4s %10s %10s %10s %10s\n", "name", "points", "SE", "energy", "var",
              "min", "max");
  for (const auto& name : qcm::builtin_format_names()) {
    const auto c = qcm::make_format(name);
    const auto st = qcm::energy_stats(c);
    std::printf("%-14s %8d %4d %10.6f %10.6f %10.6f %10.6f\n", c.name.c_str(), c.size(), c.bits,
                st.mean, st.var, st.min, st.max);
  }
  return 0;
}

int cmd_dump(const std::string& name, const std::string& out) {
  const auto c = qcm::make_format(name);
  if (out == "-") {
    qcm::write_constellation(std::cout, c);
    return 0;
  }
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot open output file: " + out);
  qcm::write_constellation(os, c);
  return 0;
}

// `--config` names either a config file on disk or one of the built-in
// presets (`desk-ssmf`, `desk-nzdsf`, `paper-ssmf`, `paper-nzdsf`).
qcm::KvConfig resolve_config(const std::string& spec) {
  if (std::filesystem::exists(spec)) return qcm::KvConfig::load(spec);
  for (const auto& name : qcm::preset_names())
    if (name == spec) return qcm::preset_config(name);
  throw std::runtime_error("config '" + spec + "' is neither a file nor a built-in preset");
}

struct RunFlags {
  std::string config;
  std::string out;     // overrides run.out_dir when set
  std::string seed;    // overrides run.seeds with a single seed when set
  int workers = 1;
  bool resume = false;
};

qcm::ExperimentConfig build_config(const RunFlags& f) {
  qcm::KvConfig kv = resolve_config(f.config);
  if (!f.out.empty()) kv.set("run.out_dir", f.out);
  if (!f.seed.empty()) kv.set("run.seeds", f.seed);
  return qcm::experiment_from_config(kv);
}

void add_run_flags(CLI::App* cmd, RunFlags& f, bool pooled) {
  cmd->add_option("--config", f.config, "config file or preset name")->required();
  cmd->add_option("--out", f.out, "output directory (overrides run.out_dir)");
  cmd->add_option("--seed", f.seed, "single seed overriding run.seeds");
  if (pooled) {
    cmd->add_option("--workers", f.workers, "worker threads")->check(CLI::Range(1, 64));
    cmd->add_flag("--resume", f.resume, "skip tuples already recorded in the manifest");
  }
}

int report(const char* op, const qcm::ExperimentConfig& cfg, const qcm::RunManifest& m) {
  std::printf("%s: %zu runs (%ld computed, %ld failed) -> %s\n", op, m.runs.size(),
              m.computed_count(), m.failed_count(), cfg.out_dir.c_str());
  for (const auto& o : m.outputs) std::printf("  %s/%s\n", cfg.out_dir.c_str(), o.c_str());
  if (m.failed_count() > 0) {
    std::fprintf(stderr, "error: %ld runs failed, see %s manifest for details\n",
                 m.failed_count(), op);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coherent optical transmission simulation toolkit"};
  app.set_version_flag("--version", qcm::kVersion);
  app.require_subcommand(1);

  auto* formats = app.add_subcommand("formats", "list built-in 4D formats with energy stats");

  std::string dump_name, dump_out = "-";
  auto* dump = app.add_subcommand("dump", "write a constellation table");
  dump->add_option("format", dump_name, "format name (see `formats`)")->required();
  dump->add_option("-o,--out", dump_out, "output path, '-' for stdout");

  RunFlags psd_flags, sweep_flags, reach_flags, scatter_flags;
  auto* psd = app.add_subcommand(
      "psd", "power-fluctuation spectra, span filter responses, and per-SE band gaps");
  add_run_flags(psd, psd_flags, false);
  auto* sweep = app.add_subcommand(
      "sweep", "launch-power sweep: SNR and GMI per (format, distance, power, seed)");
  add_run_flags(sweep, sweep_flags, true);
  auto* reach = app.add_subcommand(
      "reach", "optimal-power GMI versus distance and interpolated threshold reach");
  add_run_flags(reach, reach_flags, true);
  auto* scatter =
      app.add_subcommand("scatter", "received-symbol scatter snapshots at one grid point");
  add_run_flags(scatter, scatter_flags, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*formats) return cmd_formats();
    if (*dump) return cmd_dump(dump_name, dump_out);
    if (*psd) {
      const auto cfg = build_config(psd_flags);
      return report("psd", cfg, qcm::run_psd(cfg));
    }
    if (*sweep) {
      const auto cfg = build_config(sweep_flags);
      return report("sweep", cfg, qcm::run_sweep(cfg, sweep_flags.workers, sweep_flags.resume));
    }
    if (*reach) {
      const auto cfg = build_config(reach_flags);
      return report("reach", cfg, qcm::run_reach(cfg, reach_flags.workers, reach_flags.resume));
    }
    if (*scatter) {
      const auto cfg = build_config(scatter_flags);
      return report("scatter", cfg, qcm::run_scatter(cfg));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
