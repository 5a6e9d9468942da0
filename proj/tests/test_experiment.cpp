#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "qcm/experiment.hpp"
#include "qcm/presets.hpp"

using namespace qcm;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

namespace fs = std::filesystem;

// Fresh scratch directory per test section, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("qcmsim-test-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

long count_lines(const std::string& text) {
  long n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// Small but complete campaign config that propagates in milliseconds:
// three channels at reduced symbol count over a short span.
ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig c;
  c.formats = {"512QCM-QAM", "512SP-QAM"};
  c.fiber = ssmf();
  c.noise_figure_db = 4.5;
  c.distances_km = {40.0};
  c.powers_dbm = {4.0, 8.0};
  c.n_symbols = 1024;
  c.os = 4;
  c.plan.n_channels = 3;
  c.seeds = {1, 2};
  c.out_dir = out_dir;
  c.step.max_phase_rad = 1e-2;
  c.step.max_step_km = 1.0;
  c.psd_n_symbols = 1 << 12;
  c.psd_welch_segment = 1024;
  return c;
}

}  // namespace

TEST_CASE("config text round-trips through parse and serialize") {
  const std::string text =
      "# campaign header comment\n"
      "\n"
      "zeta.last = 3\n"
      "alpha.first = hello world   # trailing comment\n"
      "list.values = 1, 2.5,3e2 ,4\n"
      "flag.on = true\n";
  const KvConfig a = KvConfig::parse(text);
  const KvConfig b = KvConfig::parse(a.serialize());
  CHECK(a == b);
  CHECK(a.serialize() == b.serialize());

  CHECK(a.get_string("alpha.first") == "hello world");
  CHECK(a.get_int("zeta.last") == 3);
  CHECK(a.get_bool("flag.on"));
  const auto vals = a.get_double_list("list.values");
  REQUIRE(vals.size() == 4);
  CHECK(vals[2] == 300.0);

  // canonical form is sorted, so serialization is order-independent
  const KvConfig c = KvConfig::parse("b = 2\na = 1\n");
  const KvConfig d = KvConfig::parse("a = 1\nb = 2\n");
  CHECK(c.serialize() == d.serialize());
  CHECK(c.hash() == d.hash());

  // defaults and typed getter fallbacks
  CHECK(a.get_double("absent.key", 7.5) == 7.5);
  CHECK(a.get_string("absent.key", "x") == "x");

  CHECK_THROWS_WITH(a.get_string("absent.key"), ContainsSubstring("absent.key"));
  CHECK_THROWS_WITH(a.get_double("alpha.first"), ContainsSubstring("expected number"));
  CHECK_THROWS_AS(KvConfig::parse("key value without equals\n"), std::invalid_argument);
  CHECK_THROWS_WITH(KvConfig::parse("dup = 1\ndup = 2\n"), ContainsSubstring("duplicate"));
  CHECK_THROWS_WITH(KvConfig::parse("bad key = 1\n"), ContainsSubstring("invalid character"));
  CHECK_THROWS_AS(KvConfig::load("/nonexistent/config/file.cfg"), std::runtime_error);
}

TEST_CASE("FNV-1a matches the published test vectors") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("experiment config maps to and from the text document") {
  const KvConfig kv = preset_config("desk-ssmf");
  const ExperimentConfig c = experiment_from_config(kv);

  CHECK(c.fiber.name == "SSMF");
  CHECK(c.fiber.alpha_db_per_km == 0.21);
  CHECK(c.fiber.dispersion_ps_nm_km == 16.9);
  CHECK(c.fiber.gamma_per_w_km == 1.31);
  CHECK(c.fiber.lambda_nm == 1550.0);
  CHECK(c.noise_figure_db == 4.5);
  CHECK(c.n_spans == 1);
  REQUIRE(c.formats.size() == 6);
  CHECK(c.formats.front() == "512QCM-QAM");
  REQUIRE(c.distances_km.size() == 1);
  CHECK(c.distances_km[0] == 199.0);
  REQUIRE(c.powers_dbm.size() == 9);
  CHECK(c.powers_dbm.front() == -2.0);
  CHECK(c.powers_dbm.back() == 14.0);
  CHECK(c.n_symbols == 16384);
  CHECK(c.os == 8);
  CHECK(c.plan.n_channels == 5);
  CHECK(c.plan.spacing_hz == 75e9);
  CHECK(c.plan.symbol_rate == 70e9);
  CHECK(c.plan.rolloff == 0.05);
  CHECK(c.seeds == std::vector<std::uint64_t>{1});
  CHECK(c.code_rate == 0.8);
  CHECK(c.reach_distances_km == std::vector<double>{143, 183, 223});
  CHECK(c.scatter_distance_km == 160.0);
  CHECK(c.scatter_power_dbm == 12.0);
  CHECK_NOTHROW(validate_experiment(c));

  // document -> struct -> document is a fixed point
  const KvConfig echo = experiment_to_config(c);
  const ExperimentConfig c2 = experiment_from_config(echo);
  CHECK(experiment_to_config(c2).serialize() == echo.serialize());

  // unknown keys are rejected instead of silently ignored
  KvConfig bad = kv;
  bad.set("grid.distance_km", "100");  // typo'd key
  CHECK_THROWS_WITH(experiment_from_config(bad), ContainsSubstring("grid.distance_km"));

  CHECK_THROWS_WITH(experiment_from_config(KvConfig::parse("format.names = 512QCM-QAM\n")),
                    ContainsSubstring("fiber.name"));
}

TEST_CASE("experiment validation rejects malformed campaigns") {
  const ExperimentConfig base = experiment_from_config(preset_config("desk-nzdsf"));
  CHECK_NOTHROW(validate_experiment(base));

  auto broken = [&](auto mutate, const char* needle) {
    ExperimentConfig c = base;
    mutate(c);
    CHECK_THROWS_WITH(validate_experiment(c), ContainsSubstring(needle));
  };
  broken([](ExperimentConfig& c) { c.formats.clear(); }, "no formats");
  broken([](ExperimentConfig& c) { c.formats.push_back("1024QCM-QAM"); }, "unknown format");
  broken([](ExperimentConfig& c) { c.distances_km.clear(); }, "distance grid");
  broken([](ExperimentConfig& c) { c.powers_dbm.clear(); }, "launch-power grid");
  broken([](ExperimentConfig& c) { c.seeds = {3, 3}; }, "distinct");
  broken([](ExperimentConfig& c) { c.n_symbols = 1000; }, "power of two");
  broken([](ExperimentConfig& c) { c.os = 3; }, "signal.os");
  broken([](ExperimentConfig& c) { c.noise_figure_db = 2.0; }, "noise_figure");
  broken([](ExperimentConfig& c) { c.plan.rolloff = 1.5; }, "rolloff");
  broken([](ExperimentConfig& c) { c.code_rate = 0.0; }, "code_rate");
  broken([](ExperimentConfig& c) { c.out_dir.clear(); }, "out_dir");
}

TEST_CASE("presets are valid and the shipped config files match them") {
  for (const auto& name : preset_names()) {
    INFO("preset " << name);
    const KvConfig kv = preset_config(name);
    CHECK_NOTHROW(validate_experiment(experiment_from_config(kv)));
    const std::string shipped = std::string(QCM_CONFIG_DIR) + "/" + name + ".cfg";
    CHECK(KvConfig::load(shipped) == kv);
  }
  CHECK_THROWS_WITH(preset_config("desk-smf28"), ContainsSubstring("unknown preset"));

  // paper-scale presets carry the full grids
  const ExperimentConfig paper = experiment_from_config(preset_config("paper-ssmf"));
  CHECK(paper.n_symbols == 131072);
  CHECK(paper.seeds.size() == 3);
  CHECK(paper.powers_dbm.size() == 17);
  CHECK(paper.distances_km == std::vector<double>{158, 177, 199});
  CHECK_FALSE(paper.desk_scale);
}

TEST_CASE("manifest files round-trip") {
  TempDir dir("manifest");
  RunManifest m;
  m.config_hash = fnv1a_hex("k = v\n");
  m.tool_version = kVersion;
  m.outputs = {"sweep.csv"};
  RunRecord ok;
  ok.tuple = 0;
  ok.ok = true;
  ok.wall_ms = 12.5;
  ok.row = "512QCM-QAM,SSMF,40,4,1,1024,17.25,8.9921";
  RunRecord fail;
  fail.tuple = 1;
  fail.wall_ms = 3.25;
  fail.error = detail::sanitize_message("step plan:\nphase cap exceeded");
  m.runs = {ok, fail};

  const std::string path = dir.str() + "/test.manifest";
  detail::write_manifest(path, m, "k = v\n");
  const RunManifest r = detail::read_manifest(path);
  CHECK(r.config_hash == m.config_hash);
  CHECK(r.tool_version == m.tool_version);
  CHECK(r.outputs == m.outputs);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[0].tuple == 0);
  CHECK(r.runs[0].ok);
  CHECK(r.runs[0].row == ok.row);
  CHECK(r.runs[0].wall_ms == Approx(12.5));
  CHECK(r.runs[1].tuple == 1);
  CHECK_FALSE(r.runs[1].ok);
  CHECK(r.runs[1].error == "step plan: phase cap exceeded");  // newline sanitized

  // a manifest whose stored config no longer matches its hash is rejected
  detail::write_manifest(path, m, "tampered = config\n");
  CHECK_THROWS_WITH(detail::read_manifest(path), ContainsSubstring("corrupt"));
  CHECK_THROWS_AS(detail::read_manifest(dir.str() + "/absent.manifest"), std::runtime_error);

  std::ofstream(dir.str() + "/bad.manifest") << "not a manifest\n";
  CHECK_THROWS_WITH(detail::read_manifest(dir.str() + "/bad.manifest"),
                    ContainsSubstring("unrecognized manifest"));
}

TEST_CASE("launch-power sweep: full grid, determinism, resume") {
  TempDir d1("sweep1"), d2("sweep2");
  ExperimentConfig cfg = tiny_config(d1.str());

  const RunManifest m1 = run_sweep(cfg, 1, false);
  CHECK(m1.computed_count() == 8);  // 2 formats x 1 distance x 2 powers x 2 seeds
  CHECK(m1.failed_count() == 0);
  CHECK(m1.config_hash == experiment_to_config(cfg).hash());

  const auto rows = read_metric_csv(d1.str() + "/sweep.csv");
  REQUIRE(rows.size() == 8);
  std::set<std::tuple<std::string, double, double, std::uint64_t>> seen;
  for (const auto& r : rows) {
    CHECK(r.fiber == "SSMF");
    CHECK(r.distance_km == 40.0);
    CHECK(r.n_symbols == 1024);
    CHECK(std::isfinite(r.snr_db));
    CHECK(r.gmi >= 0.0);
    CHECK(r.gmi <= 9.0);
    seen.insert({r.format, r.distance_km, r.power_dbm, r.seed});
  }
  CHECK(seen.size() == 8);  // every tuple appears exactly once

  // worker count must not change a single byte of the CSV
  cfg.out_dir = d2.str();
  const RunManifest m2 = run_sweep(cfg, 3, false);
  CHECK(m2.computed_count() == 8);
  CHECK(slurp(d1.str() + "/sweep.csv") == slurp(d2.str() + "/sweep.csv"));

  // resume after completion: zero recomputation, identical output bytes
  cfg.out_dir = d1.str();
  const std::string before = slurp(d1.str() + "/sweep.csv");
  const RunManifest m3 = run_sweep(cfg, 2, true);
  CHECK(m3.computed_count() == 0);
  CHECK(slurp(d1.str() + "/sweep.csv") == before);

  // resume under a different config is refused
  ExperimentConfig other = cfg;
  other.powers_dbm = {4.0};
  CHECK_THROWS_WITH(run_sweep(other, 1, true), ContainsSubstring("resume rejected"));

  // a fresh (non-resume) run recomputes everything
  const RunManifest m4 = run_sweep(cfg, 1, false);
  CHECK(m4.computed_count() == 8);
  CHECK(slurp(d1.str() + "/sweep.csv") == before);
}

TEST_CASE("sweep records per-tuple failures and retries them on resume") {
  TempDir dir("sweepfail");
  ExperimentConfig cfg = tiny_config(dir.str());
  cfg.seeds = {1};
  cfg.powers_dbm = {-20.0, 14.0};
  // fixed 2 km segments put the +14 dBm tuples far beyond the configured
  // mean-phase cap, so those runs abort; the -20 dBm tuples stay well below
  cfg.step.adaptive = false;
  cfg.step.fixed_step_km = 2.0;
  cfg.step.max_phase_rad = 1e-3;

  const RunManifest m = run_sweep(cfg, 1, false);
  CHECK(m.computed_count() == 4);
  CHECK(m.failed_count() == 2);
  for (const auto& r : m.runs) {
    if (!r.ok) CHECK_THAT(r.error, ContainsSubstring("nonlinear phase"));
  }
  // the CSV carries only the successful rows
  const auto rows = read_metric_csv(dir.str() + "/sweep.csv");
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) CHECK(r.power_dbm == -20.0);

  // failures are not cached: resume retries exactly the failed tuples
  const RunManifest m2 = run_sweep(cfg, 1, true);
  CHECK(m2.computed_count() == 2);
  CHECK(m2.failed_count() == 2);
}

TEST_CASE("power-fluctuation spectra: curves, gaps, and the constant-modulus control") {
  TempDir dir("psd");
  ExperimentConfig cfg = tiny_config(dir.str());
  const RunManifest m = run_psd(cfg);
  CHECK(m.failed_count() == 0);
  CHECK(m.runs.size() == 3);  // two formats plus the constant-modulus control
  REQUIRE(m.outputs.size() == 2);

  const std::string psd = slurp(dir.str() + "/psd.csv");
  CHECK_THAT(psd, ContainsSubstring("# qcmsim psd csv v1"));
  CHECK_THAT(psd, ContainsSubstring(
                      "freq_ghz,512QCM-QAM,512SP-QAM,const-modulus-control,spm_filter_db,"
                      "xpm_filter_db"));
  CHECK(count_lines(psd) == 2 + cfg.psd_welch_segment);  // comment + header + one row per bin

  // frequency column ascends (plot-ready ordering)
  std::istringstream in(psd);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  double prev = -1e18;
  long rows = 0;
  while (std::getline(in, line)) {
    const double f = std::strtod(line.c_str(), nullptr);
    CHECK(f > prev);
    prev = f;
    ++rows;
  }
  CHECK(rows == cfg.psd_welch_segment);

  const std::string gaps = slurp(dir.str() + "/psd_gaps.csv");
  CHECK_THAT(gaps, ContainsSubstring("se,qcm,sp,qcm_band_db,sp_band_db,gap_db"));
  // one paired row (SE 9); the short record still shows a clearly positive gap
  std::istringstream gin(gaps);
  std::getline(gin, line);
  std::getline(gin, line);
  REQUIRE(std::getline(gin, line));
  CHECK_THAT(line, ContainsSubstring("9,512QCM-QAM,512SP-QAM,"));
  const auto last_comma = line.rfind(',');
  const double gap = std::strtod(line.c_str() + last_comma + 1, nullptr);
  CHECK(gap > 1.0);
  CHECK(gap < 7.0);
}

TEST_CASE("power-fluctuation band statistic is seed-stable") {
  PsdSpec spec;  // 2^16 symbols at the default settings
  const auto fmt = make_format("512QCM-QAM");
  const double a = power_fluctuation_psd(fmt, spec, 11).band_average_db;
  const double b = power_fluctuation_psd(fmt, spec, 12).band_average_db;
  CHECK(std::abs(a - b) < 0.1);
}

TEST_CASE("reach analysis interpolates the threshold crossing at optimal power") {
  TempDir dir("reach");
  ExperimentConfig cfg = tiny_config(dir.str());
  cfg.fiber = nzdsf();
  cfg.seeds = {1};
  cfg.distances_km = {180.0};
  cfg.reach_distances_km = {180.0, 260.0};
  cfg.reach_powers_dbm = {2.0, 4.0};

  const RunManifest m = run_reach(cfg, 1, false);
  CHECK(m.failed_count() == 0);
  CHECK(m.runs.size() == 8);  // 2 formats x 2 distances x 2 powers x 1 seed

  const auto rows = read_metric_csv(dir.str() + "/reach.csv");
  CHECK(rows.size() == 8);

  // at 180 km the link clears the threshold, at 260 km ASE buries it
  const std::string summary = slurp(dir.str() + "/reach_summary.csv");
  std::istringstream in(summary);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  long ok_rows = 0;
  while (std::getline(in, line)) {
    INFO(line);
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    fields.push_back(cur);
    REQUIRE(fields.size() == 5);  // format, se, threshold, reach, status
    CHECK(fields[1] == "9");
    CHECK(std::strtod(fields[2].c_str(), nullptr) == Approx(7.2));
    CHECK(fields[4] == "ok");
    // reach lies inside the sampled bracket
    const double reach = std::strtod(fields[3].c_str(), nullptr);
    CHECK(reach > 180.0);
    CHECK(reach < 260.0);
    ++ok_rows;
  }
  CHECK(ok_rows == 2);

  // the per-distance table records the grid's best power for every format
  const std::string table = slurp(dir.str() + "/reach_table.csv");
  CHECK(count_lines(table) == 2 + 4);  // 2 formats x 2 distances

  // the gain table pairs the two formats of equal spectral efficiency
  const std::string gains = slurp(dir.str() + "/reach_gains.csv");
  std::istringstream gin(gains);
  std::getline(gin, line);
  std::getline(gin, line);
  REQUIRE(std::getline(gin, line));
  CHECK_THAT(line, ContainsSubstring("9,512QCM-QAM,512SP-QAM,"));
}

TEST_CASE("reach analysis reports unbracketed thresholds per format") {
  TempDir dir("reachun");
  ExperimentConfig cfg = tiny_config(dir.str());
  cfg.formats = {"512QCM-QAM"};
  cfg.seeds = {1};
  cfg.reach_distances_km = {40.0, 80.0};
  cfg.reach_powers_dbm = {4.0};

  // short links stay above the 7.2-bit threshold: crossing not sampled
  RunManifest m = run_reach(cfg, 1, false);
  CHECK(m.failed_count() == 0);
  CHECK_THAT(slurp(dir.str() + "/reach_summary.csv"), ContainsSubstring("unbracketed-high"));

  // far past the crossing, amplifier noise keeps every sample below threshold
  cfg.fiber = nzdsf();
  cfg.reach_distances_km = {300.0, 320.0};
  cfg.reach_powers_dbm = {6.0};
  cfg.out_dir = dir.str() + "/low";
  m = run_reach(cfg, 1, false);
  CHECK_THAT(slurp(cfg.out_dir + "/reach_summary.csv"), ContainsSubstring("unbracketed-low"));
  // unbracketed formats contribute no gain rows
  CHECK(count_lines(slurp(cfg.out_dir + "/reach_gains.csv")) == 2);
}

TEST_CASE("circumferential variance measures angular, not radial, spread") {
  const long n = 10;
  DspOutput dsp;
  dsp.tx_x = Eigen::ArrayXcd::Constant(n, std::complex<double>(3.0, 0.0));
  dsp.tx_y = Eigen::ArrayXcd::Constant(n, std::complex<double>(1.0, 0.0));
  dsp.rx_x = dsp.tx_x;
  dsp.rx_y = dsp.tx_y;

  // top decile of 20 pooled points = the first two x-polarization entries
  const double theta = 0.01;
  dsp.rx_x(0) = dsp.tx_x(0) * std::polar(1.0, theta);
  dsp.rx_x(1) = dsp.tx_x(1) * std::polar(1.0, -theta);
  CHECK(circumferential_variance(dsp, 0.1) == Approx(9.0 * theta * theta).epsilon(1e-12));

  // purely radial displacement does not register
  dsp.rx_x(0) = dsp.tx_x(0) * 1.5;
  dsp.rx_x(1) = dsp.tx_x(1) * 0.5;
  CHECK(circumferential_variance(dsp, 0.1) == 0.0);

  CHECK_THROWS_AS(circumferential_variance(dsp, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(circumferential_variance(dsp, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(circumferential_variance(DspOutput{}, 0.1), std::invalid_argument);
}

TEST_CASE("scatter snapshots: back-to-back equals the transmitted points") {
  TempDir dir("scatter");
  ExperimentConfig cfg = tiny_config(dir.str());
  cfg.formats = {"512QCM-QAM"};
  cfg.seeds = {1};
  cfg.scatter_distance_km = 0.0;  // back-to-back
  cfg.scatter_power_dbm = 0.0;

  const RunManifest m = run_scatter(cfg);
  CHECK(m.failed_count() == 0);
  REQUIRE(m.outputs.size() == 2);

  const std::string csv = slurp(dir.str() + "/scatter_512QCM-QAM.csv");
  CHECK(count_lines(csv) == 2 + cfg.n_symbols);

  // recovered symbols coincide with the transmitted constellation points
  Fft fft;
  const auto fmt = make_format("512QCM-QAM");
  const DspOutput dsp = detail::evaluate_dsp(cfg, fmt, 0.0, 0.0, 1, fft);
  const double rms = std::sqrt(((dsp.rx_x - dsp.tx_x).abs2() + (dsp.rx_y - dsp.tx_y).abs2()).mean());
  CHECK(rms < 1e-9);
  CHECK(circumferential_variance(dsp) < 1e-18);

  // the stats table carries the proxy statistic
  CHECK_THAT(slurp(dir.str() + "/scatter_stats.csv"),
             ContainsSubstring("format,seed,distance_km,power_dbm,circumferential_variance"));
}
