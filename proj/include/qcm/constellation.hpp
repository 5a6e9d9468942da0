#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcm {

using cplx = std::complex<double>;

inline std::uint32_t gray_code(std::uint32_t i) { return i ^ (i >> 1); }

// ---------------------------------------------------------------------------
// 2D constellation: points with Gray labels, one polarization's alphabet.
// ---------------------------------------------------------------------------
struct Constellation2D {
  std::vector<cplx> points;
  std::vector<std::uint32_t> labels;  // one per point, `bits` bits wide
  int bits = 0;

  int size() const { return static_cast<int>(points.size()); }

  double mean_energy() const {
    double s = 0;
    for (const auto& p : points) s += std::norm(p);
    return s / static_cast<double>(points.size());
  }
};

namespace detail {

// Integer-grid QAM before normalization. Even orders are square; odd orders
// start from a 2^((m+1)/2) x 2^((m-1)/2) Gray rectangle, and for m >= 5 the
// outermost columns fold into caps above and below the core, giving the usual
// cross shape. The fold keeps each moved point's label, so the result is
// Gray on the rectangle and quasi-Gray across the fold seams.
struct GridQam {
  std::vector<int> cx, cy;            // odd-integer coordinates
  std::vector<std::uint32_t> labels;
  int bits = 0;
};

inline GridQam qam_grid(int bits) {
  if (bits < 2 || bits > 8)
    throw std::invalid_argument("qam order: bits per symbol must be in [2, 8]");
  const int ki = (bits + 1) / 2, kq = bits / 2;
  const int ni = 1 << ki, nq = 1 << kq;
  GridQam g;
  g.bits = bits;
  for (int i = 0; i < ni; ++i) {
    for (int q = 0; q < nq; ++q) {
      g.cx.push_back(2 * i - (ni - 1));
      g.cy.push_back(2 * q - (nq - 1));
      g.labels.push_back((gray_code(static_cast<std::uint32_t>(i)) << kq) |
                         gray_code(static_cast<std::uint32_t>(q)));
    }
  }
  if (bits % 2 == 1 && bits >= 5) {
    const int keep = 3 * ni / 4 - 1;  // cross half-width
    for (std::size_t n = 0; n < g.cx.size(); ++n) {
      int x = g.cx[n], y = g.cy[n];
      if (std::abs(x) > keep) {
        g.cx[n] = (x > 0 ? 1 : -1) * (ni / 2 - std::abs(y));
        g.cy[n] = (y > 0 ? 1 : -1) * (2 * (keep + 1) - std::abs(x));
      }
    }
  }
  return g;
}

}  // namespace detail

// Gray-labeled M-QAM (square for even bits, cross for odd bits >= 5,
// rectangular for bits == 3), normalized to unit average energy.
inline Constellation2D make_qam(int bits) {
  auto g = detail::qam_grid(bits);
  double e = 0;
  for (std::size_t n = 0; n < g.cx.size(); ++n)
    e += double(g.cx[n]) * g.cx[n] + double(g.cy[n]) * g.cy[n];
  const double scale = 1.0 / std::sqrt(e / static_cast<double>(g.cx.size()));
  Constellation2D c;
  c.bits = bits;
  c.labels = g.labels;
  c.points.reserve(g.cx.size());
  for (std::size_t n = 0; n < g.cx.size(); ++n)
    c.points.emplace_back(scale * g.cx[n], scale * g.cy[n]);
  return c;
}

// ---------------------------------------------------------------------------
// Energy shells: indices of the lower/upper half of a constellation sorted by
// symbol energy. Ties are broken lexicographically (real part, then imaginary
// part), which makes the partition deterministic even when an energy level
// straddles the boundary.
// ---------------------------------------------------------------------------
struct ShellPartition {
  std::vector<int> inner, outer;
};

inline ShellPartition split_energy_shells(const Constellation2D& c) {
  const int n = c.size();
  if (n % 2 != 0) throw std::invalid_argument("split_energy_shells: point count must be even");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ea = std::norm(c.points[a]), eb = std::norm(c.points[b]);
    if (ea != eb) return ea < eb;
    if (c.points[a].real() != c.points[b].real()) return c.points[a].real() < c.points[b].real();
    return c.points[a].imag() < c.points[b].imag();
  });
  ShellPartition s;
  s.inner.assign(order.begin(), order.begin() + n / 2);
  s.outer.assign(order.begin() + n / 2, order.end());
  return s;
}

// ---------------------------------------------------------------------------
// 4D constellation with per-point bit labels.
//
// Both built-in families share one structure: the X polarization carries a
// full Gray-labeled M-QAM symbol, whose class (energy shell, or lattice
// parity) selects which M/2-point subset the Y polarization draws from; the
// Y symbol carries the remaining bits-1 bits as a Gray sequence along that
// subset ordered by (angle, radius). `pair` records this structure so the
// demapper can factor 4D sums into 2D sums; it is absent for imported tables.
// ---------------------------------------------------------------------------
struct Constellation4D {
  std::string name;
  Eigen::MatrixX4d points;            // columns: Re(x), Im(x), Re(y), Im(y)
  std::vector<std::uint32_t> labels;  // `bits` bits, distinct
  int bits = 0;                       // information bits per 4D symbol

  struct PairStructure {
    std::vector<cplx> alphabet;              // 2D alphabet, shared by X and Y
    std::vector<std::uint32_t> x_labels;     // Gray label of each alphabet point
    std::vector<std::uint8_t> x_class;       // class id (0/1) of each point as an X symbol
    std::vector<std::uint8_t> y_set;         // subset id (0/1) of each point as a Y symbol
    std::vector<std::uint32_t> y_sub_label;  // within-subset Gray label (x_bits-1 bits)
    std::uint8_t y_set_for_class[2] = {0, 1};  // X class -> Y subset
    int x_bits = 0, y_bits = 0;
  };
  std::optional<PairStructure> pair;

  int size() const { return static_cast<int>(points.rows()); }
  cplx x(int i) const { return {points(i, 0), points(i, 1)}; }
  cplx y(int i) const { return {points(i, 2), points(i, 3)}; }
  double energy(int i) const { return points.row(i).squaredNorm(); }
};

namespace detail {

// Exact angular order on integer grid points, matching atan2's (-pi, pi]
// convention: lower half-plane first, then the positive real axis, upper
// half-plane, negative real axis. Within an open half-plane the cross
// product decides; collinear rays fall through to (radius, x, y). Integer
// arithmetic keeps the order independent of scaling and platform rounding.
inline bool ring_less(int ax, int ay, int bx, int by) {
  auto half = [](int x, int y) { return y < 0 ? 0 : (y == 0 ? (x > 0 ? 1 : 3) : 2); };
  const int ha = half(ax, ay), hb = half(bx, by);
  if (ha != hb) return ha < hb;
  const long long cross = 1LL * ax * by - 1LL * ay * bx;
  if (cross != 0) return cross > 0;  // a strictly clockwise of b -> smaller angle
  const long long ra = 1LL * ax * ax + 1LL * ay * ay, rb = 1LL * bx * bx + 1LL * by * by;
  if (ra != rb) return ra < rb;
  if (ax != bx) return ax < bx;
  return ay < by;
}

// Order `idx` by (angle, then radius) on the integer grid. Gray codes
// assigned along this ring give adjacent points (and the wrap-around pair)
// single-bit label transitions.
inline void ring_sort(const GridQam& grid, std::vector<int>& idx) {
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return ring_less(grid.cx[a], grid.cy[a], grid.cx[b], grid.cy[b]);
  });
}

// Assemble the paired 4D constellation from a classified 2D alphabet.
inline Constellation4D assemble_paired(const Constellation2D& qam, const GridQam& grid,
                                       const std::vector<std::uint8_t>& x_class,
                                       const std::uint8_t y_set_for_class[2],
                                       std::string name) {
  const int m = qam.bits, M = qam.size();
  std::vector<std::vector<int>> sets(2);
  for (int i = 0; i < M; ++i) sets[x_class[i]].push_back(i);
  if (sets[0].size() != sets[1].size())
    throw std::invalid_argument("paired constellation: classes must split the alphabet evenly");
  for (auto& s : sets) ring_sort(grid, s);

  Constellation4D c;
  c.name = std::move(name);
  c.bits = 2 * m - 1;
  c.points.resize(M * (M / 2), 4);
  c.labels.resize(static_cast<std::size_t>(M) * (M / 2));

  Constellation4D::PairStructure ps;
  ps.alphabet = qam.points;
  ps.x_labels = qam.labels;
  ps.x_class = x_class;
  ps.y_set.resize(M);
  ps.y_sub_label.resize(M);
  ps.y_set_for_class[0] = y_set_for_class[0];
  ps.y_set_for_class[1] = y_set_for_class[1];
  ps.x_bits = m;
  ps.y_bits = m - 1;
  for (int s = 0; s < 2; ++s)
    for (std::size_t r = 0; r < sets[s].size(); ++r) {
      ps.y_set[sets[s][r]] = static_cast<std::uint8_t>(s);
      ps.y_sub_label[sets[s][r]] = gray_code(static_cast<std::uint32_t>(r));
    }

  int row = 0;
  for (int i = 0; i < M; ++i) {
    const auto& partners = sets[ps.y_set_for_class[x_class[i]]];
    for (int yi : partners) {
      c.points(row, 0) = qam.points[i].real();
      c.points(row, 1) = qam.points[i].imag();
      c.points(row, 2) = qam.points[yi].real();
      c.points(row, 3) = qam.points[yi].imag();
      c.labels[row] = (qam.labels[i] << (m - 1)) | ps.y_sub_label[yi];
      ++row;
    }
  }
  c.pair = std::move(ps);

  // normalize to unit average 4D energy
  const double e = c.points.squaredNorm() / static_cast<double>(c.size());
  c.points *= 1.0 / std::sqrt(e);
  for (auto& p : c.pair->alphabet) p *= 1.0 / std::sqrt(e);
  return c;
}

}  // namespace detail

// Shell-paired family: X is a full M-QAM symbol whose energy shell picks the
// complementary shell for Y, so a low-energy X always rides with a high-energy
// Y and vice versa. M * M/2 points, 2m-1 bits per 4D symbol.
inline Constellation4D make_qcm_qam(int bits_per_pol) {
  auto grid = detail::qam_grid(bits_per_pol);
  auto qam = make_qam(bits_per_pol);
  auto shells = split_energy_shells(qam);
  std::vector<std::uint8_t> cls(qam.size());
  for (int i : shells.inner) cls[i] = 0;
  for (int i : shells.outer) cls[i] = 1;
  const std::uint8_t complement[2] = {1, 0};
  const long n = static_cast<long>(qam.size()) * (qam.size() / 2);
  return detail::assemble_paired(qam, grid, cls, complement, std::to_string(n) + "QCM-QAM");
}

// Single-parity family: the PM-M-QAM product restricted to even total lattice
// parity (sum of the four integer grid offsets even). Equivalently: X's pair
// parity picks the equal-parity half of the alphabet for Y. Half the product's
// points, and the minimum squared distance doubles.
inline Constellation4D make_sp_qam(int bits_per_pol) {
  auto grid = detail::qam_grid(bits_per_pol);
  auto qam = make_qam(bits_per_pol);
  std::vector<std::uint8_t> cls(qam.size());
  for (int i = 0; i < qam.size(); ++i) {
    // (cx + cy)/2 = u1 + u2 + 1 for odd coordinates c = 2u + 1
    const int half = (grid.cx[i] + grid.cy[i]) / 2;
    cls[i] = static_cast<std::uint8_t>(((half + 1) % 2 + 2) % 2);
  }
  const std::uint8_t same[2] = {0, 1};
  const long n = static_cast<long>(qam.size()) * (qam.size() / 2);
  return detail::assemble_paired(qam, grid, cls, same, std::to_string(n) + "SP-QAM");
}

// Full polarization-multiplexed product (no coupling): M^2 points, 2m bits.
// Used as the uncoupled baseline in energy statistics and metric tests.
inline Constellation4D make_pm_product(int bits_per_pol) {
  auto qam = make_qam(bits_per_pol);
  const int m = qam.bits, M = qam.size();
  Constellation4D c;
  c.name = "PM-" + std::to_string(M) + "QAM";
  c.bits = 2 * m;
  c.points.resize(static_cast<long>(M) * M, 4);
  c.labels.resize(static_cast<std::size_t>(M) * M);
  int row = 0;
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j) {
      c.points(row, 0) = qam.points[i].real();
      c.points(row, 1) = qam.points[i].imag();
      c.points(row, 2) = qam.points[j].real();
      c.points(row, 3) = qam.points[j].imag();
      c.labels[row] = (qam.labels[i] << m) | qam.labels[j];
      ++row;
    }
  const double e = c.points.squaredNorm() / static_cast<double>(c.size());
  c.points *= 1.0 / std::sqrt(e);
  return c;
}

// Scale to unit average 4D symbol energy. Idempotent.
inline void normalize(Constellation4D& c) {
  if (c.size() == 0) throw std::invalid_argument("normalize: empty constellation");
  const double e = c.points.squaredNorm() / static_cast<double>(c.size());
  const double s = 1.0 / std::sqrt(e);
  c.points *= s;
  if (c.pair)
    for (auto& p : c.pair->alphabet) p *= s;
}

// ---------------------------------------------------------------------------
// Statistics, mapping, slicing
// ---------------------------------------------------------------------------
struct EnergyStats {
  double mean = 0, var = 0, min = 0, max = 0;
};

inline EnergyStats energy_stats(const Constellation4D& c) {
  EnergyStats s;
  const int n = c.size();
  if (n == 0) throw std::invalid_argument("energy_stats: empty constellation");
  double m1 = 0, m2 = 0;
  s.min = s.max = c.energy(0);
  for (int i = 0; i < n; ++i) {
    const double e = c.energy(i);
    m1 += e;
    m2 += e * e;
    s.min = std::min(s.min, e);
    s.max = std::max(s.max, e);
  }
  s.mean = m1 / n;
  s.var = m2 / n - s.mean * s.mean;
  return s;
}

// label value -> point index
inline std::vector<int> label_lookup(const Constellation4D& c) {
  std::vector<int> lut(static_cast<std::size_t>(1) << c.bits, -1);
  for (int i = 0; i < c.size(); ++i) {
    const std::uint32_t l = c.labels[i];
    if (l >= lut.size() || lut[l] != -1)
      throw std::invalid_argument("label table is not a bijection");
    lut[l] = i;
  }
  return lut;
}

// Map a bit stream (MSB of each label first) to point indices. The stream
// length must be a whole number of labels.
inline std::vector<int> map_bits(const Constellation4D& c, const std::vector<std::uint8_t>& bits) {
  if (bits.size() % static_cast<std::size_t>(c.bits) != 0)
    throw std::invalid_argument("map_bits: bit count is not a multiple of bits per symbol");
  const auto lut = label_lookup(c);
  std::vector<int> out(bits.size() / c.bits);
  std::size_t pos = 0;
  for (auto& idx : out) {
    std::uint32_t v = 0;
    for (int b = 0; b < c.bits; ++b) v = (v << 1) | bits[pos++];
    idx = lut[v];
  }
  return out;
}

// Index of the nearest point in Euclidean 4D distance; first (lowest) index
// wins ties.
inline int nearest_point(const Constellation4D& c, const Eigen::RowVector4d& p) {
  int best = 0;
  double bd = (c.points.row(0) - p).squaredNorm();
  for (int i = 1; i < c.size(); ++i) {
    const double d = (c.points.row(i) - p).squaredNorm();
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Plain-text table format
//
//   # 4D constellation table v1
//   # name: <name>
//   # bits: <bits per symbol>
//   # points: <count>
//   # columns: xr xi yr yi label
//   <xr> <xi> <yr> <yi> <bit string>
//
// Coordinates are %.17g so the table round-trips doubles exactly.
// ---------------------------------------------------------------------------
inline void write_constellation(std::ostream& os, const Constellation4D& c) {
  os << "# 4D constellation table v1\n";
  os << "# name: " << c.name << "\n";
  os << "# bits: " << c.bits << "\n";
  os << "# points: " << c.size() << "\n";
  os << "# columns: xr xi yr yi label\n";
  char buf[128];
  for (int i = 0; i < c.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g ", c.points(i, 0), c.points(i, 1),
                  c.points(i, 2), c.points(i, 3));
    os << buf;
    for (int b = c.bits - 1; b >= 0; --b) os << ((c.labels[i] >> b) & 1u);
    os << "\n";
  }
}

inline Constellation4D read_constellation(std::istream& is) {
  Constellation4D c;
  long expected = -1;
  std::vector<std::array<double, 4>> pts;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto grab = [&](const char* key) -> std::string {
        const std::string k = std::string("# ") + key + ":";
        if (line.rfind(k, 0) != 0) return {};
        auto v = line.substr(k.size());
        const auto a = v.find_first_not_of(" \t");
        return a == std::string::npos ? std::string{} : v.substr(a);
      };
      if (auto v = grab("name"); !v.empty()) c.name = v;
      if (auto v = grab("bits"); !v.empty()) c.bits = std::stoi(v);
      if (auto v = grab("points"); !v.empty()) expected = std::stol(v);
      continue;
    }
    std::istringstream ls(line);
    std::array<double, 4> p{};
    std::string bitstr;
    if (!(ls >> p[0] >> p[1] >> p[2] >> p[3] >> bitstr))
      throw std::invalid_argument("constellation table: malformed row: " + line);
    std::uint32_t v = 0;
    for (char ch : bitstr) {
      if (ch != '0' && ch != '1')
        throw std::invalid_argument("constellation table: bad label bits: " + bitstr);
      v = (v << 1) | static_cast<std::uint32_t>(ch - '0');
    }
    if (c.bits > 0 && static_cast<int>(bitstr.size()) != c.bits)
      throw std::invalid_argument("constellation table: label width mismatch");
    pts.push_back(p);
    c.labels.push_back(v);
  }
  if (c.bits <= 0) throw std::invalid_argument("constellation table: missing bits header");
  if (expected >= 0 && expected != static_cast<long>(pts.size()))
    throw std::invalid_argument("constellation table: point count mismatch");
  c.points.resize(static_cast<long>(pts.size()), 4);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int k = 0; k < 4; ++k) c.points(static_cast<long>(i), k) = pts[i][k];
  label_lookup(c);  // validates bijectivity
  return c;
}

// ---------------------------------------------------------------------------
// Built-in format registry
// ---------------------------------------------------------------------------
inline const std::vector<std::string>& builtin_format_names() {
  static const std::vector<std::string> names = {
      "512QCM-QAM", "2048QCM-QAM", "8192QCM-QAM", "512SP-QAM", "2048SP-QAM", "8192SP-QAM",
  };
  return names;
}

inline Constellation4D make_format(const std::string& name) {
  if (name == "512QCM-QAM") return make_qcm_qam(5);
  if (name == "2048QCM-QAM") return make_qcm_qam(6);
  if (name == "8192QCM-QAM") return make_qcm_qam(7);
  if (name == "512SP-QAM") return make_sp_qam(5);
  if (name == "2048SP-QAM") return make_sp_qam(6);
  if (name == "8192SP-QAM") return make_sp_qam(7);
  throw std::invalid_argument("unknown format: " + name);
}

}  // namespace qcm
