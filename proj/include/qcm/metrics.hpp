#pragma once

// Link-quality metrics over aligned symbol pairs: effective SNR, generalized
// mutual information (GMI) under the mismatched isotropic-Gaussian receiver,
// and reach interpolation at a FEC threshold.
//
// GMI conventions.  A 4D symbol carries `bits` labeled bits.  For received
// symbol y the per-bit penalty is log2(1 + L_other/L_true) with
// L_b = sum over constellation points whose bit equals b of
// exp(-||y - c||^2 / N0), where N0 is the noise variance per complex
// dimension (so the 4D mean squared error is 2 N0).  GMI = bits - E[penalty],
// clamped to [0, bits].
//
// Two evaluation paths exist: a Monte-Carlo estimate on measured pairs (noise
// variance taken from the same pairs), and a deterministic Gauss-Hermite
// quadrature for the pure-AWGN channel.  Formats built as paired 2D shells
// evaluate both through a factorized form: the 4D sums split into per-
// polarization partial sums over the shared 2D alphabet, turning the
// M*M/2-point sum into O(M) work per bit.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qcm/constellation.hpp"
#include "qcm/rng.hpp"
#include "qcm/txrx.hpp"

namespace qcm {

// SNR of aligned pairs: signal power over residual error power, both summed
// across polarizations.  All residual error counts as noise (the Gaussian-
// noise view of the link).  Returns +infinity when the error is exactly zero.
// Estimates stabilize around n >= 1e3 pairs.
inline double effective_snr(const DspOutput& d) {
  const Eigen::Index n = d.rx_x.size();
  if (n == 0 || d.tx_x.size() != n || d.tx_y.size() != n || d.rx_y.size() != n)
    throw std::invalid_argument("effective_snr: misaligned symbol sets");
  const double sig = d.tx_x.abs2().sum() + d.tx_y.abs2().sum();
  const double err = (d.rx_x - d.tx_x).abs2().sum() + (d.rx_y - d.tx_y).abs2().sum();
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

namespace detail {

// log2(1 + exp(t)), stable over the whole real line
inline double log2_1p_exp(double t) {
  if (t > 40.0) return t / M_LN2;
  if (t < -40.0) return std::exp(t) / M_LN2;
  return std::log1p(std::exp(t)) / M_LN2;
}

// Map each constellation row to its (x, y) indices in the shared 2D alphabet.
inline void pair_row_indices(const Constellation4D& f, std::vector<int>& ax,
                             std::vector<int>& ay) {
  const auto& P = *f.pair;
  std::map<std::pair<double, double>, int> where;
  for (int j = 0; j < static_cast<int>(P.alphabet.size()); ++j)
    where[{P.alphabet[j].real(), P.alphabet[j].imag()}] = j;
  const int n = f.size();
  ax.resize(n);
  ay.resize(n);
  for (int r = 0; r < n; ++r) {
    const auto fx = where.find({f.points(r, 0), f.points(r, 1)});
    const auto fy = where.find({f.points(r, 2), f.points(r, 3)});
    if (fx == where.end() || fy == where.end())
      throw std::logic_error("pair structure does not match constellation rows");
    ax[r] = fx->second;
    ay[r] = fy->second;
  }
}

// Shifted per-point likelihood kernels exp(-(d^2 - min d^2)/N0) against the
// 2D alphabet; the common shift cancels in every likelihood ratio.
inline void alphabet_kernel(const std::vector<std::complex<double>>& alphabet,
                            std::complex<double> y, double n0,
                            std::vector<double>& out) {
  const int m = static_cast<int>(alphabet.size());
  out.resize(m);
  double dmin = std::numeric_limits<double>::infinity();
  for (int j = 0; j < m; ++j) {
    out[j] = std::norm(y - alphabet[j]);
    dmin = std::min(dmin, out[j]);
  }
  for (int j = 0; j < m; ++j) out[j] = std::exp(-(out[j] - dmin) / n0);
}

// Sum of per-bit penalties for one received 4D symbol of a paired format,
// given the two per-polarization kernels and the true row label.
inline double paired_penalty(const Constellation4D::PairStructure& P,
                             const std::vector<double>& ex,
                             const std::vector<double>& ey,
                             std::uint32_t label) {
  const int M = static_cast<int>(P.alphabet.size());
  const int xb = P.x_bits, yb = P.y_bits;
  const std::uint32_t xlab = label >> yb;
  const std::uint32_t ylab = label & ((1u << yb) - 1u);

  double S[2] = {0, 0}, EX[2] = {0, 0};
  for (int j = 0; j < M; ++j) {
    S[P.y_set[j]] += ey[j];
    EX[P.x_class[j]] += ex[j];
  }
  const int s0 = P.y_set_for_class[0], s1 = P.y_set_for_class[1];

  double total = 0.0;
  for (int k = 0; k < xb; ++k) {
    double A[2][2] = {{0, 0}, {0, 0}};
    const int sh = xb - 1 - k;
    for (int j = 0; j < M; ++j) A[(P.x_labels[j] >> sh) & 1u][P.x_class[j]] += ex[j];
    const int b = (xlab >> sh) & 1u;
    const double lt = A[b][0] * S[s0] + A[b][1] * S[s1];
    const double lo = A[1 - b][0] * S[s0] + A[1 - b][1] * S[s1];
    total += log2_1p_exp(std::log(lo) - std::log(lt));
  }
  for (int k = 0; k < yb; ++k) {
    double T[2][2] = {{0, 0}, {0, 0}};
    const int sh = yb - 1 - k;
    for (int j = 0; j < M; ++j) T[P.y_set[j]][(P.y_sub_label[j] >> sh) & 1u] += ey[j];
    const int b = (ylab >> sh) & 1u;
    const double lt = EX[0] * T[s0][b] + EX[1] * T[s1][b];
    const double lo = EX[0] * T[s0][1 - b] + EX[1] * T[s1][1 - b];
    total += log2_1p_exp(std::log(lo) - std::log(lt));
  }
  return total;
}

// Same penalty over a generic (unpaired) constellation: full 4D point sum.
inline double generic_penalty(const Constellation4D& f,
                              std::complex<double> yx, std::complex<double> yy,
                              double n0, std::uint32_t label,
                              std::vector<double>& e4) {
  const int n = f.size();
  e4.resize(n);
  double dmin = std::numeric_limits<double>::infinity();
  for (int r = 0; r < n; ++r) {
    e4[r] = std::norm(yx - f.x(r)) + std::norm(yy - f.y(r));
    dmin = std::min(dmin, e4[r]);
  }
  for (int r = 0; r < n; ++r) e4[r] = std::exp(-(e4[r] - dmin) / n0);

  double total = 0.0;
  for (int k = 0; k < f.bits; ++k) {
    const int sh = f.bits - 1 - k;
    double lam[2] = {0, 0};
    for (int r = 0; r < n; ++r) lam[(f.labels[r] >> sh) & 1u] += e4[r];
    const int b = (label >> sh) & 1u;
    total += log2_1p_exp(std::log(lam[1 - b]) - std::log(lam[b]));
  }
  return total;
}

}  // namespace detail

// Monte-Carlo GMI of the aligned pairs under the mismatched receiver: the
// isotropic 4D Gaussian noise variance is estimated from the pairs
// themselves.  Requires the transmitted row indices (receive() fills them).
inline double gmi_monte_carlo(const DspOutput& d, const Constellation4D& f) {
  const Eigen::Index n = d.rx_x.size();
  if (n == 0 || d.tx_index.size() != static_cast<size_t>(n))
    throw std::invalid_argument("gmi_monte_carlo: missing transmitted indices");
  const double se = f.bits;
  const double mse =
      ((d.rx_x - d.tx_x).abs2().sum() + (d.rx_y - d.tx_y).abs2().sum()) / n;
  if (mse == 0.0) return se;
  const double n0 = 0.5 * mse;  // per complex dimension

  double total = 0.0;
  if (f.pair) {
    const auto& P = *f.pair;
    std::vector<double> ex, ey;
    for (Eigen::Index i = 0; i < n; ++i) {
      detail::alphabet_kernel(P.alphabet, d.rx_x[i], n0, ex);
      detail::alphabet_kernel(P.alphabet, d.rx_y[i], n0, ey);
      total += detail::paired_penalty(P, ex, ey, f.labels[d.tx_index[i]]);
    }
  } else {
    std::vector<double> e4;
    for (Eigen::Index i = 0; i < n; ++i)
      total += detail::generic_penalty(f, d.rx_x[i], d.rx_y[i], n0,
                                       f.labels[d.tx_index[i]], e4);
  }
  return std::clamp(se - total / static_cast<double>(n), 0.0, se);
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature

// Nodes/weights for E[f(Z)], Z ~ N(0,1): sum_i w_i f(z_i), sum w = 1.
// Golub-Welsch on the symmetric tridiagonal Jacobi matrix.
struct GhqRule {
  Eigen::ArrayXd z, w;
};

inline GhqRule ghq_rule(int order) {
  if (order < 2) throw std::invalid_argument("ghq_rule: order must be >= 2");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k)
    J(k, k - 1) = J(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  GhqRule r;
  r.z = es.eigenvalues().array() * std::sqrt(2.0);
  r.w.resize(order);
  for (int i = 0; i < order; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    r.w[i] = v0 * v0;
  }
  return r;
}

namespace detail {

struct Node2d {
  std::complex<double> offset;  // noise displacement of one polarization
  double w = 0;
};

// Product rule over one complex dimension with noise CN(0, n0); node pairs
// below `prune` (relative to the heaviest) are dropped and the remaining
// weights renormalized, which keeps the rule exact for constants.
inline std::vector<Node2d> ghq_nodes_2d(const GhqRule& rule, double n0,
                                        double prune) {
  const double sr = std::sqrt(0.5 * n0);  // per real dimension
  const int q = static_cast<int>(rule.z.size());
  double wmax = 0.0;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) wmax = std::max(wmax, rule.w[i] * rule.w[j]);
  std::vector<Node2d> nodes;
  double total = 0.0;
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) {
      const double w = rule.w[i] * rule.w[j];
      if (w < prune * wmax) continue;
      nodes.push_back({{sr * rule.z[i], sr * rule.z[j]}, w});
      total += w;
    }
  for (auto& nd : nodes) nd.w /= total;
  return nodes;
}

}  // namespace detail

// Deterministic GMI of the format on the isotropic-AWGN channel at the given
// SNR (4D signal power over 4D noise power).  Separable Gauss-Hermite product
// rule, `order` points per real dimension; `prune` drops negligible node
// weights.  Paired formats use the factorized per-polarization form with
// precomputed partial-sum tables; the generic path costs O(size^2) per node
// pair and suits small formats.
inline double gmi_ghq(const Constellation4D& f, double snr_db, int order = 16,
                      double prune = 1e-8) {
  if (f.size() == 0) throw std::invalid_argument("gmi_ghq: empty constellation");
  const double se = f.bits;
  const double snr = std::pow(10.0, snr_db / 10.0);
  const double mean_e = f.points.squaredNorm() / f.size();
  const double n0 = 0.5 * mean_e / snr;  // per complex dimension
  const GhqRule rule = ghq_rule(order);
  const auto nodes = detail::ghq_nodes_2d(rule, n0, prune);
  const int U = static_cast<int>(nodes.size());

  double acc = 0.0;
  if (f.pair) {
    const auto& P = *f.pair;
    const int M = static_cast<int>(P.alphabet.size());
    const int xb = P.x_bits, yb = P.y_bits;
    const int s0 = P.y_set_for_class[0], s1 = P.y_set_for_class[1];

    // Per (alphabet point, node) partial sums.  X side: class-resolved
    // per-bit sums A and class totals EX.  Y side: subset-resolved per-bit
    // sums T and subset totals S.
    std::vector<double> AX(static_cast<size_t>(M) * U * xb * 4);
    std::vector<double> EXc(static_cast<size_t>(M) * U * 2);
    std::vector<double> TY(static_cast<size_t>(M) * U * yb * 4);
    std::vector<double> SY(static_cast<size_t>(M) * U * 2);
    std::vector<double> kern;
    for (int a = 0; a < M; ++a) {
      for (int u = 0; u < U; ++u) {
        detail::alphabet_kernel(P.alphabet, P.alphabet[a] + nodes[u].offset, n0,
                                kern);
        double* ex2 = &EXc[(static_cast<size_t>(a) * U + u) * 2];
        double* ax = &AX[(static_cast<size_t>(a) * U + u) * xb * 4];
        double* sy2 = &SY[(static_cast<size_t>(a) * U + u) * 2];
        double* ty = &TY[(static_cast<size_t>(a) * U + u) * yb * 4];
        for (int j = 0; j < M; ++j) {
          const double e = kern[j];
          ex2[P.x_class[j]] += e;
          sy2[P.y_set[j]] += e;
          for (int k = 0; k < xb; ++k)
            ax[(k * 2 + ((P.x_labels[j] >> (xb - 1 - k)) & 1u)) * 2 +
               P.x_class[j]] += e;
          for (int k = 0; k < yb; ++k)
            ty[(k * 2 + ((P.y_sub_label[j] >> (yb - 1 - k)) & 1u)) * 2 +
               P.y_set[j]] += e;
        }
      }
    }

    std::vector<int> rax, ray;
    detail::pair_row_indices(f, rax, ray);

    const double ln2 = M_LN2;
    for (int r = 0; r < f.size(); ++r) {
      const int a = rax[r], g = ray[r];
      const std::uint32_t lab = f.labels[r];
      const std::uint32_t xlab = lab >> yb;
      const std::uint32_t ylab = lab & ((1u << yb) - 1u);
      double row_acc = 0.0;
      for (int u = 0; u < U; ++u) {
        const double* ax = &AX[(static_cast<size_t>(a) * U + u) * xb * 4];
        const double* ex2 = &EXc[(static_cast<size_t>(a) * U + u) * 2];
        const double wu = nodes[u].w;
        for (int v = 0; v < U; ++v) {
          const double* ty = &TY[(static_cast<size_t>(g) * U + v) * yb * 4];
          const double* sy2 = &SY[(static_cast<size_t>(g) * U + v) * 2];
          // subset totals seen through the class->subset pairing
          const double sp0 = sy2[s0];
          const double sp1 = sy2[s1];
          // product of (1 + L_other/L_true) across bits, log-flushed to
          // avoid underflow of the denominator product
          double pn = 1.0, pd = 1.0, ln_acc = 0.0;
          for (int k = 0; k < xb; ++k) {
            const int b = (xlab >> (xb - 1 - k)) & 1u;
            const double lt = ax[(k * 2 + b) * 2 + 0] * sp0 +
                              ax[(k * 2 + b) * 2 + 1] * sp1;
            const double lo = ax[(k * 2 + (1 - b)) * 2 + 0] * sp0 +
                              ax[(k * 2 + (1 - b)) * 2 + 1] * sp1;
            pn *= lt + lo;
            pd *= lt;
            if (pd < 1e-280) {
              ln_acc += std::log(pn) - std::log(pd);
              pn = pd = 1.0;
            }
          }
          for (int k = 0; k < yb; ++k) {
            const int b = (ylab >> (yb - 1 - k)) & 1u;
            const double t0b = ty[(k * 2 + b) * 2 + s0];
            const double t1b = ty[(k * 2 + b) * 2 + s1];
            const double t0o = ty[(k * 2 + (1 - b)) * 2 + s0];
            const double t1o = ty[(k * 2 + (1 - b)) * 2 + s1];
            const double lt = ex2[0] * t0b + ex2[1] * t1b;
            const double lo = ex2[0] * t0o + ex2[1] * t1o;
            pn *= lt + lo;
            pd *= lt;
            if (pd < 1e-280) {
              ln_acc += std::log(pn) - std::log(pd);
              pn = pd = 1.0;
            }
          }
          row_acc += wu * nodes[v].w *
                     (ln_acc + std::log(pn) - std::log(pd)) / ln2;
        }
      }
      acc += row_acc;
    }
    acc /= f.size();
  } else {
    std::vector<double> e4;
    for (int r = 0; r < f.size(); ++r) {
      const std::complex<double> cx = f.x(r), cy = f.y(r);
      double row_acc = 0.0;
      for (int u = 0; u < U; ++u)
        for (int v = 0; v < U; ++v)
          row_acc += nodes[u].w * nodes[v].w *
                     detail::generic_penalty(f, cx + nodes[u].offset,
                                             cy + nodes[v].offset, n0,
                                             f.labels[r], e4);
      acc += row_acc;
    }
    acc /= f.size();
  }
  return std::clamp(se - acc, 0.0, se);
}

// ---------------------------------------------------------------------------
// Synthetic observations and reach interpolation

// Uniform symbols of the format plus isotropic complex AWGN at the exact SNR,
// packaged as aligned pairs.  The reference input for GMI cross-validation.
inline DspOutput synthetic_awgn(const Constellation4D& f, double snr_db,
                                long n_symbols, std::uint64_t seed) {
  if (n_symbols < 1) throw std::invalid_argument("synthetic_awgn: empty draw");
  const double snr = std::pow(10.0, snr_db / 10.0);
  const double mean_e = f.points.squaredNorm() / f.size();
  const double n0 = 0.5 * mean_e / snr;
  CounterRng rng(seed, 0xA36);
  DspOutput d;
  d.tx_x.resize(n_symbols);
  d.tx_y.resize(n_symbols);
  d.rx_x.resize(n_symbols);
  d.rx_y.resize(n_symbols);
  d.tx_index.resize(n_symbols);
  for (long i = 0; i < n_symbols; ++i) {
    const auto r = static_cast<Eigen::Index>(rng.uniform_int(f.size()));
    d.tx_index[i] = r;
    d.tx_x[i] = f.x(static_cast<int>(r));
    d.tx_y[i] = f.y(static_cast<int>(r));
    d.rx_x[i] = d.tx_x[i] + rng.gaussian_complex(n0);
    d.rx_y[i] = d.tx_y[i] + rng.gaussian_complex(n0);
  }
  return d;
}

struct ReachResult {
  double threshold_gmi = 0;
  double reach_km = 0;
  std::vector<std::pair<double, double>> samples;  // (distance, GMI), sorted
};

// Distance at which the piecewise-linear GMI-versus-distance curve crosses
// the threshold, taken at the farthest sampled crossing.  Throws
// std::out_of_range when the samples do not bracket the threshold.
inline ReachResult reach_at_threshold(std::vector<std::pair<double, double>> samples,
                                      double threshold_gmi) {
  if (samples.size() < 2)
    throw std::invalid_argument("reach_at_threshold: need at least two samples");
  std::sort(samples.begin(), samples.end());
  for (size_t i = 1; i < samples.size(); ++i)
    if (samples[i].first == samples[i - 1].first)
      throw std::invalid_argument("reach_at_threshold: duplicate distance");

  long last_ok = -1;
  for (size_t i = 0; i < samples.size(); ++i)
    if (samples[i].second >= threshold_gmi) last_ok = static_cast<long>(i);
  if (last_ok < 0)
    throw std::out_of_range(
        "reach_at_threshold: every sample is below the threshold");
  if (last_ok == static_cast<long>(samples.size()) - 1)
    throw std::out_of_range(
        "reach_at_threshold: threshold not bracketed, link reaches past the "
        "sampled distances");

  const auto [d0, g0] = samples[static_cast<size_t>(last_ok)];
  const auto [d1, g1] = samples[static_cast<size_t>(last_ok) + 1];
  const double reach = d0 + (g0 - threshold_gmi) / (g0 - g1) * (d1 - d0);
  return {threshold_gmi, reach, std::move(samples)};
}

// ---------------------------------------------------------------------------
// Result rows

struct MetricReport {
  std::string format, fiber;
  double distance_km = 0;
  double power_dbm = 0;
  std::uint64_t seed = 0;
  long n_symbols = 0;
  double snr_db = 0;
  double gmi = 0;
};

inline std::string metric_csv_header() {
  return "format,fiber,distance_km,power_dbm,seed,n_symbols,snr_db,gmi";
}

inline std::string to_csv_row(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%llu,%ld,%.17g,%.17g",
                r.format.c_str(), r.fiber.c_str(), r.distance_km, r.power_dbm,
                static_cast<unsigned long long>(r.seed), r.n_symbols, r.snr_db,
                r.gmi);
  return buf;
}

}  // namespace qcm
