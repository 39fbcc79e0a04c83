#pragma once

// Quantitative evaluation: state/energy errors, one-sided amplitude spectra,
// ringdown frequency/damping extraction, and initial-condition sweeps.

#include <fftw3.h>

#include <string>

#include "lagrom/integrate.hpp"
#include "lagrom/models.hpp"
#include "lagrom/reduce.hpp"
#include "lagrom/rom.hpp"

namespace lagrom::analyze {

struct ErrorReport {
  double train = -1.0;
  double val = -1.0;
  double test = -1.0;
  int r = 0;
  std::string kind;
  std::uint64_t seed = 0;
};

inline double relative_state_error(const Mat& Q_ref,
                                   const reduce::PodBasis& basis,
                                   const Mat& Qhat_rom) {
  if (Qhat_rom.rows() != basis.r || Q_ref.rows() != basis.V_r.rows() ||
      Q_ref.cols() != Qhat_rom.cols())
    throw DimensionMismatch("relative_state_error: misaligned inputs");
  const double denom = Q_ref.norm();
  if (denom == 0.0)
    throw std::invalid_argument("relative_state_error: zero reference");
  return (Q_ref - basis.V_r * Qhat_rom).norm() / denom;
}

inline Vec energy_error_series(const integrate::SecondOrderSystem& sys,
                               const integrate::Trajectory& traj) {
  if (!sys.energy)
    throw std::invalid_argument("energy_error_series: system has no energy");
  Vec out(traj.steps());
  const double e0 = sys.energy(traj.Q.col(0), traj.V.col(0));
  for (int k = 0; k < traj.steps(); ++k)
    out(k) = std::abs(sys.energy(traj.Q.col(k), traj.V.col(k)) - e0);
  return out;
}

struct Spectrum {
  Vec frequency;  // Hz
  Vec amplitude;  // a pure sinusoid of amplitude A peaks at A
};

// One-sided amplitude spectrum. No window by default; the Hann option is
// coherent-gain compensated for isolated tones.
inline Spectrum amplitude_spectrum(const Vec& signal, double fs,
                                   bool hann = false) {
  const int N = int(signal.size());
  if (N < 2) throw std::invalid_argument("amplitude_spectrum: signal too short");
  if (fs <= 0.0) throw std::invalid_argument("amplitude_spectrum: bad fs");
  std::vector<double> in(static_cast<std::size_t>(N));
  double gain = 1.0;
  if (hann) {
    double wsum = 0.0;
    for (int k = 0; k < N; ++k) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * M_PI * k / (N - 1)));
      in[std::size_t(k)] = signal(k) * w;
      wsum += w;
    }
    gain = wsum / double(N);
  } else {
    for (int k = 0; k < N; ++k) in[std::size_t(k)] = signal(k);
  }
  const int M = N / 2 + 1;
  std::vector<fftw_complex> out(static_cast<std::size_t>(M));
  fftw_plan plan =
      fftw_plan_dft_r2c_1d(N, in.data(), out.data(), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);

  Spectrum sp;
  sp.frequency.resize(M);
  sp.amplitude.resize(M);
  for (int k = 0; k < M; ++k) {
    sp.frequency(k) = fs * double(k) / double(N);
    const double mag =
        std::hypot(out[std::size_t(k)][0], out[std::size_t(k)][1]) / double(N);
    const bool interior = k > 0 && !(N % 2 == 0 && k == M - 1);
    sp.amplitude(k) = (interior ? 2.0 : 1.0) * mag / gain;
  }
  return sp;
}

struct InsufficientCycles : std::runtime_error {
  int peaks_found;
  explicit InsufficientCycles(int n)
      : std::runtime_error("ringdown: only " + std::to_string(n) +
                           " positive peaks found (need >= 3)"),
        peaks_found(n) {}
};

struct RingdownCurve {
  std::vector<double> time;        // per adjacent-peak pair (left peak time)
  std::vector<double> amplitude;   // interpolated peak amplitude
  std::vector<double> frequency;   // Hz, from the peak spacing
  std::vector<double> damping;     // log-decrement damping ratio
  std::vector<double> energy;      // filled by the caller
};

// Successive positive peaks with three-point quadratic interpolation;
// damping from the logarithmic decrement between adjacent peaks.
inline RingdownCurve ringdown_analysis(const Vec& signal, double fs) {
  if (fs <= 0.0) throw std::invalid_argument("ringdown_analysis: bad fs");
  std::vector<double> pk_t, pk_a;
  for (int k = 1; k + 1 < signal.size(); ++k) {
    if (!(signal(k) > 0.0)) continue;
    if (!(signal(k) >= signal(k - 1) && signal(k) > signal(k + 1))) continue;
    const double ym = signal(k - 1), y0 = signal(k), yp = signal(k + 1);
    const double curv = ym - 2.0 * y0 + yp;
    double d = 0.0, a = y0;
    if (curv < 0.0) {
      d = 0.5 * (ym - yp) / curv;
      a = y0 - 0.25 * (ym - yp) * d;
    }
    pk_t.push_back((double(k) + d) / fs);
    pk_a.push_back(a);
  }
  if (pk_t.size() < 3) throw InsufficientCycles(int(pk_t.size()));

  RingdownCurve curve;
  for (std::size_t i = 0; i + 1 < pk_t.size(); ++i) {
    const double dt = pk_t[i + 1] - pk_t[i];
    if (!(dt > 0.0)) continue;
    const double delta = std::log(pk_a[i] / pk_a[i + 1]);
    curve.time.push_back(pk_t[i]);
    curve.amplitude.push_back(pk_a[i]);
    curve.frequency.push_back(1.0 / dt);
    curve.damping.push_back(delta / std::sqrt(4.0 * M_PI * M_PI + delta * delta));
    curve.energy.push_back(0.0);
  }
  return curve;
}

inline Vec kinetic_energy_proxy(const Mat& V, double total_mass) {
  const double m = total_mass / double(V.rows());
  Vec out(V.cols());
  for (int k = 0; k < V.cols(); ++k) out(k) = 0.5 * m * V.col(k).squaredNorm();
  return out;
}

struct SweepCell {
  Vec nu;
  double error = -1.0;
  bool ok = false;
  std::string message;
};

// the 27 modal-velocity initial conditions of the rod study
inline std::vector<Vec> default_ic_grid() {
  const double g1[] = {5.0e-2, 8.75e-2, 1.25e-1};
  const double g2[] = {1.0e-2, 3.0e-2, 5.0e-2};
  const double g3[] = {4.0e-2, 5.75e-2, 1.25e-1};
  std::vector<Vec> grid;
  for (double a : g1)
    for (double b : g2)
      for (double c : g3) {
        Vec nu(3);
        nu << a, b, c;
        grid.push_back(nu);
      }
  return grid;
}

// FOM-vs-ROM relative state error per initial condition over the full
// horizon; failures are recorded per cell without aborting the sweep.
inline std::vector<SweepCell> generalization_sweep(
    const models::MechanicalFom& fom, const rom::LagrangianRom& lrom,
    const std::vector<Vec>& ic_grid, const integrate::NewmarkConfig& cfg,
    double T) {
  auto fom_sys = models::fom_second_order(fom);
  auto rom_sys = rom::as_second_order(lrom);
  std::vector<SweepCell> cells;
  cells.reserve(ic_grid.size());
  for (const Vec& nu : ic_grid) {
    SweepCell cell;
    cell.nu = nu;
    try {
      auto [q0, v0] = models::modal_initial_condition(fom, nu);
      auto full = integrate::simulate(fom_sys, cfg, q0, v0, T);
      auto red = integrate::simulate(rom_sys, cfg,
                                     lrom.basis.V_r.transpose() * q0,
                                     lrom.basis.V_r.transpose() * v0, T);
      cell.error = relative_state_error(full.Q, lrom.basis, red.Q);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.message = e.what();
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace lagrom::analyze
