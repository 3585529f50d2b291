/* Copyright 2026 The rqoc Authors. All Rights Reserved.
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Bragg beamsplitter models in the momentum basis.
//
// Time is measured in units of 1/omega_r and the control u is the light-shift
// amplitude in units of omega_r. Level n carries momentum 2n hbar k and has
// kinetic energy (2n + delta)^2 with delta = k/k0 the Doppler offset; the
// standing wave couples neighbouring levels with strength gamma u / 2.
//
// The folded design model keeps only nonnegative levels (symmetric
// subspace), which doubles the 0 <-> 1 coupling weight to sqrt(2)/2. Doppler
// dependence enters linearly through delta * diag(4j); the dropped delta^2
// term is a global phase. Folding is exact only at delta = 0: a Doppler shift
// moves +n and -n in opposite directions and mixes the symmetric and
// antisymmetric combinations. Robust designs over a Doppler interval
// therefore use the signed 2N+1 level basis by default, with the same linear
// delta * diag(4n) term, which is exact up to the global phase. Verification
// always uses the signed model.

#ifndef RQOC_BRAGG_HPP
#define RQOC_BRAGG_HPP

#include "rqoc/ensemble.hpp"
#include "rqoc/parallel.hpp"
#include "rqoc/propagator.hpp"

#include <chrono>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

namespace rqoc {

enum class DesignBasis {
  Auto,    // folded when the Doppler interval is {0}, signed otherwise
  Folded,  // N + 1 nonnegative levels
  Signed,  // 2N + 1 levels n = -N..N
};

struct BraggConfig {
  int n0 = 1;
  int truncation = 0;  // N; 0 selects 18 + 2 n0
  double doppler_min = 0.0;
  double doppler_max = 0.0;
  double intensity_min = 1.0;
  double intensity_max = 1.0;
  int doppler_degree = 0;
  int intensity_degree = 0;
  ExpansionMode mode = ExpansionMode::Legendre;
  double amplitude_bound = 30.0;
  double horizon = 2.0 * std::numbers::pi;
  int steps = 630;
  DesignBasis basis = DesignBasis::Auto;

  int order() const { return truncation > 0 ? truncation : 18 + 2 * n0; }
  bool signed_design() const {
    return basis == DesignBasis::Signed ||
           (basis == DesignBasis::Auto && !(doppler_min == 0.0 && doppler_max == 0.0));
  }
  /// Physical dimension of the design model.
  Index design_dim() const { return signed_design() ? 2 * order() + 1 : order() + 1; }
  TimeGrid grid() const { return {horizon, steps}; }

  /// All violations, empty when valid.
  std::vector<std::string> diagnostics() const {
    std::vector<std::string> out;
    if (n0 < 1) out.emplace_back("target index must be >= 1");
    if (truncation < 0) out.emplace_back("truncation order must be nonnegative");
    if (n0 >= 1 && order() <= n0) out.emplace_back("truncation order must exceed the target index");
    if (!(doppler_min <= 0.0 && doppler_max >= 0.0))
      out.emplace_back("doppler interval must contain 0");
    if (!(doppler_min > -2.0 && doppler_max < 2.0)) out.emplace_back("doppler interval must lie inside (-2, 2)");
    if (!(intensity_min <= 1.0 && intensity_max >= 1.0))
      out.emplace_back("intensity interval must contain 1");
    if (!(intensity_min > 0.0)) out.emplace_back("intensity interval must be positive");
    if (doppler_degree < 0 || intensity_degree < 0) out.emplace_back("degrees must be nonnegative");
    if (!(amplitude_bound > 0.0) || !std::isfinite(amplitude_bound))
      out.emplace_back("amplitude bound must be positive");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) out.emplace_back("horizon must be positive");
    if (steps < 1) out.emplace_back("step count must be positive");
    return out;
  }

  void validate() const {
    const auto d = diagnostics();
    if (!d.empty()) throw std::invalid_argument("BraggConfig: " + d.front());
  }

  ParameterDomain domain() const {
    ParameterDomain d;
    d.mode = mode;
    d.specs = {{doppler_min, doppler_max, doppler_degree}, {intensity_min, intensity_max, intensity_degree}};
    return d;
  }
};

/// Physical matrices of the folded design model, dimension N + 1.
struct FoldedBraggModel {
  RMatrix kinetic;  // diag((2j)^2)
  RMatrix doppler;  // diag(4j)
  RMatrix coupling;  // tridiagonal, sqrt(2)/2 then 1/2

  explicit FoldedBraggModel(int order) {
    if (order < 1) throw std::invalid_argument("FoldedBraggModel: order must be positive");
    const Index n = order + 1;
    kinetic = RMatrix::Zero(n, n);
    doppler = RMatrix::Zero(n, n);
    coupling = RMatrix::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
      kinetic(j, j) = 4.0 * static_cast<double>(j * j);
      doppler(j, j) = 4.0 * static_cast<double>(j);
      if (j + 1 < n) coupling(j, j + 1) = coupling(j + 1, j) = j == 0 ? std::numbers::sqrt2 / 2.0 : 0.5;
    }
  }
};

inline EnsembleModel build_design_model(const BraggConfig& config) {
  config.validate();
  if (!config.signed_design()) {
    const FoldedBraggModel folded(config.order());
    return embed_hamiltonians({{folded.kinetic.cast<Complex>(), HamiltonianTerm::kDrift, std::nullopt},
                               {folded.doppler.cast<Complex>(), HamiltonianTerm::kDrift, 0},
                               {folded.coupling.cast<Complex>(), 0, 1}},
                              config.domain());
  }
  const Index n = config.order();
  const Index dim = 2 * n + 1;
  CMatrix kinetic = CMatrix::Zero(dim, dim);
  CMatrix doppler = CMatrix::Zero(dim, dim);
  CMatrix coupling = CMatrix::Zero(dim, dim);
  for (Index i = 0; i < dim; ++i) {
    const double level = static_cast<double>(i - n);
    kinetic(i, i) = 4.0 * level * level;
    doppler(i, i) = 4.0 * level;
    if (i + 1 < dim) coupling(i, i + 1) = coupling(i + 1, i) = 0.5;
  }
  return embed_hamiltonians({{kinetic, HamiltonianTerm::kDrift, std::nullopt},
                             {doppler, HamiltonianTerm::kDrift, 0},
                             {coupling, 0, 1}},
                            config.domain());
}

/// Design-basis index of momentum level n (n >= 0 in the folded basis).
inline Index design_index(const BraggConfig& config, int n) {
  return config.signed_design() ? config.order() + n : n;
}

inline MomentState initial_state(const BraggConfig& config) {
  CVector psi = CVector::Zero(config.design_dim());
  psi(design_index(config, 0)) = 1.0;
  return embed_initial_state(config.domain(), psi);
}

/// The symmetric split (|+n0> + |-n0>) / sqrt(2), i.e. folded level n0.
inline MomentState target_state(const BraggConfig& config) {
  if (config.n0 > config.order()) throw std::invalid_argument("target_state: n0 exceeds the truncation order");
  CVector psi = CVector::Zero(config.design_dim());
  if (config.signed_design()) {
    psi(design_index(config, config.n0)) = std::sqrt(0.5);
    psi(design_index(config, -config.n0)) = std::sqrt(0.5);
  } else {
    psi(config.n0) = 1.0;
  }
  return embed_initial_state(config.domain(), psi);
}

/// Orthonormal columns spanning the physical target levels: both momentum
/// branches in the signed basis, the single folded level otherwise.
inline CMatrix target_subspace(const BraggConfig& config) {
  if (!config.signed_design()) {
    CMatrix q = CMatrix::Zero(config.design_dim(), 1);
    q(config.n0, 0) = 1.0;
    return q;
  }
  CMatrix q = CMatrix::Zero(config.design_dim(), 2);
  q(design_index(config, -config.n0), 0) = 1.0;
  q(design_index(config, config.n0), 1) = 1.0;
  return q;
}

/// Bounds [0, amplitude_bound] on the single optical channel.
inline ControlPulse bragg_pulse(const BraggConfig& config, const RVector& samples) {
  return ControlPulse(config.grid(), samples, 0.0, config.amplitude_bound);
}

struct SignedOutcome {
  double error = 1.0;  // 1 - |C_{+2n0}|^2 - |C_{-2n0}|^2
  double plus = 0.0;
  double minus = 0.0;
  double norm_drift = 0.0;
  bool flagged = false;  // norm drift above 1e-8
  CVector terminal;      // amplitudes for n = -N..N
};

/// Unfolded 2N+1 level model at fixed (delta, gamma); only the coupling is
/// controlled.
inline EnsembleModel signed_model(double delta, double gamma, int order) {
  if (!(std::abs(delta) < 2.0)) throw std::invalid_argument("signed_model: |delta| must be below 2");
  if (!(gamma > 0.0)) throw std::invalid_argument("signed_model: gamma must be positive");
  if (order < 1) throw std::invalid_argument("signed_model: order must be positive");
  const Index dim = 2 * order + 1;
  CMatrix kinetic = CMatrix::Zero(dim, dim);
  CMatrix coupling = CMatrix::Zero(dim, dim);
  for (Index i = 0; i < dim; ++i) {
    const double n = static_cast<double>(i - order);
    kinetic(i, i) = (2.0 * n + delta) * (2.0 * n + delta);
    if (i + 1 < dim) coupling(i, i + 1) = coupling(i + 1, i) = 0.5 * gamma;
  }
  ParameterDomain fixed;
  fixed.specs = {{1.0, 1.0, 0}};
  return embed_hamiltonians({{kinetic, HamiltonianTerm::kDrift, std::nullopt}, {coupling, 0, std::nullopt}}, fixed);
}

inline SignedOutcome simulate_signed(const ControlPulse& pulse, double delta, double gamma, int n0, int order) {
  if (n0 < 1 || n0 > order) throw std::invalid_argument("simulate_signed: target index out of range");
  const auto model = signed_model(delta, gamma, order);
  CVector psi0 = CVector::Zero(2 * order + 1);
  psi0(order) = 1.0;
  const ControlPulse wide(pulse.grid(), pulse.values(), RVector::Constant(1, -std::numeric_limits<double>::infinity()),
                          RVector::Constant(1, std::numeric_limits<double>::infinity()));
  const auto result = propagate(model, wide, MomentState{psi0, psi0.size()});
  SignedOutcome out;
  out.terminal = result.terminal();
  out.plus = std::norm(out.terminal(order + n0));
  out.minus = std::norm(out.terminal(order - n0));
  out.error = std::clamp(1.0 - out.plus - out.minus, 0.0, 1.0);
  out.norm_drift = std::abs(out.terminal.norm() - 1.0);
  out.flagged = out.norm_drift > 1e-8;
  return out;
}

struct GridShape {
  int doppler = 9;
  int intensity = 9;
};

struct PulseStatistics {
  double max_u = 0.0;
  double mean_u = 0.0;
  double max_du = 0.0;   // max |u_{k+1} - u_k|
  double mean_du = 0.0;  // mean |u_{k+1} - u_k|
  double energy = 0.0;   // sum u_k^2 dt
};

inline PulseStatistics pulse_statistics(const ControlPulse& pulse) {
  PulseStatistics s;
  const RVector u = pulse.values().col(0);
  if (u.size() == 0) return s;
  s.max_u = u.maxCoeff();
  s.mean_u = u.mean();
  if (u.size() > 1) {
    const RVector du = (u.tail(u.size() - 1) - u.head(u.size() - 1)).cwiseAbs();
    s.max_du = du.maxCoeff();
    s.mean_du = du.mean();
  }
  s.energy = pulse.energy();
  return s;
}

struct RobustnessReport {
  std::vector<std::pair<double, double>> grid;  // (delta, gamma)
  std::vector<double> terminal_errors;
  double max_error = 0.0;
  double mean_error = 0.0;
  double min_error = 0.0;
  PulseStatistics pulse;
  int flagged = 0;
  double clock_minutes = 0.0;
};

inline RobustnessReport robustness_grid(const ControlPulse& pulse, const BraggConfig& config,
                                        GridShape shape = {}, int threads = 1) {
  if (shape.doppler < 1 || shape.intensity < 1) throw std::invalid_argument("robustness_grid: empty grid");
  const auto start = std::chrono::steady_clock::now();
  RobustnessReport report;
  const auto deltas = interval_samples({config.doppler_min, config.doppler_max, 0}, shape.doppler);
  const auto gammas = interval_samples({config.intensity_min, config.intensity_max, 0}, shape.intensity);
  for (double d : deltas)
    for (double g : gammas) report.grid.emplace_back(d, g);
  std::vector<SignedOutcome> outcomes(report.grid.size());
  parallel_for(report.grid.size(), threads, [&](std::size_t i) {
    outcomes[i] = simulate_signed(pulse, report.grid[i].first, report.grid[i].second, config.n0, config.order());
  });
  double sum = 0.0;
  report.min_error = 1.0;
  for (const auto& o : outcomes) {
    report.terminal_errors.push_back(o.error);
    report.max_error = std::max(report.max_error, o.error);
    report.min_error = std::min(report.min_error, o.error);
    sum += o.error;
    if (o.flagged) ++report.flagged;
  }
  report.mean_error = sum / static_cast<double>(outcomes.size());
  report.pulse = pulse_statistics(pulse);
  report.clock_minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  return report;
}

/// Second-order section b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  /// Group delay at DC in samples.
  double dc_delay() const {
    return (b1 + 2.0 * b2) / (b0 + b1 + b2) - (a1 + 2.0 * a2) / (1.0 + a1 + a2);
  }
  bool stable() const {
    // Roots of z^2 + a1 z + a2 strictly inside the unit circle.
    return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2;
  }
};

/// Digital Butterworth low-pass by the bilinear transform with prewarping.
/// `cutoff` is f_c / f_s and must lie in (0, 0.5).
inline std::vector<Biquad> butterworth_lowpass(int order, double cutoff) {
  if (order < 1) throw std::invalid_argument("butterworth_lowpass: order must be positive");
  if (!(cutoff > 0.0 && cutoff < 0.5)) throw std::invalid_argument("butterworth_lowpass: cutoff must be in (0, 0.5)");
  const double wc = std::tan(std::numbers::pi * cutoff);
  std::vector<Biquad> sections;
  for (int k = 0; k < order / 2; ++k) {
    const std::complex<double> s = wc * std::polar(1.0, std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order));
    const std::complex<double> z = (1.0 + s) / (1.0 - s);
    Biquad q;
    q.a1 = -2.0 * z.real();
    q.a2 = std::norm(z);
    const double gain = (1.0 + q.a1 + q.a2) / 4.0;  // unit DC gain with zeros at -1
    q.b0 = gain;
    q.b1 = 2.0 * gain;
    q.b2 = gain;
    sections.push_back(q);
  }
  if (order % 2 == 1) {
    const double z = (1.0 - wc) / (1.0 + wc);
    Biquad q;
    q.a1 = -z;
    const double gain = (1.0 - z) / 2.0;
    q.b0 = gain;
    q.b1 = gain;
    sections.push_back(q);
  }
  return sections;
}

/// Forward filtering with the DC group delay trimmed so that the output stays
/// aligned with the input grid; the input is zero-padded at the end.
inline RVector filter_aligned(const std::vector<Biquad>& sections, const RVector& x) {
  double delay = 0.0;
  for (const auto& s : sections) delay += s.dc_delay();
  const Index shift = std::max<Index>(0, static_cast<Index>(std::lround(delay)));
  RVector y = RVector::Zero(x.size() + shift);
  y.head(x.size()) = x;
  for (const auto& s : sections) {
    double w1 = 0.0, w2 = 0.0;  // transposed direct form II
    for (Index i = 0; i < y.size(); ++i) {
      const double in = y(i);
      const double out = s.b0 * in + w1;
      w1 = s.b1 * in - s.a1 * out + w2;
      w2 = s.b2 * in - s.a2 * out;
      y(i) = out;
    }
  }
  return y.segment(shift, x.size());
}

struct FilterSweepReport {
  double sampling_frequency = 0.0;  // samples per unit of omega_r t
  std::vector<double> cutoffs;
  std::vector<double> probabilities;
  std::vector<bool> skipped;
  double unfiltered_probability = 0.0;

  /// First cutoff at which the probability reaches `level`, or NaN.
  double cutoff_reaching(double level) const {
    for (std::size_t i = 0; i < cutoffs.size(); ++i)
      if (!skipped[i] && probabilities[i] >= level) return cutoffs[i];
    return std::numeric_limits<double>::quiet_NaN();
  }
};

inline constexpr int kFilterCount = 200;

inline FilterSweepReport filter_sweep(const ControlPulse& pulse, int n0, int order, int filter_order = 4,
                                      int threads = 1) {
  FilterSweepReport report;
  report.sampling_frequency = pulse.grid().steps / pulse.grid().horizon;
  report.unfiltered_probability = 1.0 - simulate_signed(pulse, 0.0, 1.0, n0, order).error;
  report.cutoffs.resize(kFilterCount);
  report.probabilities.assign(kFilterCount, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> skipped(kFilterCount, 0);
  const RVector u = pulse.values().col(0);
  parallel_for(kFilterCount, threads, [&](std::size_t i) {
    const double k = static_cast<double>(i + 1);
    const double normalized = 0.5 * k / (kFilterCount + 1);
    report.cutoffs[i] = normalized * report.sampling_frequency;
    const auto sections = butterworth_lowpass(filter_order, normalized);
    for (const auto& s : sections) {
      if (!s.stable()) {
        skipped[i] = 1;
        return;
      }
    }
    const RVector filtered = filter_aligned(sections, u).cwiseMax(0.0);
    if (!filtered.allFinite()) {
      skipped[i] = 1;
      return;
    }
    const ControlPulse p(pulse.grid(), filtered, 0.0, std::numeric_limits<double>::infinity());
    report.probabilities[i] = 1.0 - simulate_signed(p, 0.0, 1.0, n0, order).error;
  });
  report.skipped.assign(skipped.begin(), skipped.end());
  return report;
}

/// Sampling frequency in Hz of a pulse whose `steps` samples span the
/// horizon, for a recoil frequency omega_r given in Hz.
inline double physical_frequency(const BraggConfig& config, double omega_r_hz) {
  if (!(omega_r_hz > 0.0)) throw std::invalid_argument("physical_frequency: omega_r must be positive");
  return (config.steps - 1) * omega_r_hz / config.horizon;
}

}  // namespace rqoc

#endif  // RQOC_BRAGG_HPP
