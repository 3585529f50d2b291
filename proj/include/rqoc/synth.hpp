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

// Two-stage pulse synthesis.
//
// Stage 1 drives the terminal moment state to the target by repeated
// linearization and the ridge-regularized box QP. A step is kept only if it
// lowers the phase-aligned residual |psi_K - e^{i phi} psi_T|^2; lambda
// shrinks after steps the linear model predicts well (or that stall) and
// grows after rejected steps, so the iteration behaves like a
// Levenberg-Marquardt method with box constraints.
//
// Stage 2 lowers |u| with the terminal state frozen to first order (P J du = 0,
// P removing the target direction). Every candidate is re-propagated and is
// accepted only if the exact error stays within the drift budget; otherwise
// mu grows and the step is retried from the last accepted pulse.

#ifndef RQOC_SYNTH_HPP
#define RQOC_SYNTH_HPP

#include "rqoc/bragg.hpp"
#include "rqoc/propagator.hpp"
#include "rqoc/qp.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rqoc {

/// How the terminal target is phased before the error is measured.
/// Global: one phase for the whole moment vector. PerNode: each quadrature
/// node of the modal basis is matched separately to its projection on the
/// target subspace, so the error equals the population left outside the
/// target levels, averaged over the nodes. This is the quantity the
/// robustness grid measures.
enum class TargetAlignment { Global, PerNode };

struct SolverConfig {
  std::optional<double> lambda_init;  // unset: 10 * largest squared singular value of J
  double lambda_scale = 10.0;
  double lambda_decay = 0.5;
  double lambda_min = 1e-8;
  double mu_init = 1.0;
  double mu_decay = 0.5;
  double mu_min = 1e-4;
  double stall_threshold = 1e-6;  // relative objective change
  bool decay_on_gain = true;      // also shrink lambda after well-predicted steps
  double error_tolerance = 1e-3;
  std::optional<double> drift_budget;  // unset: error_tolerance
  int max_iterations = 400;
  int max_energy_iterations = 60;
  int max_energy_retries = 6;
  bool energy_stage = true;
  TargetAlignment alignment = TargetAlignment::PerNode;
  int continuation_stages = 1;  // robust designs: widen the intervals in this many steps
  std::optional<int> final_stage_iterations;  // last widening only; unset: max_iterations
  std::uint64_t seed = 1;
  int threads = 1;

  double budget() const { return drift_budget.value_or(error_tolerance); }

  std::vector<std::string> diagnostics() const {
    std::vector<std::string> out;
    auto positive = [&](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) out.push_back(std::string(name) + " must be positive");
    };
    auto decay = [&](double v, const char* name) {
      if (!(v > 0.0 && v < 1.0)) out.push_back(std::string(name) + " must lie in (0, 1)");
    };
    if (lambda_init) positive(*lambda_init, "lambda_init");
    positive(lambda_scale, "lambda_scale");
    decay(lambda_decay, "lambda_decay");
    positive(lambda_min, "lambda_min");
    if (lambda_init && *lambda_init > 0.0 && lambda_min > *lambda_init)
      out.emplace_back("lambda_min must not exceed lambda_init");
    positive(mu_init, "mu_init");
    decay(mu_decay, "mu_decay");
    positive(mu_min, "mu_min");
    if (mu_min > mu_init) out.emplace_back("mu_min must not exceed mu_init");
    positive(stall_threshold, "stall_threshold");
    positive(error_tolerance, "error_tolerance");
    if (drift_budget) positive(*drift_budget, "drift_budget");
    if (drift_budget && *drift_budget > 10.0 * error_tolerance)
      out.emplace_back("drift_budget must not exceed 10 * error_tolerance");
    if (max_iterations < 0 || max_energy_iterations < 0 || max_energy_retries < 0)
      out.emplace_back("iteration limits must be nonnegative");
    if (threads < 0) out.emplace_back("threads must be nonnegative");
    if (continuation_stages < 1) out.emplace_back("continuation_stages must be >= 1");
    if (final_stage_iterations && *final_stage_iterations < 0)
      out.emplace_back("final_stage_iterations must be nonnegative");
    return out;
  }

  void validate() const {
    const auto d = diagnostics();
    if (!d.empty()) throw std::invalid_argument("SolverConfig: " + d.front());
  }
};

struct SynthesisReport {
  std::vector<double> error_trace;      // stage 1, 1 - |<psi_T|psi_K>|^2 per iteration
  std::vector<double> surrogate_trace;  // stage 1, aligned |psi_K - psi_T|^2
  std::vector<double> lambda_trace;
  std::vector<double> energy_trace;        // stage 2, |u|^2 dt per accepted iterate
  std::vector<double> stage2_error_trace;  // stage 2, exact error per accepted iterate
  ControlPulse initial_pulse;
  ControlPulse final_pulse;
  int stage1_iterations = 0;
  int stage2_iterations = 0;
  int iterations_used = 0;
  int rejected_steps = 0;
  double stage1_error = 1.0;
  double final_error = 1.0;
  double stage2_error_drift = 0.0;
  double wall_clock_seconds = 0.0;
  bool converged = false;
  std::string status;
};

/// Terminal error and the phase that best aligns the target with psi_K.
struct TerminalMatch {
  double error = 1.0;      // 1 - |<psi_T|psi_K>|^2
  double surrogate = 2.0;  // |psi_K - e^{i phi} psi_T|^2 = 2 - 2 |<psi_T|psi_K>|
  Complex phase{1.0, 0.0};
  CVector target;          // e^{i phi} psi_T
};

using TargetAligner = std::function<TerminalMatch(const CVector& psi_k)>;

inline TerminalMatch match_terminal(const CVector& psi_k, const CVector& psi_t) {
  const Complex overlap = psi_t.dot(psi_k);
  const double magnitude = std::abs(overlap);
  TerminalMatch m;
  m.error = std::max(0.0, 1.0 - magnitude * magnitude);
  m.phase = magnitude > 0.0 ? overlap / magnitude : Complex(1.0, 0.0);
  m.target = m.phase * psi_t;
  m.surrogate = (psi_k - m.target).squaredNorm();
  return m;
}

/// Per-node matching against span(q) (orthonormal physical columns). Node i
/// of the modal vector, b_i, is matched to |b_i| P b_i / |P b_i| with P the
/// projector onto span(q); nodes with no weight in the subspace get an even
/// split. The error is 1 - sum_i |P b_i|^2.
inline TargetAligner subspace_aligner(const EnsembleModel& model, CMatrix q) {
  if (q.rows() != model.dim_physical() || q.cols() < 1)
    throw std::invalid_argument("subspace_aligner: subspace shape does not match the model");
  return [&model, q = std::move(q)](const CVector& psi_k) {
    const Index n = model.dim_physical();
    const CVector modal = model.to_modal(psi_k);
    CVector target = CVector::Zero(modal.size());
    double kept = 0.0;
    for (Index i = 0; i < model.dim_moment(); ++i) {
      const auto block = modal.segment(i * n, n);
      const CVector coeff = q.adjoint() * block;
      const double inside = coeff.norm();
      kept += inside * inside;
      if (inside > 0.0)
        target.segment(i * n, n) = (block.norm() / inside) * (q * coeff);
      else
        target.segment(i * n, n) = (block.norm() / std::sqrt(static_cast<double>(q.cols()))) * q.rowwise().sum();
    }
    TerminalMatch m;
    m.target = model.from_modal(target);
    m.error = std::max(0.0, 1.0 - kept);
    m.surrogate = (psi_k - m.target).squaredNorm();
    return m;
  };
}

inline ControlPulse random_initial_pulse(const TimeGrid& grid, const RVector& lower, const RVector& upper,
                                         std::uint64_t seed) {
  grid.validate();
  if (lower.size() != upper.size()) throw std::invalid_argument("random_initial_pulse: bound length mismatch");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RMatrix values(grid.steps, lower.size());
  for (Index k = 0; k < values.rows(); ++k)
    for (Index c = 0; c < values.cols(); ++c)
      values(k, c) = std::min(upper(c), lower(c) + 0.1 * (upper(c) - lower(c)) * unit(rng));
  return ControlPulse(grid, std::move(values), lower, upper);
}

/// Largest squared singular value of J by power iteration on J^T J.
inline double spectral_norm_squared(const RMatrix& j, int iterations = 50) {
  if (j.size() == 0) return 0.0;
  RVector v = RVector::Ones(j.cols()).normalized();
  double estimate = 0.0;
  for (int i = 0; i < iterations; ++i) {
    const RVector w = j.transpose() * (j * v);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - estimate) <= 1e-10 * next) return next;
    estimate = next;
  }
  return estimate;
}

struct StageResult {
  ControlPulse pulse;
  bool converged = false;
};

namespace detail {

inline PropagationOptions propagation_options(const SolverConfig& config) {
  PropagationOptions o;
  o.threads = resolve_threads(config.threads);
  return o;
}

}  // namespace detail

/// Stage 1. Appends to the traces in `report`.
inline StageResult fidelity_stage(const EnsembleModel& model, const ControlPulse& pulse0, const MomentState& psi0,
                                  const MomentState& psi_t, const SolverConfig& config, SynthesisReport& report,
                                  TargetAligner aligner = {}) {
  config.validate();
  if (!aligner) aligner = [&psi_t](const CVector& psi_k) { return match_terminal(psi_k, psi_t.amplitudes); };
  if (std::abs(psi_t.norm() - 1.0) > 1e-8) throw std::invalid_argument("fidelity_stage: target must have unit norm");
  const auto options = detail::propagation_options(config);
  ControlPulse pulse = pulse0;
  Linearization lin = linearize(model, pulse, psi0, options);
  TerminalMatch match = aligner(lin.propagation.terminal());
  const double initial_error = match.error;
  report.error_trace.push_back(match.error);
  report.surrogate_trace.push_back(match.surrogate);
  if (match.error <= config.error_tolerance) return {pulse, true};

  RMatrix j_real = stack_real(lin.jacobian.matrix);
  double lambda = config.lambda_init.value_or(config.lambda_scale * spectral_norm_squared(j_real));
  if (!(lambda > 0.0)) lambda = 1.0;
  lambda = std::max(lambda, config.lambda_min);
  const double lambda_max = 1e12 * std::max(lambda, 1.0);
  report.lambda_trace.push_back(lambda);

  for (int it = 0; it < config.max_iterations; ++it) {
    ++report.stage1_iterations;
    const RVector u = pulse.flattened();
    const RVector r = stack_real(CVector(lin.propagation.terminal() - match.target));
    const auto qp = solve_fidelity_qp(j_real, r, lambda, pulse.flat_lower() - u, pulse.flat_upper() - u);
    const ControlPulse trial = pulse.with_projected(u + qp.delta_u);
    const auto result = propagate(model, trial, psi0, options);
    const TerminalMatch next = aligner(result.terminal());
    if (!std::isfinite(next.error)) throw NumericalError("fidelity_stage: non-finite error");
    if (next.error > 10.0 * std::max(initial_error, config.error_tolerance))
      throw NumericalError("fidelity_stage: error diverged");

    const double predicted = (j_real * qp.delta_u + r).squaredNorm();
    const double gain = match.surrogate - predicted;
    const double actual = match.surrogate - next.surrogate;
    if (actual > 0.0) {
      const bool stalled = actual < config.stall_threshold * match.surrogate;
      const bool stalled_at_floor = stalled && lambda <= config.lambda_min;
      if ((config.decay_on_gain && gain > 0.0 && actual > 0.75 * gain) || stalled) lambda = std::max(lambda * config.lambda_decay, config.lambda_min);
      pulse = trial;
      match = next;
      report.error_trace.push_back(match.error);
      report.surrogate_trace.push_back(match.surrogate);
      report.lambda_trace.push_back(lambda);
      if (match.error <= config.error_tolerance) return {pulse, true};
      if (stalled_at_floor) break;
      lin = linearize(model, pulse, psi0, options);
      match = aligner(lin.propagation.terminal());
      j_real = stack_real(lin.jacobian.matrix);
    } else {
      ++report.rejected_steps;
      lambda /= config.lambda_decay;
      report.error_trace.push_back(match.error);
      report.surrogate_trace.push_back(match.surrogate);
      report.lambda_trace.push_back(lambda);
      if (lambda > lambda_max) break;
    }
  }
  return {pulse, match.error <= config.error_tolerance};
}

/// Stage 2. `reference_error` is the exact error the drift budget refers to.
inline StageResult energy_stage(const EnsembleModel& model, const ControlPulse& pulse0, const MomentState& psi0,
                                const MomentState& psi_t, const SolverConfig& config, SynthesisReport& report,
                                std::optional<double> reference_error = std::nullopt,
                                TargetAligner aligner = {}) {
  config.validate();
  if (!aligner) aligner = [&psi_t](const CVector& psi_k) { return match_terminal(psi_k, psi_t.amplitudes); };
  const auto options = detail::propagation_options(config);
  ControlPulse pulse = pulse0;
  Linearization lin = linearize(model, pulse, psi0, options);
  TerminalMatch match = aligner(lin.propagation.terminal());
  const double e0 = reference_error.value_or(match.error);
  const double limit = e0 + config.budget();
  double energy = pulse.energy();
  report.energy_trace.push_back(energy);
  report.stage2_error_trace.push_back(match.error);

  double mu = config.mu_init;
  int retries = 0;
  for (int it = 0; it < config.max_energy_iterations; ++it) {
    ++report.stage2_iterations;
    const RVector u = pulse.flattened();
    const RMatrix j_real = stack_real(lin.jacobian.matrix);
    const RMatrix projector = real_projection(match.target);
    const auto qp = solve_energy_qp(u, j_real, projector, mu, pulse.flat_lower() - u, pulse.flat_upper() - u);
    if (qp.delta_u.norm() == 0.0) break;
    const ControlPulse trial = pulse.with_projected(u + qp.delta_u);
    const double trial_energy = trial.energy();
    if (!(trial_energy < energy)) break;
    const auto result = propagate(model, trial, psi0, options);
    const TerminalMatch trial_match = aligner(result.terminal());
    const double error = trial_match.error;
    if (error > limit) {
      ++report.rejected_steps;
      if (++retries > config.max_energy_retries) break;
      mu /= config.mu_decay;
      continue;
    }
    retries = 0;
    const bool stalled = energy - trial_energy < config.stall_threshold * energy;
    pulse = trial;
    energy = trial_energy;
    match = trial_match;
    report.energy_trace.push_back(energy);
    report.stage2_error_trace.push_back(error);
    if (stalled) {
      if (mu <= config.mu_min) break;
      mu = std::max(mu * config.mu_decay, config.mu_min);
    }
    lin = linearize(model, pulse, psi0, options);
  }
  return {pulse, true};
}

/// Stage 1 followed, when it converges, by stage 2.
inline SynthesisReport synthesize(const EnsembleModel& model, const ControlPulse& pulse0, const MomentState& psi0,
                                  const MomentState& psi_t, const SolverConfig& config,
                                  TargetAligner aligner = {}) {
  const auto start = std::chrono::steady_clock::now();
  SynthesisReport report;
  report.initial_pulse = pulse0;
  try {
    const auto stage1 = fidelity_stage(model, pulse0, psi0, psi_t, config, report, aligner);
    report.final_pulse = stage1.pulse;
    report.stage1_error = report.error_trace.back();
    report.final_error = report.stage1_error;
    report.converged = stage1.converged;
    report.status = stage1.converged ? "converged" : "stage 1 did not reach tolerance";
    if (stage1.converged && config.energy_stage) {
      const auto stage2 = energy_stage(model, stage1.pulse, psi0, psi_t, config, report, report.stage1_error, aligner);
      report.final_pulse = stage2.pulse;
      report.final_error = report.stage2_error_trace.back();
      report.stage2_error_drift = std::abs(report.final_error - report.stage1_error);
    }
  } catch (const NumericalError& e) {
    report.converged = false;
    report.status = std::string("aborted: ") + e.what();
    if (report.final_pulse.steps() == 0) report.final_pulse = pulse0;
  }
  report.iterations_used = report.stage1_iterations + report.stage2_iterations;
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Bragg synthesis for one configuration from a given starting pulse.
inline SynthesisReport synthesize_bragg(const BraggConfig& bragg, const ControlPulse& pulse0,
                                        const SolverConfig& config) {
  const auto model = build_design_model(bragg);
  TargetAligner aligner;
  if (config.alignment == TargetAlignment::PerNode) aligner = subspace_aligner(model, target_subspace(bragg));
  return synthesize(model, pulse0, initial_state(bragg), target_state(bragg), config, aligner);
}

/// Intervals shrunk toward the nominal point (delta = 0, gamma = 1) by `scale`.
inline BraggConfig scaled_intervals(const BraggConfig& bragg, double scale) {
  BraggConfig c = bragg;
  c.doppler_min *= scale;
  c.doppler_max *= scale;
  c.intensity_min = 1.0 + scale * (bragg.intensity_min - 1.0);
  c.intensity_max = 1.0 + scale * (bragg.intensity_max - 1.0);
  return c;
}

/// Robust synthesis by interval continuation: stage k of S solves stage 1 on
/// the intervals scaled by k/S, started from the previous stage's pulse.
/// High expansion degrees fitted on the full intervals from a random start
/// tend to land in minima that are accurate only at the quadrature nodes;
/// widening gradually keeps the pulse robust between them. Stage 2 runs
/// after the last widening when stage 1 met the tolerance there.
/// The report's traces concatenate all widenings.
inline SynthesisReport robust_synthesis(const BraggConfig& bragg, const ControlPulse& pulse0,
                                        const SolverConfig& config) {
  config.validate();
  bragg.validate();
  const auto start = std::chrono::steady_clock::now();
  SynthesisReport report;
  report.initial_pulse = pulse0;
  report.final_pulse = pulse0;
  try {
    const int stages = config.continuation_stages;
    for (int k = 1; k <= stages; ++k) {
      const BraggConfig stage = scaled_intervals(bragg, static_cast<double>(k) / stages);
      const auto model = build_design_model(stage);
      TargetAligner aligner;
      if (config.alignment == TargetAlignment::PerNode) aligner = subspace_aligner(model, target_subspace(stage));
      const auto psi0 = initial_state(stage);
      const auto psi_t = target_state(stage);
      SolverConfig step = config;
      if (k == stages && config.final_stage_iterations) step.max_iterations = *config.final_stage_iterations;
      const auto result = fidelity_stage(model, report.final_pulse, psi0, psi_t, step, report, aligner);
      report.final_pulse = result.pulse;
      report.stage1_error = report.error_trace.back();
      report.final_error = report.stage1_error;
      report.converged = result.converged;
      if (k == stages && result.converged && config.energy_stage) {
        const auto stage2 = energy_stage(model, result.pulse, psi0, psi_t, config, report, report.stage1_error, aligner);
        report.final_pulse = stage2.pulse;
        report.final_error = report.stage2_error_trace.back();
        report.stage2_error_drift = std::abs(report.final_error - report.stage1_error);
      }
    }
    report.status = report.converged ? "converged" : "stage 1 did not reach tolerance";
  } catch (const NumericalError& e) {
    report.converged = false;
    report.status = std::string("aborted: ") + e.what();
  }
  report.iterations_used = report.stage1_iterations + report.stage2_iterations;
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline ControlPulse random_bragg_pulse(const BraggConfig& bragg, std::uint64_t seed) {
  return random_initial_pulse(bragg.grid(), RVector::Zero(1), RVector::Constant(1, bragg.amplitude_bound), seed);
}

/// Targets n0 = 1 .. n0_target in turn, each rung started from the previous
/// rung's final pulse. Stops at the first rung that misses the tolerance.
inline std::vector<SynthesisReport> momentum_ladder(const BraggConfig& bragg, int n0_target,
                                                    const SolverConfig& config,
                                                    std::optional<ControlPulse> start = std::nullopt) {
  if (n0_target < 1) throw std::invalid_argument("momentum_ladder: n0_target must be >= 1");
  std::vector<SynthesisReport> reports;
  ControlPulse pulse = start ? *start : random_bragg_pulse(bragg, config.seed);
  for (int n0 = 1; n0 <= n0_target; ++n0) {
    BraggConfig rung = bragg;
    rung.n0 = n0;
    rung.truncation = 0;
    const RVector values = pulse.values().col(0).cwiseMax(0.0).cwiseMin(rung.amplitude_bound);
    reports.push_back(synthesize_bragg(rung, bragg_pulse(rung, values), config));
    if (!reports.back().converged) break;
    pulse = reports.back().final_pulse;
  }
  return reports;
}

}  // namespace rqoc

#endif  // RQOC_SYNTH_HPP
