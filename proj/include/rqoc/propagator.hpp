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

// Piecewise-constant propagation and the terminal-state Jacobian.
//
// Units are dimensionless with hbar = 1: step k applies
// U_k = exp(-i dt sum_t a_t(k) H_t) where a_t is 1 for drift terms and the
// channel value u_c(t_k) for controlled terms.
//
// Two evaluation routes are provided:
//   * Dense: Pade scaling-and-squaring exponentials of the embedded operators,
//     derivatives from the augmented block exponential exp([[A, E], [0, A]]).
//   * Modal: the ensemble is block-diagonal in modal coordinates (see
//     EnsembleModel); each node block is exponentiated through its Hermitian
//     eigendecomposition with exact divided-difference derivatives.
// Both compute exact step exponentials and exact Frechet derivatives; they
// agree to rounding and the modal route is the default.

#ifndef RQOC_PROPAGATOR_HPP
#define RQOC_PROPAGATOR_HPP

#include "rqoc/ensemble.hpp"
#include "rqoc/parallel.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rqoc {

struct TimeGrid {
  double horizon = 0.0;
  int steps = 0;

  double dt() const { return horizon / steps; }
  double time(int k) const { return k * dt(); }

  void validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw std::invalid_argument("TimeGrid: horizon must be positive and finite");
    if (steps < 1) throw std::invalid_argument("TimeGrid: at least one step");
  }
};

/// K x C piecewise-constant control sequence with per-channel bounds.
class ControlPulse {
 public:
  ControlPulse() = default;

  ControlPulse(TimeGrid grid, RMatrix values, RVector lower, RVector upper)
      : grid_(grid), values_(std::move(values)), lower_(std::move(lower)), upper_(std::move(upper)) {
    validate();
  }

  /// Single-channel convenience constructor.
  ControlPulse(TimeGrid grid, const RVector& samples, double lower, double upper)
      : ControlPulse(grid, RMatrix(samples), RVector::Constant(1, lower),
                     RVector::Constant(1, upper)) {}

  const TimeGrid& grid() const { return grid_; }
  Index steps() const { return values_.rows(); }
  Index channels() const { return values_.cols(); }
  const RMatrix& values() const { return values_; }
  const RVector& lower() const { return lower_; }
  const RVector& upper() const { return upper_; }
  double value(Index k, Index c) const { return values_(k, c); }

  /// Controls flattened with time outer and channel inner, matching the
  /// Jacobian column order.
  RVector flattened() const {
    RVector out(values_.size());
    for (Index k = 0; k < steps(); ++k)
      for (Index c = 0; c < channels(); ++c) out(k * channels() + c) = values_(k, c);
    return out;
  }

  /// Per-variable bounds in flattened order.
  RVector flat_lower() const { return lower_.replicate(steps(), 1); }
  RVector flat_upper() const { return upper_.replicate(steps(), 1); }

  ControlPulse with_flattened(const RVector& flat) const {
    if (flat.size() != values_.size())
      throw std::invalid_argument("ControlPulse: flattened size mismatch");
    RMatrix values(steps(), channels());
    for (Index k = 0; k < steps(); ++k)
      for (Index c = 0; c < channels(); ++c) values(k, c) = flat(k * channels() + c);
    return ControlPulse(grid_, std::move(values), lower_, upper_);
  }

  /// Clamps flattened values into the bounds before building a pulse.
  ControlPulse with_projected(const RVector& flat) const {
    return with_flattened(flat.cwiseMax(flat_lower()).cwiseMin(flat_upper()));
  }

  /// sum_k |u_k|^2 dt over all channels.
  double energy() const { return values_.squaredNorm() * grid_.dt(); }

 private:
  void validate() const {
    grid_.validate();
    if (values_.rows() != grid_.steps)
      throw std::invalid_argument("ControlPulse: value rows must equal the step count");
    if (lower_.size() != values_.cols() || upper_.size() != values_.cols())
      throw std::invalid_argument("ControlPulse: bounds must have one entry per channel");
    if (!values_.allFinite()) throw std::invalid_argument("ControlPulse: non-finite control value");
    for (Index c = 0; c < values_.cols(); ++c) {
      if (!(lower_(c) <= upper_(c)))
        throw std::invalid_argument("ControlPulse: lower bound exceeds upper bound");
      for (Index k = 0; k < values_.rows(); ++k) {
        if (values_(k, c) < lower_(c) || values_(k, c) > upper_(c))
          throw std::invalid_argument("ControlPulse: value at step " + std::to_string(k) +
                                      " violates its bounds");
      }
    }
  }

  TimeGrid grid_;
  RMatrix values_;
  RVector lower_;
  RVector upper_;
};

struct PropagationResult {
  std::vector<CVector> states;  // psi_0 ... psi_K
  std::vector<CMatrix> step_unitaries;  // filled only when requested

  const CVector& terminal() const { return states.back(); }
};

/// D_tot x (K C) complex; column k*C + c is d psi_K / d u_c(t_k).
struct TerminalJacobian {
  CMatrix matrix;
};

struct Linearization {
  PropagationResult propagation;
  TerminalJacobian jacobian;
};

enum class PropagationMethod { Modal, Dense };

struct PropagationOptions {
  PropagationMethod method = PropagationMethod::Modal;
  bool cache_unitaries = false;
  int threads = 1;
};

namespace detail {

inline void check_pulse(const EnsembleModel& model, const ControlPulse& pulse) {
  if (pulse.channels() != model.channel_count())
    throw std::invalid_argument("propagate: pulse has " + std::to_string(pulse.channels()) +
                                " channels, model expects " +
                                std::to_string(model.channel_count()));
}

inline void check_state(const EnsembleModel& model, const MomentState& psi0) {
  if (psi0.amplitudes.size() != model.dim_total())
    throw std::invalid_argument("propagate: initial state dimension mismatch");
  if (std::abs(psi0.norm() - 1.0) > 1e-8)
    throw std::invalid_argument("propagate: initial state must have unit norm");
}

inline std::vector<double> step_amplitudes(const EnsembleModel& model, const ControlPulse& pulse,
                                           Index k) {
  std::vector<double> channel(static_cast<std::size_t>(pulse.channels()));
  for (Index c = 0; c < pulse.channels(); ++c) channel[static_cast<std::size_t>(c)] = pulse.value(k, c);
  return model.term_amplitudes(channel);
}

inline void check_finite_state(const CVector& psi, Index step) {
  if (!psi.allFinite())
    throw NumericalError("propagate: non-finite state after step " + std::to_string(step));
}

// Node-local physical data in the scalar type used for its eigensolves.
template <typename Scalar>
struct NodeOperators {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  std::vector<Matrix> terms;           // physical term matrices times node coefficient
  std::vector<Matrix> channel_generators;  // sum of controlled terms per channel

  NodeOperators(const EnsembleModel& model, Index node) {
    const auto& phys = model.physical_terms();
    const Index n = model.dim_physical();
    channel_generators.assign(static_cast<std::size_t>(model.channel_count()), Matrix::Zero(n, n));
    for (std::size_t t = 0; t < phys.size(); ++t) {
      Matrix m;
      if constexpr (std::is_same_v<Scalar, double>) {
        m = phys[t].matrix.real();
      } else {
        m = phys[t].matrix;
      }
      m *= model.modal_coefficient(node, t);
      if (!phys[t].is_drift())
        channel_generators[static_cast<std::size_t>(phys[t].control_index)] += m;
      terms.push_back(std::move(m));
    }
  }

  Matrix hamiltonian(std::span<const double> amplitudes) const {
    Matrix h = Matrix::Zero(terms.front().rows(), terms.front().cols());
    for (std::size_t t = 0; t < terms.size(); ++t) h += amplitudes[t] * terms[t];
    return h;
  }

  SpectralStep<Scalar> step(std::span<const double> amplitudes, double dt, bool tridiagonal) const {
    if constexpr (std::is_same_v<Scalar, double>) {
      if (tridiagonal) {
        const Index n = terms.front().rows();
        RVector diag = RVector::Zero(n);
        RVector sub = RVector::Zero(std::max<Index>(n - 1, 0));
        for (std::size_t t = 0; t < terms.size(); ++t) {
          diag += amplitudes[t] * terms[t].diagonal();
          if (n > 1) sub += amplitudes[t] * terms[t].diagonal(-1);
        }
        return SpectralStep<double>::tridiagonal(diag, sub, dt);
      }
    }
    return SpectralStep<Scalar>(hamiltonian(amplitudes), dt);
  }
};

// Propagates one modal node; optionally assembles that node's Jacobian rows.
template <typename Scalar>
void propagate_node(const EnsembleModel& model, const ControlPulse& pulse, Index node,
                    const CVector& phi0, std::vector<CVector>& states, CMatrix* jacobian,
                    std::vector<CMatrix>* unitaries) {
  const NodeOperators<Scalar> ops(model, node);
  const Index steps = pulse.steps();
  const Index channels = pulse.channels();
  const double dt = pulse.grid().dt();
  const bool tri = model.tridiagonal_physical();

  std::vector<SpectralStep<Scalar>> cache;
  if (jacobian) cache.reserve(static_cast<std::size_t>(steps));
  states.assign(static_cast<std::size_t>(steps + 1), CVector());
  states[0] = phi0;
  for (Index k = 0; k < steps; ++k) {
    const auto amps = step_amplitudes(model, pulse, k);
    SpectralStep<Scalar> step = ops.step(amps, dt, tri);
    states[static_cast<std::size_t>(k + 1)] = step.apply(states[static_cast<std::size_t>(k)]);
    if (unitaries) (*unitaries)[static_cast<std::size_t>(k)] = step.unitary();
    if (jacobian) cache.push_back(std::move(step));
  }
  if (!jacobian) return;

  const Index n = model.dim_physical();
  jacobian->setZero(n, steps * channels);
  CMatrix backward = CMatrix::Identity(n, n);  // U_{K-1} ... U_{k+1}
  for (Index k = steps; k-- > 0;) {
    const auto& step = cache[static_cast<std::size_t>(k)];
    const CMatrix vectors = step.eigenvectors().template cast<Complex>();
    const CVector coeffs = vectors.adjoint() * states[static_cast<std::size_t>(k)];
    const CMatrix mapped = backward * vectors;
    for (Index c = 0; c < channels; ++c) {
      const auto& gen = ops.channel_generators[static_cast<std::size_t>(c)];
      jacobian->col(k * channels + c) = mapped * (step.frechet_kernel(gen) * coeffs);
    }
    backward = mapped * step.phases().asDiagonal() * vectors.adjoint();
  }
}

template <typename Scalar>
Linearization modal_pass(const EnsembleModel& model, const ControlPulse& pulse,
                         const MomentState& psi0, const PropagationOptions& options,
                         bool with_jacobian) {
  const Index nodes = model.dim_moment();
  const Index n = model.dim_physical();
  const Index steps = pulse.steps();
  const CVector modal0 = model.to_modal(psi0.amplitudes);

  std::vector<std::vector<CVector>> node_states(static_cast<std::size_t>(nodes));
  std::vector<CMatrix> node_jacobians(static_cast<std::size_t>(with_jacobian ? nodes : 0));
  std::vector<std::vector<CMatrix>> node_unitaries(
      static_cast<std::size_t>(options.cache_unitaries ? nodes : 0),
      std::vector<CMatrix>(static_cast<std::size_t>(steps)));

  parallel_for(static_cast<std::size_t>(nodes), options.threads, [&](std::size_t j) {
    const CVector phi0 = modal0.segment(static_cast<Index>(j) * n, n);
    propagate_node<Scalar>(model, pulse, static_cast<Index>(j), phi0, node_states[j],
                           with_jacobian ? &node_jacobians[j] : nullptr,
                           options.cache_unitaries ? &node_unitaries[j] : nullptr);
  });

  Linearization out;
  auto& states = out.propagation.states;
  states.resize(static_cast<std::size_t>(steps + 1));
  CVector modal(model.dim_total());
  for (Index k = 0; k <= steps; ++k) {
    for (Index j = 0; j < nodes; ++j)
      modal.segment(j * n, n) = node_states[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
    states[static_cast<std::size_t>(k)] = model.from_modal(modal);
    check_finite_state(states[static_cast<std::size_t>(k)], k);
  }

  if (options.cache_unitaries) {
    const CMatrix basis = kron(model.modal_basis(), RMatrix::Identity(n, n)).cast<Complex>();
    out.propagation.step_unitaries.resize(static_cast<std::size_t>(steps));
    for (Index k = 0; k < steps; ++k) {
      CMatrix blockdiag = CMatrix::Zero(model.dim_total(), model.dim_total());
      for (Index j = 0; j < nodes; ++j)
        blockdiag.block(j * n, j * n, n, n) =
            node_unitaries[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      out.propagation.step_unitaries[static_cast<std::size_t>(k)] =
          basis * blockdiag * basis.adjoint();
    }
  }

  if (with_jacobian) {
    CMatrix modal_jac(model.dim_total(), steps * pulse.channels());
    for (Index j = 0; j < nodes; ++j)
      modal_jac.middleRows(j * n, n) = node_jacobians[static_cast<std::size_t>(j)];
    out.jacobian.matrix = model.from_modal(modal_jac);
  }
  return out;
}

}  // namespace detail

/// exp(-i dt sum_t a_t H_t) on the full embedded space (Pade route).
/// `amplitudes` has one entry per term; drift entries must be exactly 1.
inline CMatrix step_unitary(const EnsembleModel& model, std::span<const double> amplitudes,
                            double dt) {
  if (amplitudes.size() != model.term_count())
    throw std::invalid_argument("step_unitary: expected one amplitude per term");
  for (std::size_t t = 0; t < amplitudes.size(); ++t) {
    if (!std::isfinite(amplitudes[t]))
      throw std::invalid_argument("step_unitary: non-finite control value");
    if (model.physical_terms()[t].is_drift() && amplitudes[t] != 1.0)
      throw std::invalid_argument("step_unitary: drift terms must have amplitude 1");
  }
  const CMatrix generator = Complex(0.0, -dt) * model.hamiltonian(amplitudes);
  return expm(generator);
}

namespace detail {

inline Linearization dense_pass(const EnsembleModel& model, const ControlPulse& pulse,
                                const MomentState& psi0, const PropagationOptions& options,
                                bool with_jacobian) {
  const Index steps = pulse.steps();
  const Index channels = pulse.channels();
  const double dt = pulse.grid().dt();
  const Index dim = model.dim_total();

  std::vector<CMatrix> generators(static_cast<std::size_t>(channels), CMatrix::Zero(dim, dim));
  for (std::size_t t : model.controlled_indices())
    generators[static_cast<std::size_t>(model.physical_terms()[t].control_index)] +=
        Complex(0.0, -dt) * model.embedded(t);

  Linearization out;
  auto& states = out.propagation.states;
  states.reserve(static_cast<std::size_t>(steps + 1));
  states.push_back(psi0.amplitudes);
  std::vector<CMatrix> unitaries(static_cast<std::size_t>(steps));
  // derivative_columns[k][c] = L(A_k, E_c) psi_k
  std::vector<std::vector<CVector>> local(static_cast<std::size_t>(with_jacobian ? steps : 0));
  for (Index k = 0; k < steps; ++k) {
    const auto amps = step_amplitudes(model, pulse, k);
    const CMatrix generator = Complex(0.0, -dt) * model.hamiltonian(amps);
    const CVector& psi = states.back();
    if (with_jacobian) {
      auto& cols = local[static_cast<std::size_t>(k)];
      for (Index c = 0; c < channels; ++c) {
        const auto fr = expm_frechet<Complex>(generator, generators[static_cast<std::size_t>(c)]);
        if (c == 0) unitaries[static_cast<std::size_t>(k)] = fr.exp;
        cols.push_back(fr.derivative * psi);
      }
      if (channels == 0) unitaries[static_cast<std::size_t>(k)] = expm(generator);
    } else {
      unitaries[static_cast<std::size_t>(k)] = expm(generator);
    }
    states.push_back(unitaries[static_cast<std::size_t>(k)] * psi);
    check_finite_state(states.back(), k + 1);
  }
  if (with_jacobian) {
    out.jacobian.matrix.resize(dim, steps * channels);
    CMatrix backward = CMatrix::Identity(dim, dim);
    for (Index k = steps; k-- > 0;) {
      for (Index c = 0; c < channels; ++c)
        out.jacobian.matrix.col(k * channels + c) =
            backward * local[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
      backward = backward * unitaries[static_cast<std::size_t>(k)];
    }
  }
  if (options.cache_unitaries) out.propagation.step_unitaries = std::move(unitaries);
  return out;
}

inline Linearization run_pass(const EnsembleModel& model, const ControlPulse& pulse,
                              const MomentState& psi0, const PropagationOptions& options,
                              bool with_jacobian) {
  check_pulse(model, pulse);
  check_state(model, psi0);
  if (options.method == PropagationMethod::Dense)
    return dense_pass(model, pulse, psi0, options, with_jacobian);
  if (model.real_physical())
    return modal_pass<double>(model, pulse, psi0, options, with_jacobian);
  return modal_pass<Complex>(model, pulse, psi0, options, with_jacobian);
}

}  // namespace detail

inline PropagationResult propagate(const EnsembleModel& model, const ControlPulse& pulse,
                                   const MomentState& psi0, const PropagationOptions& options = {}) {
  return detail::run_pass(model, pulse, psi0, options, false).propagation;
}

/// Forward pass plus terminal Jacobian, sharing the step decompositions.
inline Linearization linearize(const EnsembleModel& model, const ControlPulse& pulse,
                               const MomentState& psi0, const PropagationOptions& options = {}) {
  return detail::run_pass(model, pulse, psi0, options, true);
}

inline TerminalJacobian terminal_jacobian(const EnsembleModel& model, const ControlPulse& pulse,
                                          const MomentState& psi0,
                                          const PropagationOptions& options = {}) {
  return linearize(model, pulse, psi0, options).jacobian;
}

/// Real stacked form [Re; Im] of a complex least-squares problem.
struct RealLeastSquares {
  RMatrix jacobian;
  RVector residual;
};

inline RVector stack_real(const CVector& v) {
  RVector out(2 * v.size());
  out.head(v.size()) = v.real();
  out.tail(v.size()) = v.imag();
  return out;
}

inline RMatrix stack_real(const CMatrix& m) {
  RMatrix out(2 * m.rows(), m.cols());
  out.topRows(m.rows()) = m.real();
  out.bottomRows(m.rows()) = m.imag();
  return out;
}

inline RealLeastSquares real_embedding(const CMatrix& jacobian, const CVector& psi_terminal,
                                       const CVector& psi_target) {
  if (psi_terminal.size() != psi_target.size() || jacobian.rows() != psi_terminal.size())
    throw std::invalid_argument("real_embedding: inconsistent shapes");
  return {stack_real(jacobian), stack_real(CVector(psi_terminal - psi_target))};
}

}  // namespace rqoc

#endif  // RQOC_PROPAGATOR_HPP
