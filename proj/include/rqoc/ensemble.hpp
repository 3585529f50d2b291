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

// Moment-space representation of a Hamiltonian family that depends linearly
// on interval-valued parameters.
//
// The parametrized wavefunction is expanded in products of shifted,
// normalized Legendre polynomials over the parameter box. Each moment is
// itself a wavefunction, and the moments evolve under the embedded operators
//
//   H_m = I (x) ... (x) Gamma_m (x) ... (x) I (x) Hhat_m
//
// where Gamma_m is the tridiagonal multiplication-by-gamma operator on the
// Legendre coefficients. In sampling mode Gamma_m is the diagonal of the
// chosen sample values instead.
//
// Moment blocks are enumerated row-major over multi-indices (last parameter
// fastest), which is the natural Kronecker layout.

#ifndef RQOC_ENSEMBLE_HPP
#define RQOC_ENSEMBLE_HPP

#include "rqoc/linalg.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace rqoc {

enum class ExpansionMode { Legendre, Sampling };

/// Which recurrence coefficient occupies the first off-diagonal of Gamma.
///
/// `Galerkin` places c_0 = 1/sqrt(3) at (0,1), which is the exact projection
/// of multiplication by gamma onto orthonormal Legendre polynomials (its
/// eigenvalues are the Gauss-Legendre nodes). `OffsetByOne` starts the
/// off-diagonal at c_1 instead; it is kept for comparison only and does not
/// converge to the parametrized solution.
enum class RecurrenceAlignment { Galerkin, OffsetByOne };

struct ParameterSpec {
  double gamma_min = 0.0;
  double gamma_max = 0.0;
  int degree = 0;

  double midpoint() const { return 0.5 * (gamma_max + gamma_min); }
  double half_width() const { return 0.5 * (gamma_max - gamma_min); }
  bool degenerate() const { return gamma_min == gamma_max; }
  /// Truncation degree actually used; a zero-width interval carries no
  /// parametric variation so only the constant moment survives.
  int effective_degree() const { return degenerate() ? 0 : degree; }

  void validate() const {
    if (!std::isfinite(gamma_min) || !std::isfinite(gamma_max))
      throw std::invalid_argument("ParameterSpec: interval bounds must be finite");
    if (gamma_min > gamma_max)
      throw std::invalid_argument("ParameterSpec: gamma_min must not exceed gamma_max");
    if (degree < 0) throw std::invalid_argument("ParameterSpec: degree must be nonnegative");
  }
};

struct ParameterDomain {
  std::vector<ParameterSpec> specs;
  ExpansionMode mode = ExpansionMode::Legendre;
  RecurrenceAlignment alignment = RecurrenceAlignment::Galerkin;

  Index size() const { return static_cast<Index>(specs.size()); }

  /// Number of basis functions per parameter axis.
  std::vector<Index> axis_lengths() const {
    std::vector<Index> out;
    out.reserve(specs.size());
    for (const auto& s : specs) out.push_back(s.effective_degree() + 1);
    return out;
  }

  Index moment_count() const {
    Index total = 1;
    for (const auto& s : specs) total *= s.effective_degree() + 1;
    return total;
  }

  std::vector<Index> multi_index(Index flat) const {
    const auto lengths = axis_lengths();
    std::vector<Index> out(lengths.size(), 0);
    for (std::size_t m = lengths.size(); m-- > 0;) {
      out[m] = flat % lengths[m];
      flat /= lengths[m];
    }
    return out;
  }

  Index flat_index(std::span<const Index> multi) const {
    const auto lengths = axis_lengths();
    if (multi.size() != lengths.size())
      throw std::invalid_argument("ParameterDomain: multi-index length mismatch");
    Index flat = 0;
    for (std::size_t m = 0; m < lengths.size(); ++m) {
      if (multi[m] < 0 || multi[m] >= lengths[m])
        throw std::out_of_range("ParameterDomain: multi-index component out of range");
      flat = flat * lengths[m] + multi[m];
    }
    return flat;
  }

  bool contains(std::span<const double> gamma) const {
    if (gamma.size() != specs.size()) return false;
    for (std::size_t m = 0; m < specs.size(); ++m) {
      if (!(gamma[m] >= specs[m].gamma_min && gamma[m] <= specs[m].gamma_max)) return false;
    }
    return true;
  }

  void validate() const {
    if (specs.empty()) throw std::invalid_argument("ParameterDomain: at least one parameter");
    for (const auto& s : specs) s.validate();
  }
};

/// c_n = (n+1) / sqrt((2n+3)(2n+1)), the three-term recurrence coefficient
/// of orthonormal Legendre polynomials: x p_n = c_n p_{n+1} + c_{n-1} p_{n-1}.
inline double legendre_recurrence_coeff(int n) {
  if (n < 0) throw std::invalid_argument("legendre_recurrence_coeff: n must be nonnegative");
  const double nn = static_cast<double>(n);
  return (nn + 1.0) / std::sqrt((2.0 * nn + 3.0) * (2.0 * nn + 1.0));
}

/// Equispaced samples spanning the interval inclusive; a single sample sits
/// at the midpoint.
inline std::vector<double> interval_samples(const ParameterSpec& spec, int count) {
  if (count < 1) throw std::invalid_argument("interval_samples: count must be positive");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1 || spec.degenerate()) {
    std::fill(out.begin(), out.end(), spec.midpoint());
    return out;
  }
  const double step = (spec.gamma_max - spec.gamma_min) / (count - 1);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = spec.gamma_min + i * step;
  out.back() = spec.gamma_max;
  return out;
}

inline RMatrix build_gamma_matrix(const ParameterSpec& spec, ExpansionMode mode,
                                  RecurrenceAlignment alignment = RecurrenceAlignment::Galerkin) {
  spec.validate();
  const int degree = spec.effective_degree();
  const Index n = degree + 1;
  RMatrix gamma = RMatrix::Zero(n, n);
  if (mode == ExpansionMode::Sampling) {
    const auto samples = interval_samples(spec, static_cast<int>(n));
    for (Index i = 0; i < n; ++i) gamma(i, i) = samples[static_cast<std::size_t>(i)];
    return gamma;
  }
  const int offset = alignment == RecurrenceAlignment::Galerkin ? 0 : 1;
  gamma.diagonal().setConstant(spec.midpoint());
  for (Index i = 0; i + 1 < n; ++i) {
    const double c = legendre_recurrence_coeff(static_cast<int>(i) + offset);
    gamma(i, i + 1) = c * spec.half_width();
    gamma(i + 1, i) = c * spec.half_width();
  }
  return gamma;
}

struct HamiltonianTerm {
  /// control_index value for terms whose amplitude is fixed at one.
  static constexpr int kDrift = -1;

  CMatrix matrix;
  int control_index = kDrift;
  std::optional<int> parameter_index;

  bool is_drift() const { return control_index == kDrift; }
};

/// Amplitudes over (moment index) (x) (physical basis).
struct MomentState {
  CVector amplitudes;
  Index physical_dim = 0;

  Index moment_count() const {
    return physical_dim == 0 ? 0 : amplitudes.size() / physical_dim;
  }
  auto block(Index moment) const { return amplitudes.segment(moment * physical_dim, physical_dim); }
  auto block(Index moment) { return amplitudes.segment(moment * physical_dim, physical_dim); }
  double norm() const { return amplitudes.norm(); }
};

/// The embedded operator family plus the data needed to propagate it
/// efficiently.
///
/// Every embedded operator is a Kronecker product of per-axis factors that
/// are either the identity or that axis's Gamma. Diagonalizing each Gamma by
/// an orthogonal Q_m therefore block-diagonalizes the whole family with
/// Q = Q_1 (x) ... (x) Q_M (x) I: in these "modal" coordinates the ensemble is
/// a set of decoupled physical systems, one per node of the tensor grid of
/// Gamma eigenvalues, with the parameter fixed at that node.
class EnsembleModel {
 public:
  EnsembleModel() = default;

  const ParameterDomain& domain() const { return domain_; }
  const std::vector<HamiltonianTerm>& physical_terms() const { return terms_; }
  const std::vector<CMatrix>& embedded_terms() const { return embedded_; }
  const CMatrix& embedded(std::size_t term) const { return embedded_.at(term); }
  std::size_t term_count() const { return terms_.size(); }
  Index dim_physical() const { return dim_physical_; }
  Index dim_moment() const { return dim_moment_; }
  Index dim_total() const { return dim_physical_ * dim_moment_; }
  /// Number of optimized control channels (max control_index + 1).
  Index channel_count() const { return channels_; }
  const std::vector<std::size_t>& controlled_indices() const { return controlled_; }

  /// Orthogonal change of basis from modal to moment coordinates.
  const RMatrix& modal_basis() const { return modal_basis_; }
  /// Gamma eigenvalues per parameter axis.
  const std::vector<RVector>& axis_nodes() const { return axis_nodes_; }
  /// Coefficient of term t at modal node j: the node's parameter value, or 1.
  double modal_coefficient(Index node, std::size_t term) const {
    return modal_coeffs_(node, static_cast<Index>(term));
  }
  const RMatrix& modal_coefficients() const { return modal_coeffs_; }
  bool real_physical() const { return real_; }
  bool tridiagonal_physical() const { return tridiagonal_; }

  /// Per-term amplitudes for one time step: drift terms 1, controlled terms
  /// take their channel's value.
  std::vector<double> term_amplitudes(std::span<const double> channel_values) const {
    if (static_cast<Index>(channel_values.size()) != channels_)
      throw std::invalid_argument("EnsembleModel: channel count mismatch");
    std::vector<double> out(terms_.size(), 1.0);
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      if (!terms_[t].is_drift())
        out[t] = channel_values[static_cast<std::size_t>(terms_[t].control_index)];
    }
    return out;
  }

  /// Dense embedded Hamiltonian sum_t a_t H_t.
  CMatrix hamiltonian(std::span<const double> amplitudes) const {
    if (amplitudes.size() != terms_.size())
      throw std::invalid_argument("EnsembleModel: amplitude count mismatch");
    CMatrix h = CMatrix::Zero(dim_total(), dim_total());
    for (std::size_t t = 0; t < terms_.size(); ++t) h += amplitudes[t] * embedded_[t];
    return h;
  }

  /// Physical Hamiltonian of modal node j for the given per-term amplitudes.
  CMatrix node_hamiltonian(Index node, std::span<const double> amplitudes) const {
    CMatrix h = CMatrix::Zero(dim_physical_, dim_physical_);
    for (std::size_t t = 0; t < terms_.size(); ++t)
      h += (amplitudes[t] * modal_coefficient(node, t)) * terms_[t].matrix;
    return h;
  }

  /// Moment coordinates -> modal coordinates (Q^T (x) I).
  CVector to_modal(const CVector& moment) const { return apply_basis(moment, true); }
  /// Modal coordinates -> moment coordinates (Q (x) I).
  CVector from_modal(const CVector& modal) const { return apply_basis(modal, false); }
  CMatrix from_modal(const CMatrix& modal) const {
    CMatrix out(modal.rows(), modal.cols());
    for (Index c = 0; c < modal.cols(); ++c) out.col(c) = apply_basis(modal.col(c), false);
    return out;
  }

  friend EnsembleModel embed_hamiltonians(std::vector<HamiltonianTerm> terms,
                                          const ParameterDomain& domain);

 private:
  CVector apply_basis(const CVector& v, bool transpose) const {
    if (v.size() != dim_total()) throw std::invalid_argument("EnsembleModel: state size mismatch");
    Eigen::Map<const CMatrix> blocks(v.data(), dim_physical_, dim_moment_);
    CMatrix mixed = transpose ? CMatrix(blocks * modal_basis_.cast<Complex>())
                              : CMatrix(blocks * modal_basis_.transpose().cast<Complex>());
    return Eigen::Map<const CVector>(mixed.data(), mixed.size());
  }

  ParameterDomain domain_;
  std::vector<HamiltonianTerm> terms_;
  std::vector<CMatrix> embedded_;
  std::vector<std::size_t> controlled_;
  Index dim_physical_ = 0;
  Index dim_moment_ = 0;
  Index channels_ = 0;
  RMatrix modal_basis_;
  std::vector<RVector> axis_nodes_;
  RMatrix modal_coeffs_;
  bool real_ = true;
  bool tridiagonal_ = true;
};

namespace detail {

inline bool is_tridiagonal(const CMatrix& m) {
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i)
      if (std::abs(i - j) > 1 && m(i, j) != Complex(0.0)) return false;
  return true;
}

}  // namespace detail

/// Embeds physical Hamiltonian terms into moment space.
inline EnsembleModel embed_hamiltonians(std::vector<HamiltonianTerm> terms,
                                        const ParameterDomain& domain) {
  domain.validate();
  if (terms.empty()) throw std::invalid_argument("embed_hamiltonians: no terms");
  const Index dim = terms.front().matrix.rows();
  if (dim == 0) throw std::invalid_argument("embed_hamiltonians: empty physical matrix");

  EnsembleModel model;
  model.domain_ = domain;
  model.dim_physical_ = dim;
  model.dim_moment_ = domain.moment_count();

  int max_channel = -1;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const auto& term = terms[t];
    if (term.matrix.rows() != dim || term.matrix.cols() != dim) {
      std::ostringstream msg;
      msg << "embed_hamiltonians: term " << t << " is " << term.matrix.rows() << "x"
          << term.matrix.cols() << ", expected " << dim << "x" << dim;
      throw std::invalid_argument(msg.str());
    }
    if (hermitian_defect(term.matrix) > 1e-12)
      throw std::invalid_argument("embed_hamiltonians: term " + std::to_string(t) +
                                  " is not Hermitian");
    if (term.parameter_index &&
        (*term.parameter_index < 0 || *term.parameter_index >= domain.size()))
      throw std::invalid_argument("embed_hamiltonians: term " + std::to_string(t) +
                                  " references an unknown parameter");
    if (term.control_index < HamiltonianTerm::kDrift)
      throw std::invalid_argument("embed_hamiltonians: invalid control index");
    if (!term.is_drift()) model.controlled_.push_back(t);
    max_channel = std::max(max_channel, term.control_index);
    if (term.matrix.imag().cwiseAbs().maxCoeff() != 0.0) model.real_ = false;
    if (!detail::is_tridiagonal(term.matrix)) model.tridiagonal_ = false;
  }
  model.channels_ = max_channel + 1;

  const auto lengths = domain.axis_lengths();
  std::vector<RMatrix> gammas;
  std::vector<RMatrix> bases;
  for (std::size_t m = 0; m < domain.specs.size(); ++m) {
    gammas.push_back(build_gamma_matrix(domain.specs[m], domain.mode, domain.alignment));
    if (domain.mode == ExpansionMode::Sampling) {
      bases.push_back(RMatrix::Identity(lengths[m], lengths[m]));
      model.axis_nodes_.push_back(gammas.back().diagonal());
    } else {
      Eigen::SelfAdjointEigenSolver<RMatrix> solver(gammas.back());
      if (solver.info() != Eigen::Success)
        throw NumericalError("embed_hamiltonians: Gamma eigendecomposition failed");
      bases.push_back(solver.eigenvectors());
      model.axis_nodes_.push_back(solver.eigenvalues());
    }
  }

  for (const auto& term : terms) {
    CMatrix moment_factor = CMatrix::Identity(1, 1);
    for (std::size_t m = 0; m < domain.specs.size(); ++m) {
      const bool scaled = term.parameter_index && *term.parameter_index == static_cast<int>(m);
      const RMatrix factor = scaled ? gammas[m] : RMatrix::Identity(lengths[m], lengths[m]);
      moment_factor = kron(moment_factor, factor);
    }
    model.embedded_.push_back(kron(moment_factor, term.matrix));
  }

  RMatrix basis = RMatrix::Identity(1, 1);
  for (const auto& q : bases) basis = kron(basis, q);
  model.modal_basis_ = basis;

  model.modal_coeffs_.resize(model.dim_moment_, static_cast<Index>(terms.size()));
  for (Index node = 0; node < model.dim_moment_; ++node) {
    const auto multi = domain.multi_index(node);
    for (std::size_t t = 0; t < terms.size(); ++t) {
      double coeff = 1.0;
      if (terms[t].parameter_index) {
        const auto m = static_cast<std::size_t>(*terms[t].parameter_index);
        coeff = model.axis_nodes_[m](multi[m]);
      }
      model.modal_coeffs_(node, static_cast<Index>(t)) = coeff;
    }
  }
  model.terms_ = std::move(terms);
  return model;
}

/// A parameter-independent physical state lifted into moment space. With the
/// volume-normalized basis used here the constant function has all of its
/// mass in the degree-0 block. In sampling mode every sample carries the
/// state, scaled so that the stacked vector has unit norm.
inline MomentState embed_initial_state(const ParameterDomain& domain, const CVector& psi0) {
  const double norm = psi0.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw std::invalid_argument("embed_initial_state: state must have nonzero finite norm");
  MomentState state;
  state.physical_dim = psi0.size();
  const Index count = domain.moment_count();
  state.amplitudes = CVector::Zero(count * psi0.size());
  if (domain.mode == ExpansionMode::Sampling) {
    const double scale = 1.0 / (norm * std::sqrt(static_cast<double>(count)));
    for (Index m = 0; m < count; ++m) state.amplitudes.segment(m * psi0.size(), psi0.size()) = scale * psi0;
  } else {
    state.block(0) = psi0 / norm;
  }
  return state;
}

/// Product of volume-normalized shifted Legendre polynomials,
/// prod_m sqrt(2 n_m + 1) P_{n_m}(x_m).
inline double legendre_basis_value(const ParameterDomain& domain, std::span<const Index> multi,
                                   std::span<const double> gamma) {
  double value = 1.0;
  for (std::size_t m = 0; m < domain.specs.size(); ++m) {
    const auto& spec = domain.specs[m];
    const auto n = static_cast<unsigned>(multi[m]);
    if (n == 0) continue;
    const double x = std::clamp((gamma[m] - spec.midpoint()) / spec.half_width(), -1.0, 1.0);
    value *= std::sqrt(2.0 * n + 1.0) * std::legendre(n, x);
  }
  return value;
}

inline CVector reconstruct_wavefunction(const ParameterDomain& domain, const MomentState& state,
                                        std::span<const double> gamma) {
  if (domain.mode != ExpansionMode::Legendre)
    throw std::invalid_argument("reconstruct_wavefunction: only defined for Legendre expansions");
  if (!domain.contains(gamma))
    throw std::invalid_argument("reconstruct_wavefunction: parameter outside the design domain");
  if (state.moment_count() != domain.moment_count())
    throw std::invalid_argument("reconstruct_wavefunction: moment count mismatch");
  CVector psi = CVector::Zero(state.physical_dim);
  for (Index n = 0; n < domain.moment_count(); ++n) {
    const auto multi = domain.multi_index(n);
    psi += legendre_basis_value(domain, multi, gamma) * state.block(n);
  }
  return psi;
}

}  // namespace rqoc

#endif  // RQOC_ENSEMBLE_HPP
