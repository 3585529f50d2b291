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

// Strictly convex box-constrained quadratic programs
//
//   minimize   |G x + b|^2 + rho |x|^2 + 2 c^T x + const
//   subject to lower <= x <= upper,  A x = 0,  [l <= C x <= h]
//
// solved exactly by a primal active-set method. Box-only problems are first
// warm-started with a primal-dual active-set pass, which usually identifies
// the optimal active set in a handful of solves; the primal method then
// certifies (or repairs) it. Equality constraints are compressed to an
// orthonormal row basis and handled in range-space form on the free
// variables. Releasing and adding constraints follows Bland's smallest-index
// rule.

#ifndef RQOC_QP_HPP
#define RQOC_QP_HPP

#include "rqoc/linalg.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace rqoc {

/// General two-sided linear inequalities l <= C x <= h (either side may be
/// infinite).
struct LinearInequalities {
  RMatrix matrix;
  RVector lower;
  RVector upper;
};

struct BoxQP {
  RMatrix factor;  // G, m x n (m may be zero)
  RVector offset;  // b, length m
  double rho = 1.0;
  RVector linear;  // c, length n or empty for zero
  double constant = 0.0;
  RVector lower;
  RVector upper;
  RMatrix equality;  // A, p x n or empty
  std::optional<LinearInequalities> inequalities;

  Index size() const { return lower.size(); }
};

struct QPOptions {
  int max_iterations = 0;  // 0 selects 20 n + 200
  int max_pdas_iterations = 30;
  double rank_tolerance = 1e-10;  // relative, for the equality row basis
  bool warm_start = true;
};

struct QPSolution {
  RVector delta_u;
  double objective = 0.0;
  int iterations = 0;
  double kkt_residual = 0.0;  // |projected gradient| / (1 + |gradient|)
  double equality_residual = 0.0;
  bool converged = false;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// H = G^T G + rho I kept dense when G is tall, as the factor G when wide.
class Quadratic {
 public:
  Quadratic(const BoxQP& qp) : rho_(qp.rho) {
    const Index n = qp.size();
    q_ = qp.linear.size() == 0 ? RVector::Zero(n) : qp.linear;
    if (qp.factor.rows() > 0) q_.noalias() += qp.factor.transpose() * qp.offset;
    if (qp.factor.rows() >= n) {
      dense_ = true;
      h_ = RMatrix::Identity(n, n) * rho_;
      h_.selfadjointView<Eigen::Lower>().rankUpdate(qp.factor.transpose());
      h_.triangularView<Eigen::StrictlyUpper>() = h_.transpose();
    } else {
      g_ = qp.factor;
    }
  }

  const RVector& q() const { return q_; }

  RVector apply(const RVector& x) const {
    if (dense_) return h_ * x;
    RVector out = rho_ * x;
    if (g_.rows() > 0) out.noalias() += g_.transpose() * (g_ * x);
    return out;
  }

  RVector gradient(const RVector& x) const { return apply(x) + q_; }

  // Solves H_FF Y = R for the free index set F.
  class FreeSolver {
   public:
    FreeSolver(const Quadratic& quad, const std::vector<Index>& free) : quad_(quad), free_(free) {
      const Index nf = static_cast<Index>(free.size());
      if (nf == 0) return;
      if (quad.dense_) {
        RMatrix hff(nf, nf);
        for (Index j = 0; j < nf; ++j)
          for (Index i = 0; i < nf; ++i) hff(i, j) = quad.h_(free[i], free[j]);
        llt_.compute(hff);
      } else {
        gf_.resize(quad.g_.rows(), nf);
        for (Index j = 0; j < nf; ++j) gf_.col(j) = quad.g_.col(free[static_cast<std::size_t>(j)]);
        woodbury_ = gf_.rows() < nf;
        if (gf_.rows() == 0) {
          diagonal_ = true;
          return;
        }
        if (woodbury_) {
          RMatrix k = RMatrix::Identity(gf_.rows(), gf_.rows()) * quad.rho_;
          k.selfadjointView<Eigen::Lower>().rankUpdate(gf_);
          llt_.compute(k);
        } else {
          RMatrix hff = RMatrix::Identity(nf, nf) * quad.rho_;
          hff.selfadjointView<Eigen::Lower>().rankUpdate(gf_.transpose());
          llt_.compute(hff);
        }
      }
      if (llt_.info() != Eigen::Success) throw NumericalError("qp: free-variable Hessian is not positive definite");
    }

    RMatrix solve(const RMatrix& rhs) const {
      if (rhs.rows() == 0) return rhs;
      if (diagonal_) return rhs / quad_.rho_;
      if (!woodbury_) return llt_.solve(rhs);
      RMatrix out = rhs;
      out.noalias() -= gf_.transpose() * llt_.solve(gf_ * rhs);
      return out / quad_.rho_;
    }

   private:
    const Quadratic& quad_;
    std::vector<Index> free_;
    RMatrix gf_;
    bool woodbury_ = false;
    bool diagonal_ = false;
    Eigen::LLT<RMatrix> llt_;
  };

 private:
  double rho_;
  bool dense_ = false;
  RMatrix h_;
  RMatrix g_;
  RVector q_;
};

// Orthonormal basis (rows) of the row space of A.
inline RMatrix row_basis(const RMatrix& a, Index n, double tolerance) {
  if (a.rows() == 0) return RMatrix(0, n);
  Eigen::ColPivHouseholderQR<RMatrix> qr(a.transpose());
  qr.setThreshold(tolerance);
  const Index rank = qr.rank();
  const RMatrix q = qr.householderQ() * RMatrix::Identity(a.cols(), rank);
  return q.transpose();
}

inline void check_qp(const BoxQP& qp) {
  const Index n = qp.size();
  if (qp.upper.size() != n) throw std::invalid_argument("qp: bound vectors differ in length");
  if (!(qp.rho > 0.0) || !std::isfinite(qp.rho)) throw std::invalid_argument("qp: rho must be positive");
  if (qp.factor.rows() > 0 && qp.factor.cols() != n) throw std::invalid_argument("qp: factor has wrong width");
  if (qp.offset.size() != qp.factor.rows()) throw std::invalid_argument("qp: offset length mismatch");
  if (qp.linear.size() != 0 && qp.linear.size() != n) throw std::invalid_argument("qp: linear term length mismatch");
  if (qp.equality.rows() > 0 && qp.equality.cols() != n)
    throw std::invalid_argument("qp: equality matrix has wrong width");
  if (!qp.factor.allFinite() || !qp.offset.allFinite() || !qp.linear.allFinite() || !qp.equality.allFinite() ||
      !std::isfinite(qp.constant))
    throw std::invalid_argument("qp: non-finite problem data");
  for (Index i = 0; i < n; ++i) {
    if (std::isnan(qp.lower(i)) || std::isnan(qp.upper(i)) || qp.lower(i) > 0.0 || qp.upper(i) < 0.0)
      throw std::invalid_argument("qp: box must contain zero");
  }
  if (qp.inequalities) {
    const auto& in = *qp.inequalities;
    if (in.matrix.cols() != n || in.lower.size() != in.matrix.rows() || in.upper.size() != in.matrix.rows())
      throw std::invalid_argument("qp: inequality shapes mismatch");
    if (!in.matrix.allFinite()) throw std::invalid_argument("qp: non-finite inequality matrix");
    for (Index i = 0; i < in.matrix.rows(); ++i)
      if (!(in.lower(i) <= 0.0 && in.upper(i) >= 0.0))
        throw std::invalid_argument("qp: inequality rows must be satisfied at zero");
  }
}

enum class Activity : signed char { Free = 0, Lower = -1, Upper = 1, Pinned = 2 };

// Primal-dual active-set warm start for box-only problems; returns the final
// iterate and whether the active set settled.
inline bool pdas(const Quadratic& quad, const RVector& lo, const RVector& hi, int max_iterations, RVector& x,
                 int& iterations) {
  const Index n = lo.size();
  std::vector<Activity> set(static_cast<std::size_t>(n), Activity::Free);
  for (Index i = 0; i < n; ++i)
    if (lo(i) == hi(i)) set[static_cast<std::size_t>(i)] = Activity::Pinned;
  for (int it = 0; it < max_iterations; ++it) {
    ++iterations;
    std::vector<Index> free;
    x.setZero(n);
    for (Index i = 0; i < n; ++i) {
      switch (set[static_cast<std::size_t>(i)]) {
        case Activity::Free: free.push_back(i); break;
        case Activity::Lower: x(i) = lo(i); break;
        case Activity::Upper: x(i) = hi(i); break;
        case Activity::Pinned: x(i) = lo(i); break;
      }
    }
    const RVector hx = quad.apply(x);
    RVector rhs(static_cast<Index>(free.size()));
    for (std::size_t j = 0; j < free.size(); ++j) rhs(static_cast<Index>(j)) = -(hx(free[j]) + quad.q()(free[j]));
    const RVector xf = Quadratic::FreeSolver(quad, free).solve(rhs);
    for (std::size_t j = 0; j < free.size(); ++j) x(free[j]) = xf(static_cast<Index>(j));
    const RVector g = quad.gradient(x);

    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      auto& s = set[static_cast<std::size_t>(i)];
      if (s == Activity::Pinned) continue;
      const double lambda = s == Activity::Free ? 0.0 : -g(i);
      Activity next = Activity::Free;
      if (lambda + (x(i) - hi(i)) > 0.0) next = Activity::Upper;
      else if (lambda + (x(i) - lo(i)) < 0.0) next = Activity::Lower;
      if (next != s) {
        s = next;
        changed = true;
      }
    }
    if (!changed) return true;
  }
  return false;
}

}  // namespace detail

inline QPSolution solve_qp(const BoxQP& qp, const QPOptions& options = {}) {
  using detail::Activity;
  detail::check_qp(qp);
  const Index n = qp.size();
  QPSolution sol;
  if (n == 0) {
    sol.delta_u = RVector(0);
    sol.objective = qp.constant + qp.offset.squaredNorm();
    sol.converged = true;
    return sol;
  }
  const detail::Quadratic quad(qp);
  const RMatrix eq = detail::row_basis(qp.equality, n, options.rank_tolerance);
  const Index neq = eq.rows();
  const RMatrix& cin = qp.inequalities ? qp.inequalities->matrix : RMatrix(0, n);
  const Index nin = cin.rows();
  const RVector& lo = qp.lower;
  const RVector& hi = qp.upper;

  RVector x = RVector::Zero(n);
  std::vector<Activity> var(static_cast<std::size_t>(n), Activity::Free);
  std::vector<Activity> row(static_cast<std::size_t>(nin), Activity::Free);
  for (Index i = 0; i < n; ++i)
    if (lo(i) == hi(i)) var[static_cast<std::size_t>(i)] = Activity::Pinned;

  if (neq >= n) {
    // Only the origin satisfies A x = 0.
    sol.delta_u = x;
    sol.converged = true;
  } else {
    if (options.warm_start && neq == 0 && nin == 0) {
      RVector xp;
      detail::pdas(quad, lo, hi, options.max_pdas_iterations, xp, sol.iterations);
      x = xp.cwiseMax(lo).cwiseMin(hi);
    }
    for (Index i = 0; i < n; ++i) {
      auto& s = var[static_cast<std::size_t>(i)];
      if (s == Activity::Pinned) continue;
      if (x(i) == lo(i)) s = Activity::Lower;
      else if (x(i) == hi(i)) s = Activity::Upper;
    }

    const int max_iterations = options.max_iterations > 0 ? options.max_iterations : static_cast<int>(20 * n + 200);
    for (int it = 0; it < max_iterations; ++it) {
      ++sol.iterations;
      std::vector<Index> free;
      for (Index i = 0; i < n; ++i)
        if (var[static_cast<std::size_t>(i)] == Activity::Free) free.push_back(i);
      const Index nf = static_cast<Index>(free.size());
      std::vector<Index> active_rows;
      for (Index r = 0; r < nin; ++r)
        if (row[static_cast<std::size_t>(r)] != Activity::Free) active_rows.push_back(r);
      const Index nc = neq + static_cast<Index>(active_rows.size());

      // Working-set constraint rows restricted to the free variables.
      RMatrix cf(nc, nf);
      for (Index j = 0; j < nf; ++j) {
        const Index v = free[static_cast<std::size_t>(j)];
        if (neq > 0) cf.block(0, j, neq, 1) = eq.col(v);
        for (std::size_t r = 0; r < active_rows.size(); ++r) cf(neq + static_cast<Index>(r), j) = cin(active_rows[r], v);
      }

      const RVector g = quad.gradient(x);
      RVector gf(nf);
      for (Index j = 0; j < nf; ++j) gf(j) = g(free[static_cast<std::size_t>(j)]);

      // Step p minimizing the model on the working set: p = -H^-1 (g - C^T nu).
      RVector pf = RVector::Zero(nf);
      RVector nu = RVector::Zero(nc);
      if (nf > 0) {
        const detail::Quadratic::FreeSolver solver(quad, free);
        RMatrix rhs(nf, 1 + nc);
        rhs.col(0) = gf;
        if (nc > 0) rhs.rightCols(nc) = cf.transpose();
        const RMatrix sol_rhs = solver.solve(rhs);
        if (nc > 0) {
          const RMatrix s = cf * sol_rhs.rightCols(nc);
          Eigen::CompleteOrthogonalDecomposition<RMatrix> cod(s);
          cod.setThreshold(1e-13);
          nu = cod.solve(RVector(cf * sol_rhs.col(0)));
          pf = -(sol_rhs.col(0) - sol_rhs.rightCols(nc) * nu);
        } else {
          pf = -sol_rhs.col(0);
        }
      }

      // Ratio test against constraints outside the working set.
      double alpha = 1.0;
      Index blocking = -1;
      Activity blocking_side = Activity::Free;
      for (Index j = 0; j < nf; ++j) {
        const Index v = free[static_cast<std::size_t>(j)];
        const double p = pf(j);
        double a = detail::kInf;
        Activity side = Activity::Free;
        if (p < 0.0 && std::isfinite(lo(v))) {
          a = (lo(v) - x(v)) / p;
          side = Activity::Lower;
        } else if (p > 0.0 && std::isfinite(hi(v))) {
          a = (hi(v) - x(v)) / p;
          side = Activity::Upper;
        }
        a = std::max(a, 0.0);
        if (a < alpha) {
          alpha = a;
          blocking = v;
          blocking_side = side;
        }
      }
      RVector step = RVector::Zero(n);
      for (Index j = 0; j < nf; ++j) step(free[static_cast<std::size_t>(j)]) = pf(j);
      if (nin > 0) {
        const RVector cx = cin * x;
        const RVector cp = cin * step;
        for (Index r = 0; r < nin; ++r) {
          if (row[static_cast<std::size_t>(r)] != Activity::Free) continue;
          double a = detail::kInf;
          Activity side = Activity::Free;
          const auto& in = *qp.inequalities;
          if (cp(r) < 0.0 && std::isfinite(in.lower(r))) {
            a = (in.lower(r) - cx(r)) / cp(r);
            side = Activity::Lower;
          } else if (cp(r) > 0.0 && std::isfinite(in.upper(r))) {
            a = (in.upper(r) - cx(r)) / cp(r);
            side = Activity::Upper;
          }
          a = std::max(a, 0.0);
          if (a < alpha) {
            alpha = a;
            blocking = n + r;
            blocking_side = side;
          }
        }
      }

      x += alpha * step;
      if (blocking >= 0) {
        if (blocking < n) {
          x(blocking) = blocking_side == Activity::Lower ? lo(blocking) : hi(blocking);
          var[static_cast<std::size_t>(blocking)] = blocking_side;
        } else {
          row[static_cast<std::size_t>(blocking - n)] = blocking_side;
        }
        x = x.cwiseMax(lo).cwiseMin(hi);
        continue;
      }
      x = x.cwiseMax(lo).cwiseMin(hi);

      // Full step: x is optimal on the working set; check multiplier signs.
      const RVector g_new = quad.gradient(x);
      const double scale = 1e-12 * (1.0 + g_new.lpNorm<Eigen::Infinity>());
      RVector ctnu = RVector::Zero(n);
      if (neq > 0) ctnu.noalias() += eq.transpose() * nu.head(neq);
      for (std::size_t r = 0; r < active_rows.size(); ++r)
        ctnu.noalias() += nu(neq + static_cast<Index>(r)) * cin.row(active_rows[r]).transpose();
      Index release = -1;
      for (Index i = 0; i < n && release < 0; ++i) {
        const auto s = var[static_cast<std::size_t>(i)];
        const double z = g_new(i) - ctnu(i);
        if ((s == Activity::Lower && z < -scale) || (s == Activity::Upper && z > scale)) release = i;
      }
      for (std::size_t r = 0; r < active_rows.size() && release < 0; ++r) {
        const double m = nu(neq + static_cast<Index>(r));
        const auto s = row[static_cast<std::size_t>(active_rows[r])];
        if ((s == Activity::Lower && m < -scale) || (s == Activity::Upper && m > scale))
          release = n + active_rows[r];
      }
      if (release < 0) {
        sol.converged = true;
        break;
      }
      if (release < n) var[static_cast<std::size_t>(release)] = Activity::Free;
      else row[static_cast<std::size_t>(release - n)] = Activity::Free;
    }
    sol.delta_u = x;
  }

  // Certification on the final working set.
  const RVector g = quad.gradient(x);
  std::vector<Index> free;
  for (Index i = 0; i < n; ++i)
    if (var[static_cast<std::size_t>(i)] == Activity::Free) free.push_back(i);
  RMatrix working(0, n);
  {
    std::vector<Index> rows;
    for (Index r = 0; r < nin; ++r)
      if (row[static_cast<std::size_t>(r)] != Activity::Free) rows.push_back(r);
    working.resize(neq + static_cast<Index>(rows.size()), n);
    if (neq > 0) working.topRows(neq) = eq;
    for (std::size_t r = 0; r < rows.size(); ++r) working.row(neq + static_cast<Index>(r)) = cin.row(rows[r]);
  }
  double violation = 0.0;
  if (neq < n) {
    const Index nf = static_cast<Index>(free.size());
    RMatrix cf(working.rows(), nf);
    RVector gf(nf);
    for (Index j = 0; j < nf; ++j) {
      cf.col(j) = working.col(free[static_cast<std::size_t>(j)]);
      gf(j) = g(free[static_cast<std::size_t>(j)]);
    }
    RVector nu = RVector::Zero(working.rows());
    if (working.rows() > 0 && nf > 0) nu = cf.transpose().completeOrthogonalDecomposition().solve(gf);
    const RVector projected = g - working.transpose() * nu;
    for (Index i = 0; i < n; ++i) {
      const auto s = var[static_cast<std::size_t>(i)];
      const double z = projected(i);
      if (s == Activity::Free) violation += z * z;
      else if (s == Activity::Lower && z < 0.0) violation += z * z;
      else if (s == Activity::Upper && z > 0.0) violation += z * z;
    }
  }
  sol.kkt_residual = std::sqrt(violation) / (1.0 + g.norm());
  sol.equality_residual = qp.equality.rows() > 0 ? (qp.equality * x).norm() : 0.0;
  const RVector lin = qp.linear.size() == 0 ? RVector::Zero(n) : qp.linear;
  sol.objective = qp.rho * x.squaredNorm() + 2.0 * lin.dot(x) + qp.constant;
  if (qp.factor.rows() > 0) sol.objective += (qp.factor * x + qp.offset).squaredNorm();
  return sol;
}

/// argmin |J du + r|^2 + lambda |du|^2 over lower <= du <= upper.
inline QPSolution solve_fidelity_qp(const RMatrix& jacobian, const RVector& residual, double lambda,
                                    const RVector& lower, const RVector& upper, const QPOptions& options = {}) {
  if (!(lambda > 0.0)) throw std::invalid_argument("solve_fidelity_qp: lambda must be positive");
  if (jacobian.rows() != residual.size()) throw std::invalid_argument("solve_fidelity_qp: residual length mismatch");
  if (!residual.allFinite()) throw std::invalid_argument("solve_fidelity_qp: non-finite residual");
  BoxQP qp;
  qp.factor = jacobian;
  qp.offset = residual;
  qp.rho = lambda;
  qp.lower = lower;
  qp.upper = upper;
  if (jacobian.cols() != lower.size()) throw std::invalid_argument("solve_fidelity_qp: box length mismatch");
  return solve_qp(qp, options);
}

/// argmin |u + du|^2 + mu |du|^2 over the box intersected with ker(P J).
inline QPSolution solve_energy_qp(const RVector& u, const RMatrix& jacobian, const RMatrix& projector, double mu,
                                  const RVector& lower, const RVector& upper, const QPOptions& options = {}) {
  if (!(mu > 0.0)) throw std::invalid_argument("solve_energy_qp: mu must be positive");
  if (!u.allFinite()) throw std::invalid_argument("solve_energy_qp: non-finite control");
  if (u.size() != lower.size()) throw std::invalid_argument("solve_energy_qp: box length mismatch");
  BoxQP qp;
  qp.factor = RMatrix(0, u.size());
  qp.offset = RVector(0);
  qp.rho = 1.0 + mu;
  qp.linear = u;
  qp.constant = u.squaredNorm();
  qp.lower = lower;
  qp.upper = upper;
  if (jacobian.size() > 0) {
    if (jacobian.cols() != u.size() || projector.cols() != jacobian.rows())
      throw std::invalid_argument("solve_energy_qp: constraint shapes mismatch");
    qp.equality = projector * jacobian;
  } else {
    qp.equality = RMatrix(0, u.size());
  }
  return solve_qp(qp, options);
}

/// I - psi psi^H, the projector onto the complement of the target.
inline CMatrix build_projection(const CVector& target) {
  const double norm = target.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("build_projection: zero target");
  const CVector t = target / norm;
  return CMatrix::Identity(t.size(), t.size()) - t * t.adjoint();
}

/// The same projector acting on stacked [Re; Im] vectors: removes the real
/// directions of psi and i psi.
inline RMatrix real_projection(const CVector& target) {
  const double norm = target.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("real_projection: zero target");
  const CVector t = target / norm;
  const Index d = t.size();
  RVector a(2 * d), b(2 * d);
  a << t.real(), t.imag();
  b << -t.imag(), t.real();
  return RMatrix::Identity(2 * d, 2 * d) - a * a.transpose() - b * b.transpose();
}

}  // namespace rqoc

#endif  // RQOC_QP_HPP
