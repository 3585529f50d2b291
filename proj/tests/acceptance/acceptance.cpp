// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria (9 only with RQOC_STRETCH=1)
//   acceptance 1 2 10     selected criteria
//
// Exit status is 0 when every selected criterion ran to completion, whatever
// its verdict, so ctest tracks crashes and regressions in the harness while
// the verdict lines carry the results. RQOC_ACCEPTANCE_STRICT=1 turns any
// FAIL into a nonzero exit.

#include "rqoc/bragg.hpp"
#include "rqoc/synth.hpp"
#include "qp_oracle.hpp"
#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace {

using namespace rqoc;

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Clock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double minutes() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  }
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Every synthesis run feeds the stage-2 contract check.
std::vector<SynthesisReport> g_synthesized;

void record(const SynthesisReport& r) { g_synthesized.push_back(r); }

// ---------------------------------------------------------------------------

Verdict moment_reduction() {
  std::mt19937_64 rng(101);
  const Index dim = 6;
  ParameterDomain domain;
  domain.specs = {{0.7, 1.3, 0}, {-0.2, 0.4, 0}};
  const CMatrix h0 = testing::random_hermitian(dim, rng);
  const CMatrix h1 = testing::random_hermitian(dim, rng);
  const CMatrix h2 = testing::random_hermitian(dim, rng);
  const auto model = embed_hamiltonians(
      {{h0, HamiltonianTerm::kDrift, std::nullopt}, {h1, 0, 0}, {h2, 1, 1}}, domain);
  const TimeGrid grid{2.0, 80};
  RMatrix u(grid.steps, 2);
  std::uniform_real_distribution<double> amp(-2.0, 2.0);
  for (Index k = 0; k < u.rows(); ++k) u(k, 0) = amp(rng), u(k, 1) = amp(rng);
  const ControlPulse pulse(grid, u, RVector::Constant(2, -2.0), RVector::Constant(2, 2.0));
  const CVector psi0 = testing::random_unit_vector(dim, rng);
  const auto run = propagate(model, pulse, embed_initial_state(domain, psi0));

  // single system at the interval midpoints, dense exponential per step
  const double g0 = domain.specs[0].midpoint(), g1 = domain.specs[1].midpoint();
  CVector psi = psi0;
  double worst = 0.0;
  for (Index k = 0; k < grid.steps; ++k) {
    const CMatrix h = h0 + u(k, 0) * g0 * h1 + u(k, 1) * g1 * h2;
    psi = expm(CMatrix(Complex(0.0, -grid.dt()) * h)) * psi;
    worst = std::max(worst, (run.states[static_cast<std::size_t>(k + 1)] - psi).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-12, fmt("max entrywise deviation %.2e over %d steps (bound 1e-12)", worst, grid.steps)};
}

Verdict jacobian_check() {
  const BraggConfig b;
  const auto model = build_design_model(b);
  const auto psi0 = initial_state(b);
  const ControlPulse pulse = random_bragg_pulse(b, 7);
  const auto lin = linearize(model, pulse, psi0);
  const double h = 1e-5;
  double worst = 0.0;
  RVector u = pulse.values().col(0);
  for (Index k = 0; k < pulse.steps(); ++k) {
    RVector up = u, dn = u;
    up(k) += h;
    dn(k) -= h;
    // unbounded copies, so a sample near the floor is not clipped
    const CVector plus = propagate(model, ControlPulse(b.grid(), up, -1e9, 1e9), psi0).terminal();
    const CVector minus = propagate(model, ControlPulse(b.grid(), dn, -1e9, 1e9), psi0).terminal();
    const CVector fd = (plus - minus) / (2.0 * h);
    const double rel = (lin.jacobian.matrix.col(k) - fd).norm() / std::max(fd.norm(), 1e-300);
    worst = std::max(worst, rel);
  }
  return {worst < 1e-6, fmt("max column relative error %.2e over %d columns (bound 1e-6)", worst,
                            static_cast<int>(pulse.steps()))};
}

bool surrogate_monotone(const SynthesisReport& r) {
  for (std::size_t i = 1; i < r.surrogate_trace.size(); ++i)
    if (r.surrogate_trace[i] > r.surrogate_trace[i - 1]) return false;
  return true;
}

Verdict deterministic_convergence() {
  SolverConfig s;
  std::ostringstream detail;
  bool pass = true;
  for (int n0 = 1; n0 <= 3; ++n0) {
    BraggConfig b;
    b.n0 = n0;
    int ok = 0, monotone = 0, iterations = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      s.seed = seed;
      const auto r = synthesize_bragg(b, random_bragg_pulse(b, seed), s);
      record(r);
      ok += r.stage1_error < 1e-3;
      monotone += surrogate_monotone(r);
      iterations += r.stage1_iterations;
    }
    pass = pass && ok >= 9 && monotone == 10;
    detail << "n0=" << n0 << ": " << ok << "/10 below 1e-3, " << monotone << "/10 monotone, mean "
           << iterations / 10.0 << " iterations; ";
  }
  return {pass, detail.str()};
}

// Shared by criteria 4 and 7.
std::vector<SynthesisReport> ladder_to_five() {
  static std::optional<std::vector<SynthesisReport>> cached;
  if (!cached) {
    SolverConfig s;
    s.seed = 1;
    cached = momentum_ladder(BraggConfig{}, 5, s);
    for (const auto& r : *cached) record(r);
  }
  return *cached;
}

Verdict intensity_bound() {
  const auto ladder = ladder_to_five();
  if (ladder.size() < 5 || !ladder.back().converged)
    return {false, fmt("ladder stopped at n0=%d (%s)", static_cast<int>(ladder.size()), ladder.back().status.c_str())};
  const auto& r = ladder.back();
  const double max_u = r.final_pulse.values().maxCoeff();
  const auto truth = simulate_signed(r.final_pulse, 0.0, 1.0, 5, BraggConfig{.n0 = 5}.order());
  const double reduction = 124.0 / max_u;
  const bool pass = max_u <= 30.0 && reduction >= 4.0 && r.stage1_error < 1e-3;
  return {pass, fmt("n0=5: max u/omega_r = %.2f (bound 30), 124/max u = %.1f (need >= 4), stage-1 error %.1e, "
                    "verified error %.1e",
                    max_u, reduction, r.stage1_error, truth.error)};
}

BraggConfig wide_intervals(int n0, int degree, ExpansionMode mode) {
  BraggConfig b;
  b.n0 = n0;
  b.doppler_min = -0.4;
  b.doppler_max = 0.4;
  b.intensity_min = 0.6;
  b.intensity_max = 1.4;
  b.doppler_degree = b.intensity_degree = degree;
  b.mode = mode;
  return b;
}

SolverConfig robust_solver() {
  SolverConfig s;
  s.continuation_stages = 8;
  s.max_iterations = 40;
  s.final_stage_iterations = 120;
  s.seed = 1;
  return s;
}

Verdict robust_table() {
  const BraggConfig b = wide_intervals(1, 3, ExpansionMode::Legendre);
  const SolverConfig s = robust_solver();
  const Clock clock;
  const auto r = robust_synthesis(b, random_bragg_pulse(b, s.seed), s);
  record(r);
  const double minutes = clock.minutes();
  const auto g = robustness_grid(r.final_pulse, b, {9, 9});
  const bool pass = g.mean_error <= 0.06 && g.max_error <= 0.35 && minutes <= 30.0;
  return {pass, fmt("degree 3, 9x9 grid: mean %.3f (<= 0.06), max %.3f (<= 0.35), max u %.2f, mean |du| %.3f, "
                    "design error %.1e, %.1f min (<= 30)",
                    g.mean_error, g.max_error, g.pulse.max_u, g.pulse.mean_du, r.stage1_error, minutes)};
}

Verdict legendre_vs_sampling() {
  SolverConfig s = robust_solver();
  s.continuation_stages = 4;
  s.final_stage_iterations.reset();
  std::ostringstream detail;
  bool pass = true;
  for (int n0 : {1, 2}) {
    int wins = 0;
    detail << "n0=" << n0 << ":";
    for (int d = 1; d <= 4; ++d) {
      const BraggConfig leg = wide_intervals(n0, d, ExpansionMode::Legendre);
      const BraggConfig smp = wide_intervals(n0, d, ExpansionMode::Sampling);  // d + 1 samples
      const auto rl = robust_synthesis(leg, random_bragg_pulse(leg, s.seed), s);
      const auto rs = robust_synthesis(smp, random_bragg_pulse(smp, s.seed), s);
      record(rl);
      record(rs);
      const double el = robustness_grid(rl.final_pulse, leg, {9, 9}).mean_error;
      const double es = robustness_grid(rs.final_pulse, smp, {9, 9}).mean_error;
      wins += el < es;
      detail << fmt(" d=%d %.3f vs %.3f;", d, el, es);
    }
    detail << " Legendre lower in " << wins << "/4. ";
    pass = pass && wins >= 3;
  }
  return {pass, detail.str()};
}

Verdict filter_shape() {
  const auto ladder = ladder_to_five();
  if (ladder.size() < 5 || !ladder.back().converged) return {false, "ladder to n0=5 did not converge"};
  std::ostringstream detail;
  bool pass = true;
  double reach[2] = {0.0, 0.0};
  int i = 0;
  for (int n0 : {1, 5}) {
    const auto sweep = filter_sweep(ladder[static_cast<std::size_t>(n0 - 1)].final_pulse, n0, 18 + 2 * n0);
    const double low = sweep.probabilities.front();
    const double nyquist = sweep.probabilities.back();
    reach[i++] = sweep.cutoff_reaching(0.9);
    pass = pass && low < 0.1 && nyquist > 0.9;
    detail << fmt("n0=%d: P(lowest) %.3f, P(Nyquist) %.3f, reaches 0.9 at %.2f; ", n0, low, nyquist, reach[i - 1]);
  }
  pass = pass && reach[1] > reach[0];
  return {pass, detail.str()};
}

Verdict stage2_contract() {
  int checked = 0, bad = 0;
  double worst_drift = 0.0;
  for (const auto& r : g_synthesized) {
    if (r.energy_trace.empty()) continue;
    ++checked;
    bool ok = true;
    for (std::size_t i = 1; i < r.energy_trace.size(); ++i) ok = ok && r.energy_trace[i] <= r.energy_trace[i - 1];
    ok = ok && r.stage2_error_drift <= 10.0 * 1e-3;
    worst_drift = std::max(worst_drift, r.stage2_error_drift);
    bad += !ok;
  }
  if (checked == 0) {
    // run something so the property is exercised on its own
    const auto r = synthesize_bragg(BraggConfig{}, random_bragg_pulse(BraggConfig{}, 1), SolverConfig{});
    record(r);
    return stage2_contract();
  }
  return {bad == 0, fmt("%d stage-2 runs: %d violations, worst drift %.1e (bound 1e-2)", checked, bad, worst_drift)};
}

Verdict high_momentum() {
  BraggConfig b;
  b.amplitude_bound = 60.0;
  SolverConfig s;
  s.seed = 1;
  const Clock clock;
  const auto ladder = momentum_ladder(b, 20, s);
  for (const auto& r : ladder) record(r);
  const auto& last = ladder.back();
  const bool pass = ladder.size() == 20 && last.final_error < 1e-2;
  return {pass, fmt("reached n0=%d, final error %.1e (< 1e-2), %.1f min", static_cast<int>(ladder.size()),
                    last.final_error, clock.minutes())};
}

Verdict qp_oracle() {
  std::mt19937_64 rng(1010);
  int matched = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = std::uniform_int_distribution<Index>(1, 12)(rng);
    const Index p = trial % 2 ? std::uniform_int_distribution<Index>(0, n - 1)(rng) : 0;
    const BoxQP qp = testing::random_qp(rng, n, p);
    const auto oracle = testing::brute_force_qp(qp);
    const auto s = solve_qp(qp);
    if (!oracle) continue;
    const double err = (s.delta_u - *oracle).lpNorm<Eigen::Infinity>();
    worst = std::max(worst, err);
    matched += err <= 1e-8;
  }
  return {matched == 200, fmt("%d/200 match brute force, worst deviation %.1e (bound 1e-8)", matched, worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Verdict()>>> criteria{
      {1, {"moment reduction exactness", moment_reduction}},
      {2, {"Jacobian vs central differences", jacobian_check}},
      {3, {"deterministic convergence n0=1..3", deterministic_convergence}},
      {4, {"pulse intensity bound n0=5", intensity_bound}},
      {5, {"robust degree-3 design", robust_table}},
      {6, {"Legendre beats sampling", legendre_vs_sampling}},
      {7, {"filter sweep shape", filter_shape}},
      {8, {"stage-2 contract", stage2_contract}},
      {9, {"high-momentum ladder (stretch)", high_momentum}},
      {10, {"QP oracle equivalence", qp_oracle}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const bool stretch = std::getenv("RQOC_STRETCH") && std::string(std::getenv("RQOC_STRETCH")) == "1";
  const bool strict = std::getenv("RQOC_ACCEPTANCE_STRICT") && std::string(std::getenv("RQOC_ACCEPTANCE_STRICT")) == "1";

  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    // criterion 8 checks the runs of the others, so it goes last
    if (id == 8) continue;
    if (id == 9 && !stretch) {
      std::cout << "AC9  SKIP " << entry.first << ": set RQOC_STRETCH=1 to run" << std::endl;
      continue;
    }
    const Clock clock;
    const Verdict v = entry.second();
    failed += !v.pass;
    std::cout << "AC" << id << (id < 10 ? "  " : " ") << (v.pass ? "PASS " : "FAIL ") << entry.first << ": "
              << v.detail << fmt(" [%.1f min]", clock.minutes()) << std::endl;
  }
  if (selected.empty() || selected.count(8)) {
    const Clock clock;
    const Verdict v = stage2_contract();
    failed += !v.pass;
    std::cout << "AC8  " << (v.pass ? "PASS " : "FAIL ") << "stage-2 contract: " << v.detail
              << fmt(" [%.1f min]", clock.minutes()) << std::endl;
  }
  return strict && failed > 0 ? 1 : 0;
}
