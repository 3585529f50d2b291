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

// Batch experiments: JSON configuration, the five recipes, and their
// artifacts (pulse files, a JSON report, CSV data, a printed summary).
//
// Independent runs (seeds, designs) go through parallel_for with one
// result slot each; all files are written afterwards from the collected
// results, so the artifacts do not depend on scheduling. Report fields
// named `clock_minutes` are the only wall-clock values.

#ifndef RQOC_EXPERIMENT_HPP
#define RQOC_EXPERIMENT_HPP

#include "rqoc/bragg.hpp"
#include "rqoc/io.hpp"
#include "rqoc/synth.hpp"

#include "json.hpp"  // vendored nlohmann/json

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

namespace rqoc {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Recipe { Ladder, Robust, Compare, Verify, FilterSweep };

inline const char* recipe_name(Recipe r) {
  switch (r) {
    case Recipe::Ladder: return "ladder";
    case Recipe::Robust: return "robust";
    case Recipe::Compare: return "compare";
    case Recipe::Verify: return "verify";
    case Recipe::FilterSweep: return "filtersweep";
  }
  return "?";
}

inline Recipe parse_recipe(const std::string& name) {
  if (name == "ladder") return Recipe::Ladder;
  if (name == "robust" || name == "synth") return Recipe::Robust;
  if (name == "compare") return Recipe::Compare;
  if (name == "verify") return Recipe::Verify;
  if (name == "filtersweep") return Recipe::FilterSweep;
  throw ConfigError("unknown recipe '" + name + "'");
}

struct ExperimentConfig {
  Recipe recipe = Recipe::Robust;
  BraggConfig bragg;
  SolverConfig solver;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "rqoc-out";
  int threads = 1;  // 0 = auto
  GridShape grid;

  int ladder_n0 = 3;                   // ladder: last rung
  std::vector<int> targets{1};         // compare, filtersweep: n0 values
  std::vector<int> degrees{1, 2, 3, 4};  // compare: Legendre degrees
  std::vector<int> samples{2, 3, 4, 5};  // compare: samples per interval
  std::vector<std::filesystem::path> pulses;  // verify, filtersweep: inputs
  int filter_order = 4;
  double omega_r_hz = 7660.0;  // report-time unit conversion only
};

// ---------------------------------------------------------------------------
// JSON mapping. Missing keys keep their defaults; unknown keys are errors.

namespace detail {

inline void check_keys(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

template <typename T>
void read_optional(const Json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  read(j, key, v, where);
  out = v;
}

inline void read_interval(const Json& j, const char* key, double& lo, double& hi, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError(where + "." + key + ": expected [min, max]");
  lo = v[0].get<double>();
  hi = v[1].get<double>();
}

}  // namespace detail

inline Json to_json(const BraggConfig& b) {
  const char* basis = b.basis == DesignBasis::Folded ? "folded" : b.basis == DesignBasis::Signed ? "signed" : "auto";
  return Json{{"n0", b.n0},
              {"truncation", b.truncation},
              {"doppler", {b.doppler_min, b.doppler_max}},
              {"intensity", {b.intensity_min, b.intensity_max}},
              {"doppler_degree", b.doppler_degree},
              {"intensity_degree", b.intensity_degree},
              {"mode", b.mode == ExpansionMode::Legendre ? "legendre" : "sampling"},
              {"basis", basis},
              {"amplitude_bound", b.amplitude_bound},
              {"horizon", b.horizon},
              {"steps", b.steps}};
}

inline BraggConfig bragg_from_json(const Json& j, BraggConfig b = {}) {
  const std::string w = "bragg";
  detail::check_keys(j, {"n0", "truncation", "doppler", "intensity", "doppler_degree", "intensity_degree", "mode",
                         "basis", "amplitude_bound", "horizon", "steps"},
                     w);
  detail::read(j, "n0", b.n0, w);
  detail::read(j, "truncation", b.truncation, w);
  detail::read_interval(j, "doppler", b.doppler_min, b.doppler_max, w);
  detail::read_interval(j, "intensity", b.intensity_min, b.intensity_max, w);
  detail::read(j, "doppler_degree", b.doppler_degree, w);
  detail::read(j, "intensity_degree", b.intensity_degree, w);
  if (j.contains("mode")) {
    std::string m;
    detail::read(j, "mode", m, w);
    if (m == "legendre") b.mode = ExpansionMode::Legendre;
    else if (m == "sampling") b.mode = ExpansionMode::Sampling;
    else throw ConfigError("bragg.mode: expected legendre or sampling");
  }
  if (j.contains("basis")) {
    std::string m;
    detail::read(j, "basis", m, w);
    if (m == "auto") b.basis = DesignBasis::Auto;
    else if (m == "folded") b.basis = DesignBasis::Folded;
    else if (m == "signed") b.basis = DesignBasis::Signed;
    else throw ConfigError("bragg.basis: expected auto, folded or signed");
  }
  detail::read(j, "amplitude_bound", b.amplitude_bound, w);
  detail::read(j, "horizon", b.horizon, w);
  detail::read(j, "steps", b.steps, w);
  return b;
}

inline Json to_json(const SolverConfig& s) {
  return Json{{"lambda_init", s.lambda_init ? Json(*s.lambda_init) : Json(nullptr)},
              {"lambda_scale", s.lambda_scale},
              {"lambda_decay", s.lambda_decay},
              {"lambda_min", s.lambda_min},
              {"mu_init", s.mu_init},
              {"mu_decay", s.mu_decay},
              {"mu_min", s.mu_min},
              {"stall_threshold", s.stall_threshold},
              {"decay_on_gain", s.decay_on_gain},
              {"error_tolerance", s.error_tolerance},
              {"drift_budget", s.drift_budget ? Json(*s.drift_budget) : Json(nullptr)},
              {"max_iterations", s.max_iterations},
              {"max_energy_iterations", s.max_energy_iterations},
              {"max_energy_retries", s.max_energy_retries},
              {"energy_stage", s.energy_stage},
              {"alignment", s.alignment == TargetAlignment::PerNode ? "per_node" : "global"},
              {"continuation_stages", s.continuation_stages},
              {"final_stage_iterations", s.final_stage_iterations ? Json(*s.final_stage_iterations) : Json(nullptr)}};
}

inline SolverConfig solver_from_json(const Json& j, SolverConfig s = {}) {
  const std::string w = "solver";
  detail::check_keys(j, {"lambda_init", "lambda_scale", "lambda_decay", "lambda_min", "mu_init", "mu_decay", "mu_min",
                         "stall_threshold", "decay_on_gain", "error_tolerance", "drift_budget", "max_iterations",
                         "max_energy_iterations", "max_energy_retries", "energy_stage", "alignment",
                         "continuation_stages", "final_stage_iterations"},
                     w);
  detail::read_optional(j, "lambda_init", s.lambda_init, w);
  detail::read(j, "lambda_scale", s.lambda_scale, w);
  detail::read(j, "lambda_decay", s.lambda_decay, w);
  detail::read(j, "lambda_min", s.lambda_min, w);
  detail::read(j, "mu_init", s.mu_init, w);
  detail::read(j, "mu_decay", s.mu_decay, w);
  detail::read(j, "mu_min", s.mu_min, w);
  detail::read(j, "stall_threshold", s.stall_threshold, w);
  detail::read(j, "decay_on_gain", s.decay_on_gain, w);
  detail::read(j, "error_tolerance", s.error_tolerance, w);
  detail::read_optional(j, "drift_budget", s.drift_budget, w);
  detail::read(j, "max_iterations", s.max_iterations, w);
  detail::read(j, "max_energy_iterations", s.max_energy_iterations, w);
  detail::read(j, "max_energy_retries", s.max_energy_retries, w);
  detail::read(j, "energy_stage", s.energy_stage, w);
  if (j.contains("alignment")) {
    std::string a;
    detail::read(j, "alignment", a, w);
    if (a == "per_node") s.alignment = TargetAlignment::PerNode;
    else if (a == "global") s.alignment = TargetAlignment::Global;
    else throw ConfigError("solver.alignment: expected per_node or global");
  }
  detail::read(j, "continuation_stages", s.continuation_stages, w);
  detail::read_optional(j, "final_stage_iterations", s.final_stage_iterations, w);
  return s;
}

inline Json to_json(const ExperimentConfig& c) {
  Json pulses = Json::array();
  for (const auto& p : c.pulses) pulses.push_back(p.generic_string());
  return Json{{"recipe", recipe_name(c.recipe)},
              {"bragg", to_json(c.bragg)},
              {"solver", to_json(c.solver)},
              {"seeds", c.seeds},
              {"output_dir", c.output_dir.generic_string()},
              {"threads", c.threads == 0 ? Json("auto") : Json(c.threads)},
              {"grid", {c.grid.doppler, c.grid.intensity}},
              {"ladder_n0", c.ladder_n0},
              {"targets", c.targets},
              {"degrees", c.degrees},
              {"samples", c.samples},
              {"pulses", pulses},
              {"filter_order", c.filter_order},
              {"omega_r_hz", c.omega_r_hz}};
}

inline ExperimentConfig config_from_json(const Json& j) {
  const std::string w = "config";
  detail::check_keys(j, {"recipe", "bragg", "solver", "seeds", "output_dir", "threads", "grid", "ladder_n0", "targets",
                         "degrees", "samples", "pulses", "filter_order", "omega_r_hz"},
                     w);
  ExperimentConfig c;
  if (j.contains("recipe")) {
    std::string r;
    detail::read(j, "recipe", r, w);
    c.recipe = parse_recipe(r);
  }
  if (j.contains("bragg")) c.bragg = bragg_from_json(j.at("bragg"));
  if (j.contains("solver")) c.solver = solver_from_json(j.at("solver"));
  detail::read(j, "seeds", c.seeds, w);
  if (j.contains("output_dir")) {
    std::string out;
    detail::read(j, "output_dir", out, w);
    c.output_dir = out;
  }
  if (j.contains("threads")) {
    const auto& t = j.at("threads");
    if (t.is_string() && t.get<std::string>() == "auto") c.threads = 0;
    else detail::read(j, "threads", c.threads, w);
  }
  if (j.contains("grid")) {
    std::vector<int> g;
    detail::read(j, "grid", g, w);
    if (g.size() != 2) throw ConfigError("config.grid: expected [doppler, intensity]");
    c.grid = {g[0], g[1]};
  }
  detail::read(j, "ladder_n0", c.ladder_n0, w);
  detail::read(j, "targets", c.targets, w);
  detail::read(j, "degrees", c.degrees, w);
  detail::read(j, "samples", c.samples, w);
  if (j.contains("pulses")) {
    std::vector<std::string> p;
    detail::read(j, "pulses", p, w);
    c.pulses.assign(p.begin(), p.end());
  }
  detail::read(j, "filter_order", c.filter_order, w);
  detail::read(j, "omega_r_hz", c.omega_r_hz, w);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

/// All violations, empty when the configuration can run.
inline std::vector<std::string> validate_config(const ExperimentConfig& c) {
  std::vector<std::string> out = c.bragg.diagnostics();
  for (auto& d : c.solver.diagnostics()) out.push_back(std::move(d));
  if (c.seeds.empty() && (c.recipe == Recipe::Ladder || c.recipe == Recipe::Robust || c.recipe == Recipe::Compare ||
                          (c.recipe == Recipe::FilterSweep && c.pulses.empty())))
    out.emplace_back("seeds must not be empty");
  if (c.threads < 0) out.emplace_back("threads must be nonnegative or auto");
  if (c.grid.doppler < 1 || c.grid.intensity < 1) out.emplace_back("grid sizes must be positive");
  if (c.output_dir.empty()) out.emplace_back("output_dir must not be empty");
  switch (c.recipe) {
    case Recipe::Ladder:
      if (c.ladder_n0 < 1) out.emplace_back("ladder_n0 must be >= 1");
      break;
    case Recipe::Compare:
      if (c.targets.empty()) out.emplace_back("targets must not be empty");
      if (c.degrees.empty() && c.samples.empty()) out.emplace_back("degrees or samples must be given");
      for (int d : c.degrees)
        if (d < 0) out.emplace_back("degrees must be nonnegative");
      for (int s : c.samples)
        if (s < 1) out.emplace_back("samples must be positive");
      break;
    case Recipe::Verify:
      if (c.pulses.empty()) out.emplace_back("verify needs a pulse file");
      break;
    case Recipe::FilterSweep:
      if (c.targets.empty()) out.emplace_back("targets must not be empty");
      if (!c.pulses.empty() && c.pulses.size() != c.targets.size())
        out.emplace_back("filtersweep needs one pulse file per target");
      if (c.filter_order < 1) out.emplace_back("filter_order must be >= 1");
      if (!(c.omega_r_hz > 0.0)) out.emplace_back("omega_r_hz must be positive");
      break;
    case Recipe::Robust:
      break;
  }
  for (int t : c.targets)
    if (t < 1) out.emplace_back("target index must be >= 1");
  return out;
}

/// Hash of everything that determines results (not output_dir or threads).
inline std::string config_fingerprint(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  j.erase("threads");
  return hex64(fnv1a(j.dump()));
}

/// Hash of the design problem a pulse was synthesized for.
inline std::string design_fingerprint(const BraggConfig& b) { return hex64(fnv1a(to_json(b).dump())); }

// ---------------------------------------------------------------------------
// Recipes.

struct RecipeResult {
  Json report;
  std::vector<std::filesystem::path> files;  // everything written, in order
};

namespace detail {

inline double variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double pulse_area(const ControlPulse& p) { return p.values().col(0).sum() * p.grid().dt(); }

inline Json run_json(const SynthesisReport& r) {
  const auto stats = pulse_statistics(r.final_pulse);
  return Json{{"converged", r.converged},
              {"status", r.status},
              {"stage1_iterations", r.stage1_iterations},
              {"stage2_iterations", r.stage2_iterations},
              {"rejected_steps", r.rejected_steps},
              {"stage1_error", r.stage1_error},
              {"final_error", r.final_error},
              {"stage2_error_drift", r.stage2_error_drift},
              {"energy", stats.energy},
              {"area", pulse_area(r.final_pulse)},
              {"max_u", stats.max_u},
              {"mean_abs_du", stats.mean_du},
              {"clock_minutes", r.wall_clock_seconds / 60.0}};
}

inline Json grid_json(const RobustnessReport& g) {
  return Json{{"mean_error", g.mean_error},
              {"max_error", g.max_error},
              {"min_error", g.min_error},
              {"flagged", g.flagged},
              {"max_u", g.pulse.max_u},
              {"mean_abs_du", g.pulse.mean_du},
              {"clock_minutes", g.clock_minutes}};
}

inline void add_traces(CsvTable& stage1, CsvTable& stage2, const std::string& run, const SynthesisReport& r) {
  for (std::size_t i = 0; i < r.error_trace.size(); ++i) {
    const double lambda = i < r.lambda_trace.size() ? r.lambda_trace[i] : std::numeric_limits<double>::quiet_NaN();
    stage1.row({run, std::to_string(i), format_double(r.error_trace[i]), format_double(r.surrogate_trace[i]),
                format_double(lambda)});
  }
  for (std::size_t i = 0; i < r.energy_trace.size(); ++i)
    stage2.row({run, std::to_string(i), format_double(r.energy_trace[i]), format_double(r.stage2_error_trace[i])});
}

inline void add_grid(CsvTable& table, const std::string& run, const RobustnessReport& g) {
  for (std::size_t i = 0; i < g.grid.size(); ++i)
    table.row({run, format_double(g.grid[i].first), format_double(g.grid[i].second),
               format_double(g.terminal_errors[i])});
}

class Artifacts {
 public:
  explicit Artifacts(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_ / "pulses", ec);
    if (ec) throw IoError("cannot create " + (root_ / "pulses").string() + ": " + ec.message());
  }
  std::string pulse(const std::string& name, const ControlPulse& p, const std::string& fingerprint) {
    const auto path = root_ / "pulses" / (name + ".pulse");
    save_pulse(path, {kPulseFileVersion, fingerprint, p});
    files.push_back(path);
    return (std::filesystem::path("pulses") / (name + ".pulse")).generic_string();
  }
  void csv(const std::string& name, const CsvTable& t) {
    const auto path = root_ / name;
    t.save(path);
    files.push_back(path);
  }
  void report(const Json& j) {
    const auto path = root_ / "report.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
    files.push_back(path);
  }
  std::vector<std::filesystem::path> files;

 private:
  std::filesystem::path root_;
};

inline std::string cell(double v, int precision = 3) {
  if (!std::isfinite(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

/// Fixed-width text table; first column left-aligned.
inline void print_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return;
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i == 0) out << std::left << std::setw(static_cast<int>(width[i])) << r[i];
      else out << "  " << std::right << std::setw(static_cast<int>(width[i])) << r[i];
    }
    out << '\n';
  }
}

/// Splits the worker budget between independent runs and each run's
/// internal parallelism.
inline std::pair<int, int> split_threads(int threads, std::size_t jobs) {
  const int total = resolve_threads(threads);
  const int outer = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(total), std::max<std::size_t>(jobs, 1)));
  return {outer, std::max(1, total / outer)};
}

inline std::string seed_tag(std::uint64_t s) { return "seed" + std::to_string(s); }

/// Summary rows (error, amplitude, smoothness, clock) for one or more designs.
inline std::vector<std::vector<std::string>> table_rows(const std::vector<std::string>& headers,
                                                        const std::vector<RobustnessReport>& grids,
                                                        const std::vector<double>& synth_minutes) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{""};
  head.insert(head.end(), headers.begin(), headers.end());
  rows.push_back(head);
  auto add = [&](const std::string& label, auto value) {
    std::vector<std::string> r{label};
    for (std::size_t i = 0; i < grids.size(); ++i) r.push_back(value(i));
    rows.push_back(r);
  };
  add("max Error", [&](std::size_t i) { return cell(grids[i].max_error, 2); });
  add("mean Error", [&](std::size_t i) { return cell(grids[i].mean_error, 2); });
  add("max u/omega_r", [&](std::size_t i) { return cell(grids[i].pulse.max_u, 3); });
  add("mean |du_k|/omega_r", [&](std::size_t i) { return cell(grids[i].pulse.mean_du, 3); });
  add("Clock (min)", [&](std::size_t i) { return cell(synth_minutes[i], 3); });
  return rows;
}

inline RecipeResult run_ladder(const ExperimentConfig& c, std::ostream& log) {
  Artifacts art(c.output_dir);
  const auto [outer, inner] = split_threads(c.threads, c.seeds.size());
  std::vector<std::vector<SynthesisReport>> runs(c.seeds.size());
  parallel_for(c.seeds.size(), outer, [&](std::size_t i) {
    SolverConfig s = c.solver;
    s.seed = c.seeds[i];
    s.threads = inner;
    runs[i] = momentum_ladder(c.bragg, c.ladder_n0, s);
  });

  CsvTable stage1({"run", "iteration", "error", "surrogate", "lambda"});
  CsvTable stage2({"run", "iteration", "energy", "error"});
  CsvTable bars({"n0", "converged", "seeds", "max_u_mean", "max_u_var", "area_mean", "area_var", "energy_mean",
                 "energy_var"});
  Json runs_json = Json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t r = 0; r < runs[i].size(); ++r) {
      const auto& rep = runs[i][r];
      const int n0 = static_cast<int>(r) + 1;
      BraggConfig rung = c.bragg;
      rung.n0 = n0;
      rung.truncation = 0;
      const std::string tag = "ladder_n0_" + std::to_string(n0) + "_" + seed_tag(c.seeds[i]);
      Json entry = run_json(rep);
      entry["seed"] = c.seeds[i];
      entry["n0"] = n0;
      entry["pulse"] = art.pulse(tag, rep.final_pulse, design_fingerprint(rung));
      runs_json.push_back(entry);
      add_traces(stage1, stage2, tag, rep);
    }
  }
  std::vector<std::vector<std::string>> rows{{"n0", "converged", "iterations", "final error", "max u/omega_r",
                                              "Clock (min)"}};
  Json per_rung = Json::array();
  for (int n0 = 1; n0 <= c.ladder_n0; ++n0) {
    std::vector<double> max_u, area, energy, iters, errors, minutes;
    int converged = 0;
    for (const auto& seed_runs : runs) {
      if (static_cast<int>(seed_runs.size()) < n0) continue;
      const auto& rep = seed_runs[static_cast<std::size_t>(n0 - 1)];
      if (rep.converged) ++converged;
      const auto stats = pulse_statistics(rep.final_pulse);
      max_u.push_back(stats.max_u);
      area.push_back(pulse_area(rep.final_pulse));
      energy.push_back(stats.energy);
      iters.push_back(rep.iterations_used);
      errors.push_back(rep.final_error);
      minutes.push_back(rep.wall_clock_seconds / 60.0);
    }
    bars.row({std::to_string(n0), std::to_string(converged), std::to_string(max_u.size()),
              format_double(mean(max_u)), format_double(variance(max_u)), format_double(mean(area)),
              format_double(variance(area)), format_double(mean(energy)), format_double(variance(energy))});
    per_rung.push_back({{"n0", n0}, {"attempted", max_u.size()}, {"converged", converged},
                        {"max_u_mean", mean(max_u)}, {"max_u_var", variance(max_u)}, {"area_mean", mean(area)},
                        {"area_var", variance(area)}, {"energy_mean", mean(energy)},
                        {"energy_var", variance(energy)}});
    rows.push_back({std::to_string(n0), std::to_string(converged) + "/" + std::to_string(c.seeds.size()),
                    cell(mean(iters)), cell(mean(errors)), cell(mean(max_u)), cell(mean(minutes))});
  }
  art.csv("traces.csv", stage1);
  art.csv("energy_traces.csv", stage2);
  art.csv("energy_bars.csv", bars);
  print_table(log, rows);
  RecipeResult out;
  out.report = Json{{"runs", runs_json}, {"rungs", per_rung}};
  out.files = std::move(art.files);
  return out;
}

struct Design {
  std::string label;
  BraggConfig bragg;
  std::uint64_t seed = 1;
};

struct DesignOutcome {
  SynthesisReport synthesis;
  RobustnessReport grid;
};

inline std::vector<DesignOutcome> run_designs(const ExperimentConfig& c, const std::vector<Design>& designs) {
  const auto [outer, inner] = split_threads(c.threads, designs.size());
  std::vector<DesignOutcome> out(designs.size());
  parallel_for(designs.size(), outer, [&](std::size_t i) {
    SolverConfig s = c.solver;
    s.seed = designs[i].seed;
    s.threads = inner;
    const auto& b = designs[i].bragg;
    out[i].synthesis = robust_synthesis(b, random_bragg_pulse(b, s.seed), s);
    out[i].grid = robustness_grid(out[i].synthesis.final_pulse, b, c.grid, inner);
  });
  return out;
}

inline Json record_designs(const ExperimentConfig& c, const std::vector<Design>& designs,
                           const std::vector<DesignOutcome>& outcomes, Artifacts& art) {
  (void)c;
  CsvTable stage1({"run", "iteration", "error", "surrogate", "lambda"});
  CsvTable stage2({"run", "iteration", "energy", "error"});
  CsvTable grid({"run", "delta", "gamma", "error"});
  Json runs = Json::array();
  for (std::size_t i = 0; i < designs.size(); ++i) {
    const auto& o = outcomes[i];
    Json entry = run_json(o.synthesis);
    entry["label"] = designs[i].label;
    entry["seed"] = designs[i].seed;
    entry["bragg"] = to_json(designs[i].bragg);
    entry["grid"] = grid_json(o.grid);
    entry["pulse"] = art.pulse(designs[i].label, o.synthesis.final_pulse, design_fingerprint(designs[i].bragg));
    runs.push_back(entry);
    add_traces(stage1, stage2, designs[i].label, o.synthesis);
    add_grid(grid, designs[i].label, o.grid);
  }
  art.csv("traces.csv", stage1);
  art.csv("energy_traces.csv", stage2);
  art.csv("grid.csv", grid);
  return runs;
}

inline RecipeResult run_robust(const ExperimentConfig& c, std::ostream& log) {
  Artifacts art(c.output_dir);
  std::vector<Design> designs;
  for (auto seed : c.seeds) designs.push_back({"robust_n0_" + std::to_string(c.bragg.n0) + "_" + seed_tag(seed), c.bragg, seed});
  const auto outcomes = run_designs(c, designs);
  RecipeResult out;
  out.report = Json{{"runs", record_designs(c, designs, outcomes, art)}};
  std::vector<std::string> headers;
  std::vector<RobustnessReport> grids;
  std::vector<double> minutes;
  for (std::size_t i = 0; i < designs.size(); ++i) {
    headers.push_back(seed_tag(designs[i].seed));
    grids.push_back(outcomes[i].grid);
    minutes.push_back(outcomes[i].synthesis.wall_clock_seconds / 60.0);
  }
  print_table(log, table_rows(headers, grids, minutes));
  out.files = std::move(art.files);
  return out;
}

/// Legendre degree d against d + 1 equispaced samples per interval, for
/// every target; one seed (the first) per design.
inline RecipeResult run_compare(const ExperimentConfig& c, std::ostream& log) {
  Artifacts art(c.output_dir);
  std::vector<Design> designs;
  const std::uint64_t seed = c.seeds.front();
  for (int n0 : c.targets) {
    BraggConfig base = c.bragg;
    base.n0 = n0;
    base.truncation = 0;
    for (int d : c.degrees) {
      BraggConfig b = base;
      b.mode = ExpansionMode::Legendre;
      b.doppler_degree = b.intensity_degree = d;
      designs.push_back({"legendre_n0_" + std::to_string(n0) + "_degree_" + std::to_string(d), b, seed});
    }
    for (int s : c.samples) {
      BraggConfig b = base;
      b.mode = ExpansionMode::Sampling;
      b.doppler_degree = b.intensity_degree = s - 1;
      designs.push_back({"sampling_n0_" + std::to_string(n0) + "_samples_" + std::to_string(s), b, seed});
    }
  }
  const auto outcomes = run_designs(c, designs);
  RecipeResult out;
  out.report = Json{{"runs", record_designs(c, designs, outcomes, art)}};

  CsvTable summary({"n0", "method", "size", "mean_error", "max_error", "max_u", "mean_abs_du", "clock_minutes"});
  Json table = Json::array();
  std::size_t k = 0;
  for (int n0 : c.targets) {
    for (const auto& [method, sizes] : {std::pair{"legendre", c.degrees}, std::pair{"sampling", c.samples}}) {
      std::vector<std::string> headers;
      std::vector<RobustnessReport> grids;
      std::vector<double> minutes;
      Json row = Json::array();
      for (int size : sizes) {
        const auto& o = outcomes[k++];
        summary.row({std::to_string(n0), method, std::to_string(size), format_double(o.grid.mean_error),
                     format_double(o.grid.max_error), format_double(o.grid.pulse.max_u),
                     format_double(o.grid.pulse.mean_du), format_double(o.synthesis.wall_clock_seconds / 60.0)});
        row.push_back({{"size", size}, {"mean_error", o.grid.mean_error}, {"max_error", o.grid.max_error}});
        headers.push_back(std::string(method == std::string("legendre") ? "degree " : "samples ") +
                          std::to_string(size));
        grids.push_back(o.grid);
        minutes.push_back(o.synthesis.wall_clock_seconds / 60.0);
      }
      table.push_back({{"n0", n0}, {"method", method}, {"designs", row}});
      log << "n0 = " << n0 << ", " << (method == std::string("legendre") ? "Legendre expansion" : "equidistant sampling")
          << '\n';
      print_table(log, table_rows(headers, grids, minutes));
      log << '\n';
    }
  }
  art.csv("compare.csv", summary);
  out.report["summary"] = table;
  out.files = std::move(art.files);
  return out;
}

inline RecipeResult run_verify(const ExperimentConfig& c, std::ostream& log) {
  Artifacts art(c.output_dir);
  CsvTable grid({"run", "delta", "gamma", "error"});
  Json runs = Json::array();
  std::vector<std::string> headers;
  std::vector<RobustnessReport> grids;
  for (const auto& path : c.pulses) {
    const auto file = load_pulse(path);
    const auto g = robustness_grid(file.pulse, c.bragg, c.grid, c.threads);
    const std::string tag = path.stem().string();
    add_grid(grid, tag, g);
    Json entry = grid_json(g);
    entry["pulse"] = path.generic_string();
    entry["pulse_fingerprint"] = file.fingerprint;
    runs.push_back(entry);
    headers.push_back(tag);
    grids.push_back(g);
  }
  art.csv("grid.csv", grid);
  print_table(log, table_rows(headers, grids, std::vector<double>(grids.size(), std::numeric_limits<double>::quiet_NaN())));
  RecipeResult out;
  out.report = Json{{"runs", runs}};
  out.files = std::move(art.files);
  return out;
}

/// Pulses come from the config, or from one deterministic ladder (first
/// seed) up to the largest target.
inline RecipeResult run_filtersweep(const ExperimentConfig& c, std::ostream& log) {
  Artifacts art(c.output_dir);
  std::vector<ControlPulse> pulses;
  Json sources = Json::array();
  if (!c.pulses.empty()) {
    for (const auto& p : c.pulses) {
      pulses.push_back(load_pulse(p).pulse);
      sources.push_back(p.generic_string());
    }
  } else {
    SolverConfig s = c.solver;
    s.seed = c.seeds.front();
    s.threads = c.threads;
    BraggConfig b = c.bragg;
    b.doppler_min = b.doppler_max = 0.0;
    b.intensity_min = b.intensity_max = 1.0;
    const int top = *std::max_element(c.targets.begin(), c.targets.end());
    const auto ladder = momentum_ladder(b, top, s);
    for (int n0 : c.targets) {
      // a rung the ladder never reached falls back to the last one it did
      const auto reached = std::min<std::size_t>(static_cast<std::size_t>(n0), ladder.size()) - 1;
      if (reached + 1 != static_cast<std::size_t>(n0) || !ladder[reached].converged)
        log << "filtersweep: ladder did not converge at n0 = " << n0 << "; sweeping the last pulse reached\n";
      BraggConfig rung = b;
      rung.n0 = n0;
      rung.truncation = 0;
      const auto& pulse = ladder[reached].final_pulse;
      pulses.push_back(pulse);
      sources.push_back(art.pulse("filtersweep_n0_" + std::to_string(n0), pulse, design_fingerprint(rung)));
    }
  }
  CsvTable sweep({"n0", "cutoff", "cutoff_hz", "probability", "skipped"});
  Json runs = Json::array();
  std::vector<std::vector<std::string>> rows{{"n0", "P(lowest)", "P(Nyquist)", "P(unfiltered)", "cutoff P>=0.9",
                                              "cutoff P>=0.9 (Hz)"}};
  for (std::size_t i = 0; i < pulses.size(); ++i) {
    const int n0 = c.targets[i];
    const auto rep = filter_sweep(pulses[i], n0, 18 + 2 * n0, c.filter_order, c.threads);
    BraggConfig g = c.bragg;
    g.horizon = pulses[i].grid().horizon;
    g.steps = static_cast<int>(pulses[i].grid().steps);
    const double hz_per_unit = physical_frequency(g, c.omega_r_hz) / rep.sampling_frequency;
    for (std::size_t k = 0; k < rep.cutoffs.size(); ++k)
      sweep.row({std::to_string(n0), format_double(rep.cutoffs[k]), format_double(rep.cutoffs[k] * hz_per_unit),
                 format_double(rep.probabilities[k]), rep.skipped[k] ? "1" : "0"});
    const double reach = rep.cutoff_reaching(0.9);
    runs.push_back({{"n0", n0},
                    {"pulse", sources[i]},
                    {"sampling_frequency", rep.sampling_frequency},
                    {"sampling_frequency_hz", physical_frequency(g, c.omega_r_hz)},
                    {"probability_lowest", rep.probabilities.front()},
                    {"probability_nyquist", rep.probabilities.back()},
                    {"probability_unfiltered", rep.unfiltered_probability},
                    {"cutoff_reaching_0.9", reach},
                    {"cutoff_reaching_0.9_hz", reach * hz_per_unit}});
    rows.push_back({std::to_string(n0), cell(rep.probabilities.front()), cell(rep.probabilities.back()),
                    cell(rep.unfiltered_probability), cell(reach), cell(reach * hz_per_unit, 4)});
  }
  art.csv("sweep.csv", sweep);
  print_table(log, rows);
  RecipeResult out;
  out.report = Json{{"runs", runs}};
  out.files = std::move(art.files);
  return out;
}

}  // namespace detail

/// Runs the configured recipe and writes its artifacts under output_dir.
/// Nonconvergent runs are reported in the artifacts, not thrown.
/// Throws ConfigError for an invalid configuration and IoError on IO failure.
inline RecipeResult run_recipe(const ExperimentConfig& c, std::ostream& log) {
  const auto problems = validate_config(c);
  if (!problems.empty()) throw ConfigError(problems.front());
  RecipeResult out;
  switch (c.recipe) {
    case Recipe::Ladder: out = detail::run_ladder(c, log); break;
    case Recipe::Robust: out = detail::run_robust(c, log); break;
    case Recipe::Compare: out = detail::run_compare(c, log); break;
    case Recipe::Verify: out = detail::run_verify(c, log); break;
    case Recipe::FilterSweep: out = detail::run_filtersweep(c, log); break;
  }
  Json report{{"recipe", recipe_name(c.recipe)}, {"fingerprint", config_fingerprint(c)}, {"config", to_json(c)}};
  for (auto& [k, v] : out.report.items()) report[k] = v;
  out.report = std::move(report);
  detail::Artifacts writer(c.output_dir);
  writer.report(out.report);
  out.files.push_back(writer.files.back());
  return out;
}

}  // namespace rqoc

#endif  // RQOC_EXPERIMENT_HPP
