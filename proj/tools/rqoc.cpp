// rqoc command line front end.
//
//   rqoc synth       --config robust.json --seed 1 2 3 --out out/robust
//   rqoc ladder      --n0 3 --seed 1 2 --out out/ladder
//   rqoc verify      --pulse data/reference_n0_1.pulse --out out/verify
//   rqoc filtersweep --n0 5 --out out/sweep
//   rqoc compare     --degrees 1,2 --samples 2,3 --out out/compare
//
// Flags override values from the config file. Exit status is nonzero only
// for configuration and IO errors; nonconvergent runs are reported in the
// artifacts.

#include "rqoc/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

struct Overrides {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string threads;
  std::vector<int> degrees;
  std::vector<int> samples;
  std::vector<int> n0;
  std::optional<double> bound;
  std::vector<std::string> pulses;
  bool print_config = false;
};

void add_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seeds, "random seeds, one run each");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--threads", o.threads, "worker threads, or auto");
  cmd->add_option("--degrees", o.degrees, "Legendre degrees, d1,d2,...")->delimiter(',');
  cmd->add_option("--samples", o.samples, "samples per interval, s1,s2,...")->delimiter(',');
  cmd->add_option("--n0", o.n0, "target index (ladder: last rung; compare/filtersweep: list)")->delimiter(',');
  cmd->add_option("--bound", o.bound, "amplitude bound on u / omega_r");
  cmd->add_option("--pulse", o.pulses, "pulse files (verify, filtersweep)");
  cmd->add_flag("--print-config", o.print_config, "print the effective configuration and exit");
}

rqoc::ExperimentConfig effective_config(rqoc::Recipe recipe, const Overrides& o) {
  rqoc::ExperimentConfig c = o.config.empty() ? rqoc::ExperimentConfig{} : rqoc::load_config(o.config);
  c.recipe = recipe;
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.out.empty()) c.output_dir = o.out;
  if (!o.threads.empty()) {
    if (o.threads == "auto") {
      c.threads = 0;
    } else {
      try {
        std::size_t used = 0;
        c.threads = std::stoi(o.threads, &used);
        if (used != o.threads.size()) throw std::invalid_argument(o.threads);
      } catch (const std::exception&) {
        throw rqoc::ConfigError("--threads: expected an integer or auto");
      }
    }
  }
  if (!o.degrees.empty()) c.degrees = o.degrees;
  if (!o.samples.empty()) c.samples = o.samples;
  if (!o.n0.empty()) {
    if (recipe == rqoc::Recipe::Ladder) {
      c.ladder_n0 = o.n0.back();
    } else if (recipe == rqoc::Recipe::Compare || recipe == rqoc::Recipe::FilterSweep) {
      c.targets = o.n0;
    } else {
      c.bragg.n0 = o.n0.front();
    }
  }
  if (o.bound) c.bragg.amplitude_bound = *o.bound;
  if (!o.pulses.empty()) c.pulses.assign(o.pulses.begin(), o.pulses.end());
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust quantum optimal control of Bragg beamsplitters"};
  app.require_subcommand(1);
  Overrides o;
  const std::pair<const char*, const char*> commands[] = {
      {"synth", "robust (or nominal) synthesis, one run per seed"},
      {"ladder", "deterministic warm-started momentum ladder"},
      {"verify", "robustness grid of existing pulse files"},
      {"filtersweep", "low-pass filter sweep of converged pulses"},
      {"compare", "Legendre expansion against equidistant sampling"},
  };
  for (const auto& [name, help] : commands) add_flags(app.add_subcommand(name, help), o);
  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const auto config = effective_config(rqoc::parse_recipe(name), o);
    if (o.print_config) {
      std::cout << rqoc::to_json(config).dump(2) << '\n';
      return 0;
    }
    const auto problems = rqoc::validate_config(config);
    if (!problems.empty()) {
      for (const auto& p : problems) std::cerr << "rqoc: config: " << p << '\n';
      return 2;
    }
    const auto result = rqoc::run_recipe(config, std::cout);
    std::cout << "report: " << (config.output_dir / "report.json").string() << " (" << result.files.size()
              << " files, fingerprint " << result.report["fingerprint"].get<std::string>() << ")\n";
  } catch (const rqoc::ConfigError& e) {
    std::cerr << "rqoc: config: " << e.what() << '\n';
    return 2;
  } catch (const rqoc::IoError& e) {
    std::cerr << "rqoc: io: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "rqoc: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
