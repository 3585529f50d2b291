#include "rqoc/experiment.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <random>
#include <sstream>

namespace rqoc {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rqoc_test_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

// Header row present, every line with the same number of fields.
void expect_rectangular(const fs::path& path, bool allow_empty = false) {
  std::ifstream in(path);
  ASSERT_TRUE(in) << path;
  std::string line;
  ASSERT_TRUE(std::getline(in, line)) << path << " is empty";
  const auto width = std::count(line.begin(), line.end(), ',');
  EXPECT_FALSE(line.empty());
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), width) << path << " row " << rows;
    ++rows;
  }
  if (!allow_empty) EXPECT_GT(rows, 0) << path;
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  return Json::parse(in);
}

void strip_clock(Json& j) {
  if (j.is_object()) {
    j.erase("clock_minutes");
    for (auto& [k, v] : j.items()) strip_clock(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_clock(v);
  }
}

ControlPulse random_pulse(std::uint64_t seed, Index steps, Index channels) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RMatrix v(steps, channels);
  for (Index c = 0; c < channels; ++c)
    for (Index k = 0; k < steps; ++k) v(k, c) = u(rng) * std::pow(10.0, 30.0 * u(rng));
  v(0, 0) = 5e-324;  // subnormal
  v(1, 0) = -0.0;
  v(2, 0) = 0.1;
  return ControlPulse(TimeGrid{2.0 * std::numbers::pi, static_cast<int>(steps)}, v, RVector::Constant(channels, -1e31),
                      RVector::Constant(channels, 1e31));
}

TEST(NumberFormat, RoundTripsEveryBit) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20000; ++i) {
    const double v = std::bit_cast<double>(rng());
    if (!std::isfinite(v)) continue;
    const double back = parse_double(format_double(v));
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back), std::bit_cast<std::uint64_t>(v)) << format_double(v);
  }
  EXPECT_TRUE(std::isnan(parse_double(format_double(std::numeric_limits<double>::quiet_NaN()))));
  EXPECT_EQ(parse_double("-inf"), -std::numeric_limits<double>::infinity());
  EXPECT_THROW(parse_double("1.5x"), IoError);
  EXPECT_THROW(parse_double(""), IoError);
}

TEST(PulseFile, RoundTripIsBitExact) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const PulseFile file{kPulseFileVersion, "0123456789abcdef", random_pulse(seed, 57, seed == 3 ? 2 : 1)};
    std::stringstream buf;
    write_pulse(buf, file);
    const auto back = read_pulse(buf);
    EXPECT_EQ(back.version, file.version);
    EXPECT_EQ(back.fingerprint, file.fingerprint);
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.pulse.grid().horizon),
              std::bit_cast<std::uint64_t>(file.pulse.grid().horizon));
    ASSERT_EQ(back.pulse.steps(), file.pulse.steps());
    ASSERT_EQ(back.pulse.channels(), file.pulse.channels());
    for (Index c = 0; c < file.pulse.channels(); ++c) {
      EXPECT_EQ(back.pulse.lower()(c), file.pulse.lower()(c));
      EXPECT_EQ(back.pulse.upper()(c), file.pulse.upper()(c));
      for (Index k = 0; k < file.pulse.steps(); ++k)
        EXPECT_EQ(std::bit_cast<std::uint64_t>(back.pulse.value(k, c)),
                  std::bit_cast<std::uint64_t>(file.pulse.value(k, c)));
    }
    // writing the read-back file reproduces the bytes
    std::stringstream again;
    write_pulse(again, back);
    EXPECT_EQ(again.str(), buf.str());
  }
}

TEST(PulseFile, EmptyFingerprint) {
  std::stringstream buf;
  write_pulse(buf, {kPulseFileVersion, "", random_pulse(9, 4, 1)});
  EXPECT_NE(buf.str().find("fingerprint -\n"), std::string::npos);
  EXPECT_EQ(read_pulse(buf).fingerprint, "");
}

TEST(PulseFile, RejectsMalformedInput) {
  std::stringstream good;
  write_pulse(good, {kPulseFileVersion, "ab", random_pulse(4, 5, 1)});
  const std::string text = good.str();
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return read_pulse(in);
  };
  EXPECT_NO_THROW(parse(text));
  EXPECT_THROW(parse("not-a-pulse\n"), IoError);
  std::string wrong_version = text;
  wrong_version.replace(wrong_version.find("version 1"), 9, "version 7");
  EXPECT_THROW(parse(wrong_version), IoError);
  EXPECT_THROW(parse(text.substr(0, text.rfind('\n', text.size() - 2) + 1)), IoError);
  std::string no_steps = text;
  no_steps.erase(no_steps.find("steps"), no_steps.find('\n', no_steps.find("steps")) - no_steps.find("steps") + 1);
  EXPECT_THROW(parse(no_steps), IoError);
  EXPECT_THROW(load_pulse("/nonexistent/dir/x.pulse"), IoError);
}

TEST(PulseFile, ShippedReferenceLoads) {
  const auto file = load_pulse(fs::path(RQOC_SOURCE_DIR) / "data" / "reference_n0_1.pulse");
  EXPECT_EQ(file.pulse.steps(), 630);
  EXPECT_EQ(file.pulse.channels(), 1);
  EXPECT_EQ(file.fingerprint, design_fingerprint(BraggConfig{}));
  EXPECT_GE(file.pulse.values().minCoeff(), 0.0);
  EXPECT_LE(file.pulse.values().maxCoeff(), 30.0);
}

TEST(Csv, RectangularWithHeader) {
  CsvTable t({"a", "b", "c"});
  t.row(std::vector<double>{1.0, 0.1, -2.5e-300});
  t.row({"x", "y", "z"});
  EXPECT_THROW(t.row(std::vector<std::string>{"only", "two"}), std::invalid_argument);
  std::ostringstream out;
  t.write(out);
  EXPECT_EQ(out.str(), "a,b,c\n1,0.1,-2.5e-300\nx,y,z\n");
  EXPECT_EQ(t.size(), 2u);
}

TEST(Config, DefaultsAreValid) { EXPECT_TRUE(validate_config(ExperimentConfig{}).empty()); }

TEST(Config, Diagnostics) {
  ExperimentConfig c;
  c.bragg.n0 = 0;
  auto d = validate_config(c);
  EXPECT_NE(std::find(d.begin(), d.end(), "target index must be >= 1"), d.end());
  c = ExperimentConfig{};
  c.solver.lambda_decay = 1.5;
  d = validate_config(c);
  EXPECT_NE(std::find(d.begin(), d.end(), "lambda_decay must lie in (0, 1)"), d.end());
  c = ExperimentConfig{};
  c.seeds.clear();
  d = validate_config(c);
  EXPECT_NE(std::find(d.begin(), d.end(), "seeds must not be empty"), d.end());
  c = ExperimentConfig{};
  c.recipe = Recipe::Verify;
  d = validate_config(c);
  EXPECT_NE(std::find(d.begin(), d.end(), "verify needs a pulse file"), d.end());
  c = ExperimentConfig{};
  c.recipe = Recipe::FilterSweep;
  c.targets = {1, 5};
  c.pulses = {"a.pulse"};
  d = validate_config(c);
  EXPECT_NE(std::find(d.begin(), d.end(), "filtersweep needs one pulse file per target"), d.end());
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.recipe = Recipe::Compare;
  c.bragg.doppler_min = -0.4;
  c.bragg.doppler_max = 0.4;
  c.bragg.mode = ExpansionMode::Sampling;
  c.bragg.basis = DesignBasis::Signed;
  c.solver.lambda_init = 3.0;
  c.solver.alignment = TargetAlignment::Global;
  c.solver.final_stage_iterations = 7;
  c.seeds = {4, 5};
  c.threads = 0;
  c.grid = {5, 7};
  c.pulses = {"x.pulse"};
  const Json j = to_json(c);
  const auto back = config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(config_fingerprint(back), config_fingerprint(c));
  EXPECT_EQ(back.threads, 0);
  EXPECT_EQ(*back.solver.lambda_init, 3.0);
  EXPECT_EQ(*back.solver.final_stage_iterations, 7);
}

TEST(Config, PartialJsonKeepsDefaults) {
  const auto c = config_from_json(Json::parse(R"({"recipe": "ladder", "bragg": {"n0": 2}, "solver": {"max_iterations": 5}})"));
  EXPECT_EQ(c.recipe, Recipe::Ladder);
  EXPECT_EQ(c.bragg.n0, 2);
  EXPECT_EQ(c.bragg.steps, 630);
  EXPECT_EQ(c.solver.max_iterations, 5);
  EXPECT_EQ(c.solver.lambda_decay, 0.5);
}

TEST(Config, RejectsBadJson) {
  EXPECT_THROW(config_from_json(Json::parse(R"({"recipee": "ladder"})")), ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"bragg": {"n0": "one"}})")), ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"bragg": {"doppler": [0.1]}})")), ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"recipe": "fly"})")), ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"solver": {"alignment": "sideways"}})")), ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(R"([1, 2])")), ConfigError);
}

TEST(Config, FingerprintTracksResultsOnly) {
  ExperimentConfig a;
  ExperimentConfig b = a;
  b.output_dir = "elsewhere";
  b.threads = 4;
  EXPECT_EQ(config_fingerprint(a), config_fingerprint(b));
  b.bragg.amplitude_bound = 20.0;
  EXPECT_NE(config_fingerprint(a), config_fingerprint(b));
  b = a;
  b.seeds = {2};
  EXPECT_NE(config_fingerprint(a), config_fingerprint(b));
}

TEST(Recipe, RejectsInvalidConfig) {
  ExperimentConfig c;
  c.bragg.n0 = 0;
  c.output_dir = scratch("invalid");
  std::ostringstream log;
  EXPECT_THROW(run_recipe(c, log), ConfigError);
}

ExperimentConfig verify_config(const std::string& name, int threads) {
  ExperimentConfig c;
  c.recipe = Recipe::Verify;
  c.bragg.doppler_min = -0.4;
  c.bragg.doppler_max = 0.4;
  c.bragg.intensity_min = 0.6;
  c.bragg.intensity_max = 1.4;
  c.pulses = {fs::path(RQOC_SOURCE_DIR) / "data" / "reference_n0_1.pulse"};
  c.grid = {5, 4};
  c.threads = threads;
  c.output_dir = scratch(name);
  return c;
}

TEST(Recipe, VerifyReferencePulse) {
  const auto c = verify_config("verify", 1);
  std::ostringstream log;
  const auto result = run_recipe(c, log);
  const Json report = read_json(c.output_dir / "report.json");
  EXPECT_EQ(report["fingerprint"], config_fingerprint(c));
  EXPECT_EQ(report["recipe"], "verify");
  expect_rectangular(c.output_dir / "grid.csv");
  const auto& run = report["runs"][0];
  EXPECT_GE(run["min_error"].get<double>(), 0.0);
  EXPECT_LE(run["max_error"].get<double>(), 1.0);
  EXPECT_LE(run["mean_error"].get<double>(), run["max_error"].get<double>());
  EXPECT_NE(log.str().find("mean Error"), std::string::npos);
  EXPECT_NE(log.str().find("max Error"), std::string::npos);
}

TEST(Recipe, VerifyThreadedMatchesSerial) {
  const auto serial = verify_config("verify_serial", 1);
  const auto threaded = verify_config("verify_threaded", 4);
  std::ostringstream log;
  run_recipe(serial, log);
  run_recipe(threaded, log);
  std::ifstream a(serial.output_dir / "grid.csv"), b(threaded.output_dir / "grid.csv");
  std::string la, lb;
  std::getline(a, la);
  std::getline(b, lb);
  int rows = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    const double ea = parse_double(la.substr(la.rfind(',') + 1));
    const double eb = parse_double(lb.substr(lb.rfind(',') + 1));
    EXPECT_NEAR(ea, eb, 1e-12);
    ++rows;
  }
  EXPECT_EQ(rows, 20);
}

ExperimentConfig tiny_robust(const std::string& name) {
  ExperimentConfig c;
  c.recipe = Recipe::Robust;
  c.bragg.truncation = 6;
  c.bragg.steps = 40;
  c.bragg.doppler_min = -0.1;
  c.bragg.doppler_max = 0.1;
  c.bragg.doppler_degree = 1;
  c.solver.max_iterations = 4;
  c.solver.max_energy_iterations = 2;
  c.solver.continuation_stages = 2;
  c.seeds = {1, 2};
  c.grid = {3, 2};
  c.output_dir = scratch(name);
  return c;
}

TEST(Recipe, RobustArtifactsAndDeterminism) {
  const auto a = tiny_robust("robust_a");
  const auto b = tiny_robust("robust_b");
  std::ostringstream log;
  run_recipe(a, log);
  run_recipe(b, log);
  Json ra = read_json(a.output_dir / "report.json");
  Json rb = read_json(b.output_dir / "report.json");
  EXPECT_EQ(ra["fingerprint"], rb["fingerprint"]);
  ra["config"].erase("output_dir");
  rb["config"].erase("output_dir");
  strip_clock(ra);
  strip_clock(rb);
  EXPECT_EQ(ra, rb);
  expect_rectangular(a.output_dir / "traces.csv");
  expect_rectangular(a.output_dir / "grid.csv");
  expect_rectangular(a.output_dir / "energy_traces.csv", true);  // no stage 2 without convergence
  ASSERT_EQ(ra["runs"].size(), 2u);
  for (const auto& run : ra["runs"]) {
    const auto pulse = load_pulse(a.output_dir / run["pulse"].get<std::string>());
    EXPECT_EQ(pulse.fingerprint, design_fingerprint(a.bragg));
    EXPECT_EQ(pulse.pulse.steps(), 40);
  }
  for (const char* label : {"max Error", "mean Error", "max u/omega_r", "mean |du_k|/omega_r", "Clock (min)"})
    EXPECT_NE(log.str().find(label), std::string::npos) << label;
}

TEST(Recipe, LadderWritesOnePulsePerRung) {
  ExperimentConfig c;
  c.recipe = Recipe::Ladder;
  c.ladder_n0 = 2;
  c.seeds = {1, 2};
  c.bragg.steps = 60;
  c.solver.max_iterations = 3;
  c.solver.error_tolerance = 0.9;  // every rung "converges" so both are written
  c.solver.max_energy_iterations = 1;
  c.output_dir = scratch("ladder");
  std::ostringstream log;
  const auto result = run_recipe(c, log);
  const Json report = read_json(c.output_dir / "report.json");
  EXPECT_EQ(report["runs"].size(), 4u);
  EXPECT_EQ(report["rungs"].size(), 2u);
  int pulses = 0;
  for (const auto& f : fs::directory_iterator(c.output_dir / "pulses")) pulses += f.path().extension() == ".pulse";
  EXPECT_EQ(pulses, 4);
  for (const char* csv : {"traces.csv", "energy_traces.csv", "energy_bars.csv"}) expect_rectangular(c.output_dir / csv);
}

TEST(Recipe, CompareProducesSummaryGrid) {
  ExperimentConfig c = tiny_robust("compare");
  c.recipe = Recipe::Compare;
  c.seeds = {1};
  c.degrees = {0, 1};
  c.samples = {1, 2};
  c.targets = {1};
  c.output_dir = scratch("compare");
  std::ostringstream log;
  run_recipe(c, log);
  const Json report = read_json(c.output_dir / "report.json");
  ASSERT_EQ(report["summary"].size(), 2u);
  EXPECT_EQ(report["summary"][0]["method"], "legendre");
  EXPECT_EQ(report["summary"][1]["method"], "sampling");
  EXPECT_EQ(report["summary"][0]["designs"].size(), 2u);
  expect_rectangular(c.output_dir / "compare.csv");
  EXPECT_NE(log.str().find("equidistant sampling"), std::string::npos);
}

TEST(Recipe, FilterSweepFromPulseFile) {
  ExperimentConfig c;
  c.recipe = Recipe::FilterSweep;
  c.targets = {1};
  c.pulses = {fs::path(RQOC_SOURCE_DIR) / "data" / "reference_n0_1.pulse"};
  c.output_dir = scratch("sweep");
  std::ostringstream log;
  run_recipe(c, log);
  expect_rectangular(c.output_dir / "sweep.csv");
  const Json report = read_json(c.output_dir / "report.json");
  const auto& run = report["runs"][0];
  EXPECT_GT(run["probability_nyquist"].get<double>(), 0.9);
  EXPECT_LT(run["probability_lowest"].get<double>(), 0.1);
  // 629 intervals over 2 pi recoil periods at 7.66 kHz
  EXPECT_NEAR(run["sampling_frequency_hz"].get<double>(), 629.0 * 7660.0 / (2.0 * std::numbers::pi), 1e-6);
}

}  // namespace
}  // namespace rqoc
