#include "lipimpl/cli/run.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace lipimpl::cli {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir() {
  const auto* info = testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / "lipimpl_cli_test" /
                       (std::string(info->test_suite_name()) + "." + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(path));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream cells_in(line);
    for (std::string cell; std::getline(cells_in, cell, ',');) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  EXPECT_NE(it, header.end()) << name;
  return static_cast<std::size_t>(it - header.begin());
}

SpecError spec_error(std::string_view text) {
  try {
    (void)parse_run_spec(text);
  } catch (const SpecError& e) {
    return e;
  }
  ADD_FAILURE() << "expected SpecError for " << text;
  return SpecError("", "");
}

RunSpec spec_with_output(std::string_view text, const fs::path& out) {
  RunSpec spec = parse_run_spec(text);
  spec.output_path = out.string();
  return spec;
}

constexpr std::string_view kSolveSweep = R"({
  "schema": 1, "command": "solve", "problem": "cubic",
  "sweep": [{"path": "params.x",
             "values": [-0.5, -0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5]}],
  "output": {"format": "csv"}
})";

TEST(RunSpecParsing, MinimalSpecTakesDefaults) {
  const auto spec = parse_run_spec(R"({"schema": 1, "command": "proposition"})");
  EXPECT_EQ(spec.command, Command::Proposition);
  EXPECT_TRUE(spec.problem.is_null());
  EXPECT_EQ(spec.format, Format::Json);
  EXPECT_EQ(spec.seed, 0u);
  EXPECT_EQ(spec.workers, 1);
  EXPECT_TRUE(spec.sweep.empty());
}

TEST(RunSpecParsing, RejectsUnknownFieldsEverywhere) {
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "solve", "problem": "cubic", "extra": 1})").field(), "extra");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "solve", "problem": "cubic", "config": {"betta": 1}})").field(),
            "config.betta");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "solve", "problem": "cubic", "params": {"v": 1}})").field(),
            "params.v");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "oscillator", "problem": {"name": "oscillator", "k": 1}})").field(),
            "problem.k");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "proposition", "params": {"grid": {"rows": 3}}})").field(),
            "params.grid.rows");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "solve", "problem": "cubic", "output": {"dir": "x"}})").field(),
            "output.dir");
}

TEST(RunSpecParsing, SchemaAndCommandAreChecked) {
  EXPECT_EQ(spec_error(R"({"command": "solve"})").field(), "schema");
  EXPECT_EQ(spec_error(R"({"schema": 2, "command": "solve"})").field(), "schema");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "integrate"})").field(), "command");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "solve"})").field(), "problem");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "solve", "problem": "cubic", "output": {"format": "xml"}})").field(),
            "output.format");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "solve", "problem": "cubic", "seed": -1})").field(), "seed");
  EXPECT_EQ(spec_error(R"({"schema": 1, "command": "solve", "problem": "cubic", "workers": 0})").field(), "workers");
}

TEST(RunSpecParsing, SyntaxErrorsCarryLineAndColumn) {
  const auto e = spec_error("{\n  \"schema\": 1,\n  \"command\": solve\n}");
  EXPECT_EQ(e.line(), 3);
  EXPECT_EQ(e.column(), 14);
  EXPECT_TRUE(e.field().empty());
}

TEST(RunSpecParsing, CanonicalDocumentRoundTrips) {
  const auto spec = parse_run_spec(kSolveSweep);
  const auto again = spec_from_json(to_json(spec));
  EXPECT_EQ(to_json(again), to_json(spec));
  EXPECT_EQ(again.sweep.size(), 1u);
  EXPECT_EQ(again.sweep[0].values.size(), 11u);
}

TEST(RunSpecParsing, ConfigOverridesAreValidated) {
  auto spec = parse_run_spec(R"({"schema": 1, "command": "solve", "problem": "cubic",
                                 "config": {"beta": 0.1, "max_iter": 50}})");
  const auto config = solver_config(spec, SolverConfig{});
  EXPECT_EQ(config.beta, 0.1);
  EXPECT_EQ(config.max_iter, 50);
  spec.config = {{"q_target", 1.5}};
  EXPECT_THROW((void)solver_config(spec, SolverConfig{}), SpecError);
  spec.config = {{"alpha", "big"}};
  EXPECT_THROW((void)solver_config(spec, SolverConfig{}), SpecError);
}

TEST(Sweep, CartesianProductFirstAxisSlowest) {
  const auto spec = parse_run_spec(R"({"schema": 1, "command": "solve", "problem": "cubic",
      "params": {"x": 0.0},
      "sweep": [{"path": "config.beta", "values": [0.5, 1.0]},
                {"path": "params.x", "values": [-0.1, 0.0, 0.1]}]})");
  const auto points = expand_sweep(spec);
  ASSERT_EQ(points.size(), 6u);
  EXPECT_EQ(points[1].assignments["config.beta"], 0.5);
  EXPECT_EQ(points[1].assignments["params.x"], 0.0);
  EXPECT_EQ(points[3].assignments["config.beta"], 1.0);
  EXPECT_EQ(points[3].assignments["params.x"], -0.1);
  EXPECT_EQ(points[5].spec.params["x"], 0.1);
  EXPECT_EQ(points[5].spec.config["beta"], 1.0);
  EXPECT_TRUE(points[5].spec.sweep.empty());
}

TEST(Sweep, PathsMustResolve) {
  EXPECT_THROW((void)expand_sweep(parse_run_spec(R"({"schema": 1, "command": "solve", "problem": "cubic",
      "sweep": [{"path": "params.x.y", "values": [1]}]})")),
               SpecError);
  EXPECT_THROW((void)expand_sweep(parse_run_spec(R"({"schema": 1, "command": "oscillator",
      "problem": "oscillator", "sweep": [{"path": "problem.g", "values": ["cos"]}]})")),
               SpecError);
  EXPECT_THROW((void)expand_sweep(parse_run_spec(R"({"schema": 1, "command": "solve", "problem": "cubic",
      "sweep": [{"path": "params.z", "values": [1]}]})")),
               SpecError);
  EXPECT_THROW((void)parse_run_spec(R"({"schema": 1, "command": "solve", "problem": "cubic",
      "sweep": [{"path": "params.x", "values": [1]}, {"path": "params.x", "values": [2]}]})"),
               SpecError);
  const auto points = expand_sweep(parse_run_spec(R"({"schema": 1, "command": "oscillator",
      "problem": {"name": "oscillator", "v0": [1, 0]},
      "sweep": [{"path": "problem.v0.1", "values": [0.0, 0.1]}]})"));
  EXPECT_EQ(points[1].spec.problem["v0"][1], 0.1);
}

TEST(Run, SolveSweepMatchesBisection) {
  const auto dir = scratch_dir();
  const auto result = run(spec_with_output(kSolveSweep, dir));
  EXPECT_EQ(result.exit_status, kExitOk);
  const auto rows = read_csv(dir / "summary.csv");
  ASSERT_EQ(rows.size(), 12u);
  const auto& header = rows[0];
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double x = std::stod(rows[i][column(header, "x")]);
    const double y = std::stod(rows[i][column(header, "y")]);
    EXPECT_LE(std::stod(rows[i][column(header, "residual")]), 1e-10);
    EXPECT_LT(std::stod(rows[i][column(header, "q_measured")]), 1.0);
    EXPECT_NEAR(y, oracle::cubic_root(x), 1e-10);
    EXPECT_TRUE(fs::exists(dir / rows[i][column(header, "file")]));
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    EXPECT_NE(entry.path().extension(), ".tmp");
  }
}

TEST(Run, DefaultPropositionIsAnalytic) {
  const auto dir = scratch_dir();
  const auto result = run(spec_with_output(R"({"schema": 1, "command": "proposition"})", dir));
  EXPECT_EQ(result.exit_status, kExitOk);
  const auto summary = Json::parse(slurp(dir / "summary.json")).get<RunSummary>();
  ASSERT_EQ(summary.points.size(), 1u);
  const auto& values = summary.points[0].values;
  EXPECT_NEAR(values["theta"].get<double>(), std::numbers::pi / 2, 1e-12);
  EXPECT_EQ(values["R"].get<double>(), 1.0);
  EXPECT_TRUE(values["nv_ok"].get<bool>());
  EXPECT_EQ(summary.points[0].certificates["ine_ok"], true);
}

TEST(Run, ZeroPerturbationTrajectoryIsConstant) {
  const auto dir = scratch_dir();
  const auto result = run(spec_with_output(R"({"schema": 1, "command": "oscillator",
      "params": {"v": [0.6, -0.8], "eps": 0.0}, "output": {"format": "csv"}})", dir));
  EXPECT_EQ(result.exit_status, kExitOk);
  const auto rows = read_csv(dir / "point_0000.csv");
  ASSERT_EQ(rows[0], (std::vector<std::string>{"t", "x1", "x2", "u", "u_dot", "y1", "y2"}));
  ASSERT_EQ(rows.size(), 1002u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(std::stod(rows[i][1]), 0.6);
    EXPECT_EQ(std::stod(rows[i][2]), -0.8);
    EXPECT_EQ(rows[i][5], "");
  }
}

TEST(Run, CsvUsesSeventeenSignificantDigits) {
  const auto dir = scratch_dir();
  (void)run(spec_with_output(R"({"schema": 1, "command": "solve", "problem": "cubic",
      "params": {"x": 0.1}, "output": {"format": "csv"}})", dir));
  const auto rows = read_csv(dir / "point_0000.csv");
  const std::string& y = rows[1][column(rows[0], "y")];
  EXPECT_EQ(y.size(), std::string("9.9028852405438614e-02").size());
  EXPECT_NEAR(std::stod(y), 0.099028852405457313792, 1e-12);
}

TEST(Run, ExitStatusTable) {
  struct Case {
    const char* name;
    std::string_view spec;
    int expected;
  };
  const Case cases[] = {
      {"ok", R"({"schema": 1, "command": "solve", "problem": "cubic", "params": {"x": 0.2}})", kExitOk},
      {"outside alpha ball", R"({"schema": 1, "command": "solve", "problem": "cubic", "params": {"x": 0.9}})",
       kExitCertificateFailed},
      {"segment outside delta ball",
       R"({"schema": 1, "command": "proposition", "params": {"v2": [1.01, 0], "ladder": [1e-3]}})",
       kExitCertificateFailed},
      {"theta outside ball", R"({"schema": 1, "command": "theta", "problem": "trig", "params": {"v": [0.1, 0.9]}})",
       kExitCertificateFailed},
      {"malformed", R"({"schema": 1, "command": )", kExitInvalidSpec},
      {"unknown field", R"({"schema": 1, "command": "solve", "problem": "cubic", "foo": 1})", kExitInvalidSpec},
      {"wrong dimension", R"({"schema": 1, "command": "solve", "problem": "cubic", "params": {"x": [1, 2]}})",
       kExitInvalidSpec},
      {"bad forcing", R"({"schema": 1, "command": "oscillator", "problem": {"name": "oscillator", "g": "tan"}})",
       kExitInvalidSpec},
      {"family for solve", R"({"schema": 1, "command": "solve", "problem": "oscillator"})", kExitInvalidSpec},
      {"sticking", R"({"schema": 1, "command": "oscillator", "params": {"v": [0, 0], "eps": 0.1}})",
       kExitNumericalError},
      {"iteration cap", R"({"schema": 1, "command": "solve", "problem": "cubic",
                            "config": {"max_iter": 2}, "params": {"x": 0.4}})",
       kExitNumericalError},
      {"no switch in bracket", R"({"schema": 1, "command": "theta",
                                   "problem": {"name": "oscillator", "a": 2.0, "b": 3.0}})",
       kExitNumericalError},
  };
  const auto dir = scratch_dir();
  for (const auto& c : cases) {
    const auto spec_path = dir / "spec.json";
    std::ofstream(spec_path) << c.spec;
    std::ostringstream err;
    RunOptions options;
    options.out_dir = dir / "out";
    EXPECT_EQ(run_main(spec_path, options, err), c.expected) << c.name << "\n" << err.str();
    if (c.expected != kExitOk) EXPECT_FALSE(err.str().empty()) << c.name;
  }
}

TEST(Run, FailingRecordIsNamed) {
  const auto dir = scratch_dir();
  const auto result = run(spec_with_output(R"({"schema": 1, "command": "solve", "problem": "cubic",
      "sweep": [{"path": "params.x", "values": [0.1, 0.9]}]})", dir));
  EXPECT_EQ(result.exit_status, kExitCertificateFailed);
  ASSERT_EQ(result.diagnostics.size(), 1u);
  EXPECT_NE(result.diagnostics[0].find("point 1"), std::string::npos);
  EXPECT_NE(result.diagnostics[0].find("params.x=0.9"), std::string::npos);
  EXPECT_EQ(result.summary.points[0].status, PointStatus::Ok);
  EXPECT_EQ(result.summary.points[1].status, PointStatus::CertificateFailed);
  EXPECT_EQ(result.summary.points[1].error_code, "OutsideBall");
}

TEST(Run, InvalidSweepPointStopsBeforeAnyOutput) {
  const auto dir = scratch_dir() / "out";
  EXPECT_THROW((void)run(spec_with_output(R"({"schema": 1, "command": "solve", "problem": "cubic",
      "sweep": [{"path": "params.x", "values": [0.1, "half"]}]})", dir)),
               SpecError);
  EXPECT_FALSE(fs::exists(dir));
}

TEST(Run, SummaryRoundTrips) {
  const auto dir = scratch_dir();
  (void)run(spec_with_output(R"({"schema": 1, "command": "lipschitz", "problem": "trig_diag",
      "params": {"n_pairs": 16},
      "sweep": [{"path": "params.delta", "values": [0.1, 0.01]}]})", dir));
  const Json parsed = Json::parse(slurp(dir / "summary.json"));
  const auto summary = parsed.get<RunSummary>();
  EXPECT_EQ(Json(summary), parsed);
  EXPECT_EQ(Json(summary).dump(2) + "\n", slurp(dir / "summary.json"));
  for (const auto& record : summary.points) EXPECT_EQ(Json(record).get<PointRecord>(), record);
  EXPECT_EQ(Json::parse(Json(summary).dump()).get<RunSummary>(), summary);
}

TEST(Run, ByteIdenticalAcrossRunsAndWorkerCounts) {
  const auto dir = scratch_dir();
  constexpr std::string_view spec = R"({"schema": 1, "command": "proposition", "seed": 17,
      "params": {"v2": [1.01, 0.0], "eps": 0.01, "grid": {"t_points": 50, "segment_points": 5}},
      "sweep": [{"path": "params.Delta", "values": [0.1, 0.2, 0.3]}],
      "output": {"format": "csv"}})";
  auto first = spec_with_output(spec, dir / "a");
  auto second = spec_with_output(spec, dir / "b");
  second.workers = 3;
  EXPECT_EQ(run(first).exit_status, kExitOk);
  EXPECT_EQ(run(second).exit_status, kExitOk);
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    EXPECT_EQ(slurp(entry.path()), slurp(dir / "b" / entry.path().filename())) << entry.path();
    ++compared;
  }
  EXPECT_EQ(compared, 5u);
}

TEST(Run, OptionsOverrideSpec) {
  const auto dir = scratch_dir();
  RunOptions options;
  options.out_dir = dir;
  options.format = Format::Csv;
  options.seed = 5;
  options.workers = 2;
  const auto spec = apply_options(parse_run_spec(kSolveSweep), options);
  EXPECT_EQ(spec.output_path, dir.string());
  EXPECT_EQ(spec.seed, 5u);
  EXPECT_EQ(spec.workers, 2);
  options.workers = 0;
  EXPECT_THROW((void)apply_options(spec, options), SpecError);
}

}  // namespace
}  // namespace lipimpl::cli
