#pragma once

// Executes a RunSpec: one result file per sweep point plus a summary.
//
// Exit status: 0 when every certificate passes, 1 when some certificate
// fails (ball_ok, ine_ok, nv_ok, ...), 2 for an invalid spec and 3 for a
// numerical failure such as a singular Jacobian, lost contraction or
// sticking. When points disagree the largest of 2, 3, 1 wins in that order.

#include "lipimpl/cli/run_spec.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace lipimpl::cli {

enum ExitStatus : int {
  kExitOk = 0,
  kExitCertificateFailed = 1,
  kExitInvalidSpec = 2,
  kExitNumericalError = 3,
};

/// Command-line overrides of the corresponding spec fields.
struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  std::optional<Format> format;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
};

enum class PointStatus { Ok, CertificateFailed, Invalid, NumericalError };

std::string_view to_string(PointStatus status);
PointStatus parse_point_status(std::string_view text);

struct PointRecord {
  std::size_t index = 0;
  Json assignments = Json::object();   ///< sweep path -> value
  std::string file;                    ///< relative to the output directory
  PointStatus status = PointStatus::Ok;
  Json certificates = Json::object();  ///< certificate name -> bool
  Json values = Json::object();        ///< scalar and short vector results
  std::string error_code;              ///< empty unless a lipimpl::Error was raised
  std::string message;

  bool operator==(const PointRecord& other) const;
};

struct RunSummary {
  std::string command;
  std::uint64_t seed = 0;
  std::string format;
  int exit_status = 0;
  std::vector<PointRecord> points;

  bool operator==(const RunSummary& other) const;
};

void to_json(Json& out, const PointRecord& record);
void from_json(const Json& in, PointRecord& record);
void to_json(Json& out, const RunSummary& summary);
void from_json(const Json& in, RunSummary& summary);

struct RunResult {
  int exit_status = 0;
  RunSummary summary;
  std::filesystem::path out_dir;
  std::vector<std::string> diagnostics;  ///< one line per failing point
};

RunSpec apply_options(RunSpec spec, const RunOptions& options);

/// Validates every sweep point before any work starts (SpecError), then runs
/// the points on `spec.workers` threads and writes the result files. Applies
/// LIPIMPL_LOG on entry.
RunResult run(const RunSpec& spec);

/// Reads LIPIMPL_LOG (off | info | debug; warnings only when unset).
void configure_logging();

/// Loads, runs and reports; returns the exit status.
int run_main(const std::filesystem::path& spec_path, const RunOptions& options, std::ostream& err);

}  // namespace lipimpl::cli
