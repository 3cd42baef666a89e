#include "lipimpl/cli/run.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace lipimpl::cli;

  CLI::App app{"Certified implicit-function and switching-time computations from a JSON run spec"};
  std::string spec_path;
  std::string out_dir;
  std::string format;
  int workers = 0;
  std::uint64_t seed = 0;
  app.add_option("--spec", spec_path, "Run specification (JSON)")->required()->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out_dir, "Output directory (overrides output.path)");
  auto* format_opt =
      app.add_option("--format", format, "Output format (overrides output.format)")->check(CLI::IsMember({"csv", "json"}));
  auto* workers_opt =
      app.add_option("--workers", workers, "Concurrent sweep points")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "Sampling seed (overrides seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalidSpec;
  }

  RunOptions options;
  if (*out_opt) options.out_dir = out_dir;
  if (*format_opt) options.format = parse_format(format);
  if (*workers_opt) options.workers = workers;
  if (*seed_opt) options.seed = seed;
  return run_main(spec_path, options, std::cerr);
}
