#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fmd/io.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Optimal conductivity design from the Kantorovich-Rubinstein duality"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir = "out";
  auto* solve = app.add_subcommand("solve", "Solve a problem configuration and write report and fields");
  solve->add_option("config", config, "Problem configuration (JSON)")->required();
  solve->add_option("--out", out_dir, "Output directory")->capture_default_str();

  std::string example;
  std::string backend = "pdhg";
  int resolution = 128;
  double tol = 0.02;
  auto* verify = app.add_subcommand("verify", "Compare a solve of a named example with its analytic solution");
  verify->add_option("example", example, "Example name")->required();
  verify->add_option("--backend", backend, "pdhg, flow-grid or flow-visibility")->capture_default_str();
  verify->add_option("--resolution", resolution, "Cells along the longest side")->capture_default_str();
  verify->add_option("--tol", tol, "Tolerance applied to every row")->capture_default_str();

  std::string plot_dir;
  auto* plot = app.add_subcommand("plot", "Render heatmaps and glyphs from the field files of a solve");
  plot->add_option("dir", plot_dir, "Directory holding u.csv, p.csv and tensor.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fmd::kExitInputError;
  }

  try {
    if (*solve) {
      const fmd::ProblemConfig cfg = fmd::load_config(config);
      const fmd::SolveOutcome out = fmd::run_solve(cfg, out_dir);
      std::cout << fmd::canonical_json(out.report.to_json());
      if (out.exit_code == fmd::kExitStalled) std::cerr << "solve: stopped at max_iter before convergence\n";
      return out.exit_code;
    }
    if (*verify) {
      const fmd::VerifyTable t = fmd::run_verify(example, backend, resolution, tol);
      std::cout << t.to_csv();
      return t.all_pass() ? fmd::kExitOk : fmd::kExitStalled;
    }
    if (*plot) {
      fmd::emit_plots(plot_dir, plot_dir);
      return fmd::kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return fmd::kExitInputError;
  }
  return fmd::kExitInputError;
}
