#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "memlqr/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Finite-memory linear-quadratic optimal control toolkit"};
  app.require_subcommand(1);

  memlqr::CliOptions opt;
  std::string scheme = "heun";
  app.add_option("--scheme", scheme, "time-stepping scheme")
      ->check(CLI::IsMember({"euler", "heun"}));
  app.add_option("--threads", opt.threads,
                 "worker threads (serial build: recorded in the report)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", opt.out_dir, "output directory");
  app.add_flag("--no-timing", opt.no_timing,
               "omit timing so identical runs emit byte-identical reports");

  CLI::App* solve =
      app.add_subcommand("solve", "open-loop and closed-loop solve");
  solve->add_option("problem", opt.problem_path, "problem JSON file")
      ->required();
  solve
      ->add_option("--checkpoints", opt.checkpoints,
                   "extra nodes keeping the full quadratic memory block")
      ->delimiter(',');
  solve->add_flag("--dump-tables", opt.dump_tables_flag,
                  "also write the binary propagator tables");

  CLI::App* verify =
      app.add_subcommand("verify", "identity and consistency suites");
  verify->add_option("problem", opt.problem_path, "problem JSON file")
      ->required();

  CLI::App* convergence =
      app.add_subcommand("convergence", "grid refinement study");
  convergence->add_option("problem", opt.problem_path, "problem JSON file")
      ->required();
  convergence
      ->add_option("--grids", opt.grids, "grid sizes, at least 3 (default 50,100,200,400)")
      ->delimiter(',');

  CLI::App* tables =
      app.add_subcommand("tables", "propagator table dump");
  tables->add_option("problem", opt.problem_path, "problem JSON file")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse diagnostic
    return code == 0 ? 0 : 1;
  }

  opt.scheme = memlqr::scheme_from_name(scheme);

  return memlqr::run_guarded(
      [&]() -> int {
        if (solve->parsed()) return memlqr::run_solve(opt, std::cout);
        if (verify->parsed()) return memlqr::run_verify(opt, std::cout);
        if (convergence->parsed())
          return memlqr::run_convergence(opt, std::cout);
        return memlqr::run_tables(opt, std::cout);
      },
      std::cerr);
}
