#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "riskeq/riskeq.hpp"

// riskeq <mode> --config <path> [--out <dir>] [--tol <x>] [--seed-grid a,b,c,d,nx,ny]
//
// Exit codes: 0 success, 2 configuration error, 3 solver non-convergence.

int main(int argc, char** argv) {
  CLI::App app{"risked competitive equilibrium experiments"};
  std::string mode, config_path, out_dir, seed_grid;
  double tol = -1.0;
  app.add_option("mode", mode, "one of: rnsp, rasp, raeq-census, raad, tatonnement, vector-field")
      ->required();
  app.add_option("--config", config_path, "experiment config file (JSON)")->required();
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_option("--tol", tol, "tolerance override");
  app.add_option("--seed-grid", seed_grid, "override grid as x_min,x_max,y_min,y_max,nx,ny");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    riskeq::ExperimentConfig cfg = riskeq::load_config(config_path);
    cfg.mode = mode;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (tol > 0.0) cfg.tol = tol;
    if (!seed_grid.empty()) {
      std::vector<double> vals;
      std::size_t pos = 0;
      while (pos <= seed_grid.size()) {
        const std::size_t comma = seed_grid.find(',', pos);
        const std::string part = seed_grid.substr(
            pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
          vals.push_back(std::stod(part));
        } catch (const std::exception&) {
          throw riskeq::ConfigError("--seed-grid: malformed number '" + part + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (vals.size() != 6)
        throw riskeq::ConfigError("--seed-grid: expected 6 comma-separated values");
      cfg.grid = riskeq::GridSpec{vals[0], vals[1], vals[2], vals[3],
                                  static_cast<int>(vals[4]), static_cast<int>(vals[5])};
      if (cfg.grid->nx < 1 || cfg.grid->ny < 1)
        throw riskeq::ConfigError("--seed-grid: resolution must be >= 1");
    }
    const int status = riskeq::run_experiment(cfg);
    std::fprintf(stderr, "wrote %s/results.csv and %s/summary.txt\n", cfg.out_dir.c_str(),
                 cfg.out_dir.c_str());
    return status;
  } catch (const riskeq::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
