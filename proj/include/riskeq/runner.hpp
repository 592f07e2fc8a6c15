#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "riskeq/config.hpp"
#include "riskeq/equilibrium.hpp"
#include "riskeq/stability.hpp"

// Experiment orchestration.  Every mode writes two files into the configured
// output directory: results.csv (machine readable, fixed column order, 17
// significant digits) and summary.txt (human readable).  Runs are
// single-threaded and fully deterministic, so repeated runs of one config
// produce byte-identical results files.

namespace riskeq {

namespace detail {

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Csv {
  std::string text;
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text += ',';
      text += cells[i];
    }
    text += '\n';
  }
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace detail

struct SweepClusterRow {
  PriceVector representative;  // endpoint of the first seed that found the cluster
  int seeds = 0;
  std::optional<RegimeLabel> regime;
  std::optional<StabilityClass> stability;
  double residual = 0.0;
};

struct SweepCensus {
  std::vector<SweepClusterRow> clusters;  // in first-discovery order
  int total_seeds = 0;
  int failures = 0;
  std::string method;
};

// Run the configured root finder from every node of the seed grid and cluster
// the converged endpoints (max-norm radius 1e-5).  Seeds are visited in index
// order, so the census is deterministic.
inline SweepCensus multistart_sweep(const ExperimentConfig& cfg) {
  if (!cfg.grid) throw ConfigError("multistart_sweep: config has no 'grid'");
  const GridSpec g = *cfg.grid;
  SweepCensus census;
  census.method = cfg.sweep_method.value_or("newton");
  const double cluster_radius = 1e-5;

  for (int i = 0; i < g.nx; ++i) {
    for (int j = 0; j < g.ny; ++j) {
      const double p0 =
          g.nx == 1 ? g.x_min : g.x_min + (g.x_max - g.x_min) * i / (g.nx - 1.0);
      const double p1 =
          g.ny == 1 ? g.y_min : g.y_min + (g.y_max - g.y_min) * j / (g.ny - 1.0);
      ++census.total_seeds;
      PriceVector endpoint;
      try {
        if (census.method == "tatonnement") {
          const TatonnementTrace trace =
              tatonnement(cfg.instance, cfg.risk, PriceVector{{p0, p1}}, cfg.tau,
                          cfg.max_iter, cfg.tol);
          if (!trace.converged) {
            ++census.failures;
            continue;
          }
          endpoint = trace.final;
        } else {
          endpoint = newton_search(cfg.instance, cfg.risk, PriceVector{{p0, p1}}, cfg.tol, 100);
        }
      } catch (const std::exception&) {
        ++census.failures;
        continue;
      }
      bool merged = false;
      for (auto& cluster : census.clusters) {
        double dist = 0.0;
        for (std::size_t w = 0; w < endpoint.size(); ++w)
          dist = std::max(dist, std::abs(cluster.representative[w] - endpoint[w]));
        if (dist <= cluster_radius) {
          ++cluster.seeds;
          merged = true;
          break;
        }
      }
      if (!merged) {
        SweepClusterRow row;
        row.representative = endpoint;
        row.seeds = 1;
        census.clusters.push_back(std::move(row));
      }
    }
  }

  for (auto& cluster : census.clusters) {
    const std::vector<double> z = excess_supply(cfg.instance, cfg.risk, cluster.representative);
    for (double v : z) cluster.residual = std::max(cluster.residual, std::abs(v));
    try {
      const RegimeLabel regime = classify_regime(cfg.instance, cfg.risk, cluster.representative);
      cluster.regime = regime;
      const EquilibriumRecord rec =
          detail::make_record(cfg.instance, cfg.risk, cluster.representative, regime);
      cluster.stability = classify_stability(cfg.instance, cfg.risk, rec);
    } catch (const std::exception&) {
      // leave the labels empty; the row still reports prices and residual
    }
  }
  return census;
}

// One row per grid node with the active-regime excess supply and all three
// per-regime residuals, for contouring the null manifolds.
inline void export_vector_field(const ExperimentConfig& cfg, detail::Csv& csv,
                                std::string& summary) {
  if (!cfg.grid) throw ConfigError("vector-field: config has no 'grid'");
  const GridSpec g = *cfg.grid;
  csv.row({"pi1", "pi2", "z1", "z2", "regime", "za1", "za2", "zb1", "zb2", "zc1", "zc2"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < g.nx; ++i) {
    for (int j = 0; j < g.ny; ++j) {
      const double p0 =
          g.nx == 1 ? g.x_min : g.x_min + (g.x_max - g.x_min) * i / (g.nx - 1.0);
      const double p1 =
          g.ny == 1 ? g.y_min : g.y_min + (g.y_max - g.y_min) * j / (g.ny - 1.0);
      const PriceVector pi{{p0, p1}};
      const std::vector<double> z = excess_supply(cfg.instance, cfg.risk, pi);
      const std::vector<double> za = regime_excess(cfg.instance, cfg.risk, pi, RegimeLabel::A);
      const std::vector<double> zc = regime_excess(cfg.instance, cfg.risk, pi, RegimeLabel::C);
      std::vector<double> zb{nan, nan};
      std::string regime = "-";
      try {
        zb = regime_excess(cfg.instance, cfg.risk, pi, RegimeLabel::B);
        regime = to_string(classify_regime(cfg.instance, cfg.risk, pi));
      } catch (const SingularPriceError&) {
        // equal prices: the kink rule is undefined and no regime label applies
      }
      csv.row({detail::fmt17(p0), detail::fmt17(p1), detail::fmt17(z[0]), detail::fmt17(z[1]),
               regime, detail::fmt17(za[0]), detail::fmt17(za[1]), detail::fmt17(zb[0]),
               detail::fmt17(zb[1]), detail::fmt17(zc[0]), detail::fmt17(zc[1])});
    }
  }
  summary += "vector field over [" + detail::fmt17(g.x_min) + ", " + detail::fmt17(g.x_max) +
             "] x [" + detail::fmt17(g.y_min) + ", " + detail::fmt17(g.y_max) + "], " +
             std::to_string(g.nx) + "x" + std::to_string(g.ny) + " nodes\n";
}

namespace detail {

inline void planner_rows(const PlannerSolution& sol, const MarketInstance& inst, Csv& csv) {
  std::vector<std::string> header{"x"};
  std::vector<std::string> cells{fmt17(sol.alloc.x)};
  const std::size_t n = inst.scenarios();
  for (std::size_t w = 0; w < n; ++w) header.push_back("x_r" + std::to_string(w + 1));
  for (std::size_t w = 0; w < n; ++w) cells.push_back(fmt17(sol.alloc.x_r[w]));
  for (std::size_t w = 0; w < n; ++w) header.push_back("y" + std::to_string(w + 1));
  for (std::size_t w = 0; w < n; ++w) cells.push_back(fmt17(sol.alloc.y[w]));
  for (std::size_t w = 0; w < n; ++w) header.push_back("pi" + std::to_string(w + 1));
  for (std::size_t w = 0; w < n; ++w) cells.push_back(fmt17(sol.support_prices[w]));
  header.push_back("value");
  cells.push_back(fmt17(sol.value));
  for (std::size_t w = 0; w < n; ++w) header.push_back("mu" + std::to_string(w + 1));
  for (std::size_t w = 0; w < n; ++w) cells.push_back(fmt17(sol.worst_case[w]));
  for (std::size_t k = 0; k < sol.dual_weights.size(); ++k)
    header.push_back("lambda" + std::to_string(k + 1));
  for (double l : sol.dual_weights) cells.push_back(fmt17(l));
  csv.row(header);
  csv.row(cells);
}

inline std::string describe_alloc(const PlannerSolution& sol) {
  std::string s = "x = " + fmt17(sol.alloc.x) + "\n";
  for (std::size_t w = 0; w < sol.alloc.x_r.size(); ++w)
    s += "scenario " + std::to_string(w + 1) + ": x_r = " + fmt17(sol.alloc.x_r[w]) +
         ", y = " + fmt17(sol.alloc.y[w]) + ", pi = " + fmt17(sol.support_prices[w]) + "\n";
  return s;
}

}  // namespace detail

// Dispatch on cfg.mode, write results.csv and summary.txt under cfg.out_dir.
// Returns the process exit status: 0 on success, 3 on solver non-convergence.
// Configuration problems (missing keys for the mode) throw ConfigError.
inline int run_experiment(const ExperimentConfig& cfg) {
  const auto& modes = detail::known_modes();
  if (std::find(modes.begin(), modes.end(), cfg.mode) == modes.end())
    throw ConfigError("run_experiment: mode '" + cfg.mode + "' is not one of the known modes");

  std::filesystem::create_directories(cfg.out_dir);
  detail::Csv csv;
  std::string summary;
  int status = 0;

  try {
    if (cfg.mode == "rnsp") {
      ProbabilityVector measure;
      if (cfg.measure)
        measure = *cfg.measure;
      else if (cfg.risk.size() == 1)
        measure = cfg.risk.extremes.front();
      else
        throw ConfigError("rnsp: config needs 'measure' (or a single risk extreme)");
      const PlannerSolution sol = solve_rnsp(cfg.instance, measure);
      detail::planner_rows(sol, cfg.instance, csv);
      summary += "risk-neutral planner optimum, value = " + detail::fmt17(sol.value) + "\n" +
                 detail::describe_alloc(sol);
    } else if (cfg.mode == "rasp") {
      const PlannerSolution sol = solve_rasp(cfg.instance, cfg.risk);
      detail::planner_rows(sol, cfg.instance, csv);
      summary += "risk-averse planner optimum, theta = " + detail::fmt17(sol.value) + "\n" +
                 detail::describe_alloc(sol);
      summary += "worst case mu = (";
      for (std::size_t w = 0; w < sol.worst_case.size(); ++w)
        summary += (w ? ", " : "") + detail::fmt17(sol.worst_case[w]);
      summary += ")\n";
      if (sol.duals_nonunique)
        summary += "note: dual weights are not unique (more than two extremes tie)\n";
    } else if (cfg.mode == "raeq-census" && cfg.sweep_method) {
      const SweepCensus census = multistart_sweep(cfg);
      csv.row({"pi1", "pi2", "seeds", "regime", "stability", "residual"});
      for (const auto& row : census.clusters)
        csv.row({detail::fmt17(row.representative[0]), detail::fmt17(row.representative[1]),
                 std::to_string(row.seeds), row.regime ? to_string(*row.regime) : "-",
                 row.stability ? to_string(*row.stability) : "-", detail::fmt17(row.residual)});
      summary += census.method + " sweep: " + std::to_string(census.clusters.size()) +
                 " clusters from " + std::to_string(census.total_seeds) + " seeds, " +
                 std::to_string(census.failures) + " failures\n";
      for (const auto& row : census.clusters)
        summary += "  (" + detail::fmt17(row.representative[0]) + ", " +
                   detail::fmt17(row.representative[1]) + ") seeds=" +
                   std::to_string(row.seeds) + "\n";
      if (census.clusters.empty()) status = 3;
    } else if (cfg.mode == "raeq-census") {
      AnalyticCensus census = analytic_equilibria(cfg.instance, cfg.risk);
      for (auto& rec : census.equilibria)
        rec.stability = classify_stability(cfg.instance, cfg.risk, rec);
      csv.row({"pi1", "pi2", "regime", "stability", "welfare_producer", "welfare_consumer",
               "measure1", "measure2", "x", "x_r1", "x_r2", "y1", "y2", "residual"});
      for (const auto& rec : census.equilibria)
        csv.row({detail::fmt17(rec.prices[0]), detail::fmt17(rec.prices[1]),
                 rec.regime ? to_string(*rec.regime) : "-",
                 rec.stability ? to_string(*rec.stability) : "-",
                 detail::fmt17(rec.welfare_pair.first), detail::fmt17(rec.welfare_pair.second),
                 detail::fmt17(rec.equalizing_measure[0]),
                 detail::fmt17(rec.equalizing_measure[1]), detail::fmt17(rec.alloc.x),
                 detail::fmt17(rec.alloc.x_r[0]), detail::fmt17(rec.alloc.x_r[1]),
                 detail::fmt17(rec.alloc.y[0]), detail::fmt17(rec.alloc.y[1]),
                 detail::fmt17(rec.residual)});
      summary += "analytic census: " + std::to_string(census.equilibria.size()) +
                 " equilibria, " + std::to_string(census.boundary.size()) +
                 " boundary candidates\n";
      for (const auto& rec : census.equilibria)
        summary += "  (" + detail::fmt17(rec.prices[0]) + ", " + detail::fmt17(rec.prices[1]) +
                   ") regime " + (rec.regime ? to_string(*rec.regime) : "-") + ", " +
                   (rec.stability ? to_string(*rec.stability) : "-") + ", welfare (" +
                   detail::fmt17(rec.welfare_pair.first) + ", " +
                   detail::fmt17(rec.welfare_pair.second) + ")\n";
      for (const auto& rec : census.boundary)
        summary += "  boundary candidate at (" + detail::fmt17(rec.prices[0]) + ", " +
                   detail::fmt17(rec.prices[1]) + ")\n";
    } else if (cfg.mode == "raad") {
      const RaadRecord rec = construct_raad(cfg.instance, cfg.risk, cfg.tol);
      const std::size_t n = cfg.instance.scenarios();
      std::vector<std::string> header, cells;
      for (std::size_t w = 0; w < n; ++w) header.push_back("pi" + std::to_string(w + 1));
      for (std::size_t w = 0; w < n; ++w) cells.push_back(detail::fmt17(rec.prices[w]));
      for (std::size_t w = 0; w < n; ++w) header.push_back("mu" + std::to_string(w + 1));
      for (std::size_t w = 0; w < n; ++w) cells.push_back(detail::fmt17(rec.security_prices[w]));
      header.insert(header.end(), {"x"});
      cells.push_back(detail::fmt17(rec.alloc.x));
      for (std::size_t w = 0; w < n; ++w) header.push_back("x_r" + std::to_string(w + 1));
      for (std::size_t w = 0; w < n; ++w) cells.push_back(detail::fmt17(rec.alloc.x_r[w]));
      for (std::size_t w = 0; w < n; ++w) header.push_back("y" + std::to_string(w + 1));
      for (std::size_t w = 0; w < n; ++w) cells.push_back(detail::fmt17(rec.alloc.y[w]));
      header.insert(header.end(), {"theta", "phi", "positions_valid"});
      cells.push_back(detail::fmt17(rec.theta));
      cells.push_back(detail::fmt17(rec.phi));
      cells.push_back(rec.positions ? "1" : "0");
      for (std::size_t w = 0; w < n; ++w) header.push_back("a" + std::to_string(w + 1));
      for (std::size_t w = 0; w < n; ++w)
        cells.push_back(rec.positions ? detail::fmt17(rec.positions->first[w]) : "nan");
      for (std::size_t w = 0; w < n; ++w) header.push_back("b" + std::to_string(w + 1));
      for (std::size_t w = 0; w < n; ++w)
        cells.push_back(rec.positions ? detail::fmt17(rec.positions->second[w]) : "nan");
      csv.row(header);
      csv.row(cells);
      summary += "risk-trading equilibrium\n";
      summary += "energy prices pi = (";
      for (std::size_t w = 0; w < n; ++w)
        summary += (w ? ", " : "") + detail::fmt17(rec.prices[w]);
      summary += ")\nsecurity prices mu = (";
      for (std::size_t w = 0; w < n; ++w)
        summary += (w ? ", " : "") + detail::fmt17(rec.security_prices[w]);
      summary += ")\ntheta = " + detail::fmt17(rec.theta) + ", phi = " + detail::fmt17(rec.phi) +
                 "\n";
      summary += rec.positions ? "canonical hedge positions verified\n"
                               : "canonical hedge positions omitted (conditions not met)\n";
    } else if (cfg.mode == "tatonnement") {
      if (!cfg.start) throw ConfigError("tatonnement: config needs 'start'");
      const TatonnementTrace trace =
          tatonnement(cfg.instance, cfg.risk, *cfg.start, cfg.tau, cfg.max_iter, cfg.tol);
      csv.row({"iter", "pi1", "pi2", "z1", "z2"});
      for (std::size_t i = 0; i < trace.iterates.size(); ++i)
        csv.row({std::to_string(i), detail::fmt17(trace.iterates[i][0]),
                 detail::fmt17(trace.iterates[i][1]), detail::fmt17(trace.residuals[i][0]),
                 detail::fmt17(trace.residuals[i][1])});
      summary += std::string("tatonnement ") + (trace.converged ? "converged" : "stopped") +
                 " after " + std::to_string(trace.iterates.size() - 1) + " updates at (" +
                 detail::fmt17(trace.final[0]) + ", " + detail::fmt17(trace.final[1]) + ")\n";
      if (!trace.converged) status = 3;
    } else if (cfg.mode == "vector-field") {
      export_vector_field(cfg, csv, summary);
    }
  } catch (const NonConvergenceError& e) {
    summary += std::string("solver failed to converge: ") + e.what() + "\n";
    status = 3;
  } catch (const SingularJacobianError& e) {
    summary += std::string("solver failure: ") + e.what() + "\n";
    status = 3;
  }

  detail::write_file(std::filesystem::path(cfg.out_dir) / "results.csv", csv.text);
  detail::write_file(std::filesystem::path(cfg.out_dir) / "summary.txt", summary);
  return status;
}

}  // namespace riskeq
