#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "riskeq/agents.hpp"
#include "riskeq/market.hpp"
#include "riskeq/risk.hpp"

// Shared fixtures for the test suites: the reference two-scenario instance,
// its equilibria frozen to full double precision from an independent
// high-precision computation, and small random-instance generators.

namespace testsupport {

using riskeq::MarketInstance;
using riskeq::PriceVector;
using riskeq::ProbabilityVector;
using riskeq::RiskSet;

inline MarketInstance paper_instance() {
  MarketInstance inst;
  inst.c = 23.0 / 2.0;
  inst.c_r = {1.0, 7.0 / 2.0};
  inst.V = {4.0, 48.0 / 5.0};
  inst.r = {2.0, 10.0};
  return inst;
}

inline RiskSet paper_risk() {
  return RiskSet{{ProbabilityVector{{0.25, 0.75}}, ProbabilityVector{{0.75, 0.25}}}};
}

// The three equilibria of the reference instance.  The flat-regime points are
// roots of 2x2 rational linear systems, the kink point is a polynomial root;
// all were computed independently at 40-digit precision and rounded once.
inline PriceVector green_prices() { return PriceVector{{1.2255782312925170, 2.0698412698412698}}; }
inline PriceVector blue_prices() { return PriceVector{{1.2357830273361458, 2.1095265877887151}}; }
inline PriceVector red_prices() { return PriceVector{{1.2478282088823816, 2.1563689604685212}}; }

// Values as printed in the reference runs (five to six significant digits).
inline PriceVector green_reported() { return PriceVector{{1.2256, 2.0698}}; }
inline PriceVector blue_reported() { return PriceVector{{1.23578, 2.10953}}; }
inline PriceVector red_reported() { return PriceVector{{1.2478, 2.1564}}; }

// Risk-adjusted (producer, consumer) welfare at each equilibrium.
constexpr double kGreenWelfareProducer = 0.79700068181467598;
constexpr double kGreenWelfareConsumer = 2.1520566595194389;
constexpr double kBlueWelfareProducer = 0.82129230930582737;
constexpr double kBlueWelfareConsumer = 2.1340078002311002;
constexpr double kRedWelfareProducer = 0.84455973595661777;
constexpr double kRedWelfareConsumer = 2.1128048321253734;

// Risk-averse planner optimum of the reference instance (vertex solution at
// the extreme weighting scenario 1 by 3/4).
constexpr double kRaspTheta = 2.9573645680819912;

constexpr double kBlueEqualizingP = 0.48845431160164492;

struct Rng {
  std::mt19937 gen;
  explicit Rng(unsigned seed) : gen(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen);
  }
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(gen);
  }

  MarketInstance instance(std::size_t n) {
    MarketInstance inst;
    inst.c = uniform(0.2, 20.0);
    for (std::size_t w = 0; w < n; ++w) {
      inst.c_r.push_back(uniform(0.2, 10.0));
      inst.V.push_back(uniform(0.5, 12.0));
      inst.r.push_back(uniform(0.2, 12.0));
    }
    return inst;
  }

  ProbabilityVector probability(std::size_t n, bool charge_all = false) {
    std::vector<double> w(n);
    double sum = 0.0;
    for (double& v : w) {
      v = charge_all ? uniform(0.05, 1.0) : uniform(0.0, 1.0);
      sum += v;
    }
    for (double& v : w) v /= sum;
    // compensate accumulated rounding so the vector sums to one exactly enough
    double total = 0.0;
    for (double v : w) total += v;
    w.back() += 1.0 - total;
    return ProbabilityVector{w};
  }

  RiskSet risk_set(std::size_t n, std::size_t K, bool charge_all = false) {
    RiskSet rs;
    for (std::size_t k = 0; k < K; ++k) rs.extremes.push_back(probability(n, charge_all));
    return rs;
  }

  PriceVector prices(std::size_t n, double hi = 8.0) {
    std::vector<double> p(n);
    for (double& v : p) v = uniform(0.0, hi);
    return PriceVector{p};
  }

  std::vector<double> vector(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (double& x : v) x = uniform(lo, hi);
    return v;
  }
};

// Test-side evaluation of the producer's risk-adjusted traded welfare at
// first-stage x with scenario-wise optimal recourse, written out directly so
// it shares no code with the library's piecewise-quadratic representation.
inline double oracle_producer_value(const MarketInstance& inst, const RiskSet& rs,
                                    const PriceVector& prices, double x) {
  const std::size_t n = inst.scenarios();
  std::vector<double> traded(n);
  for (std::size_t w = 0; w < n; ++w) {
    const double xr = prices[w] / inst.c_r[w];
    traded[w] = -0.5 * inst.c * x * x - 0.5 * inst.c_r[w] * xr * xr +
                prices[w] * (x + xr);
  }
  double worst = riskeq::expected_value(rs.extremes.front(), traded);
  for (std::size_t k = 1; k < rs.size(); ++k)
    worst = std::min(worst, riskeq::expected_value(rs.extremes[k], traded));
  return worst;
}

// Brute-force grid oracle for the producer's first-stage choice.
inline double grid_best_first_stage(const MarketInstance& inst, const RiskSet& rs,
                                    const PriceVector& prices, double x_max, int points,
                                    double* best_value = nullptr) {
  double best_x = 0.0;
  double best_f = oracle_producer_value(inst, rs, prices, 0.0);
  for (int i = 1; i < points; ++i) {
    const double x = x_max * i / (points - 1.0);
    const double f = oracle_producer_value(inst, rs, prices, x);
    if (f > best_f) {
      best_f = f;
      best_x = x;
    }
  }
  if (best_value) *best_value = best_f;
  return best_x;
}

}  // namespace testsupport
