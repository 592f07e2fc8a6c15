#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

// Two-stage single-good market with one producer and one consumer.
//
// The producer commits a first-stage quantity x at quadratic cost c*x^2/2 and
// a per-scenario recourse quantity x_r at cost c_r*x_r^2/2.  The consumer buys
// y per scenario with utility V*y - r*y^2/2.  All types are plain immutable
// values; every operation is a pure function, safe to share across threads.

namespace riskeq {

struct ScenarioIndex {
  std::size_t i = 0;
};

struct MarketInstance {
  double c = 0.0;            // first-stage cost slope, money/quantity^2
  std::vector<double> c_r;   // recourse cost slope per scenario
  std::vector<double> V;     // consumer choke value per scenario
  std::vector<double> r;     // consumer utility curvature per scenario

  std::size_t scenarios() const { return c_r.size(); }

  // Throws std::invalid_argument unless c > 0, c_r > 0, r > 0, V >= 0 and all
  // per-scenario arrays have equal length >= 1.
  void validate() const {
    const std::size_t n = c_r.size();
    if (n == 0) throw std::invalid_argument("MarketInstance: need at least one scenario");
    if (V.size() != n || r.size() != n)
      throw std::invalid_argument("MarketInstance: scenario arrays differ in length");
    if (!(c > 0.0)) throw std::invalid_argument("MarketInstance: c must be > 0");
    for (std::size_t w = 0; w < n; ++w) {
      if (!(c_r[w] > 0.0)) throw std::invalid_argument("MarketInstance: c_r must be > 0");
      if (!(r[w] > 0.0)) throw std::invalid_argument("MarketInstance: r must be > 0");
      if (!(V[w] >= 0.0)) throw std::invalid_argument("MarketInstance: V must be >= 0");
    }
  }
};

struct ProbabilityVector {
  std::vector<double> p;

  std::size_t size() const { return p.size(); }
  double operator[](std::size_t w) const { return p[w]; }

  // Nonnegative weights summing to one within `tol`.
  void validate(double tol = 1e-12) const {
    if (p.empty()) throw std::invalid_argument("ProbabilityVector: empty");
    double sum = 0.0;
    for (double w : p) {
      if (!(w >= 0.0)) throw std::invalid_argument("ProbabilityVector: negative weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > tol)
      throw std::invalid_argument("ProbabilityVector: weights sum to " + std::to_string(sum));
  }
};

struct PriceVector {
  std::vector<double> pi;  // spot price per scenario, >= 0

  std::size_t size() const { return pi.size(); }
  double operator[](std::size_t w) const { return pi[w]; }

  void validate() const {
    if (pi.empty()) throw std::invalid_argument("PriceVector: empty");
    for (double v : pi)
      if (!(v >= 0.0)) throw std::invalid_argument("PriceVector: negative price");
  }
};

struct Allocation {
  double x = 0.0;            // first-stage production
  std::vector<double> x_r;   // recourse production per scenario
  std::vector<double> y;     // consumption per scenario

  void validate() const {
    if (x_r.size() != y.size())
      throw std::invalid_argument("Allocation: x_r and y differ in length");
    if (!(x >= 0.0)) throw std::invalid_argument("Allocation: x must be >= 0");
    for (std::size_t w = 0; w < x_r.size(); ++w) {
      if (!(x_r[w] >= 0.0)) throw std::invalid_argument("Allocation: x_r must be >= 0");
      if (!(y[w] >= 0.0)) throw std::invalid_argument("Allocation: y must be >= 0");
    }
  }
};

namespace detail {
inline void check_scenario(const MarketInstance& inst, ScenarioIndex w) {
  if (w.i >= inst.scenarios())
    throw std::out_of_range("scenario index " + std::to_string(w.i) + " out of range [0, " +
                            std::to_string(inst.scenarios()) + ")");
}
inline void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}
}  // namespace detail

// Producer welfare in scenario w, price term excluded: -c*x^2/2 - c_r*x_r^2/2.
inline double producer_welfare(const MarketInstance& inst, const Allocation& alloc,
                               ScenarioIndex w) {
  detail::check_scenario(inst, w);
  return -0.5 * inst.c * alloc.x * alloc.x -
         0.5 * inst.c_r[w.i] * alloc.x_r[w.i] * alloc.x_r[w.i];
}

// Consumer welfare in scenario w, price term excluded: V*y - r*y^2/2.
inline double consumer_welfare(const MarketInstance& inst, const Allocation& alloc,
                               ScenarioIndex w) {
  detail::check_scenario(inst, w);
  return inst.V[w.i] * alloc.y[w.i] - 0.5 * inst.r[w.i] * alloc.y[w.i] * alloc.y[w.i];
}

struct TradedWelfares {
  std::vector<double> producer;  // W_p + pi*(x + x_r) per scenario
  std::vector<double> consumer;  // W_c - pi*y per scenario
};

inline TradedWelfares traded_welfares(const MarketInstance& inst, const Allocation& alloc,
                                      const PriceVector& prices) {
  const std::size_t n = inst.scenarios();
  detail::check_same_size(prices.size(), n, "traded_welfares");
  detail::check_same_size(alloc.x_r.size(), n, "traded_welfares");
  TradedWelfares out;
  out.producer.resize(n);
  out.consumer.resize(n);
  for (std::size_t w = 0; w < n; ++w) {
    out.producer[w] =
        producer_welfare(inst, alloc, {w}) + prices[w] * (alloc.x + alloc.x_r[w]);
    out.consumer[w] = consumer_welfare(inst, alloc, {w}) - prices[w] * alloc.y[w];
  }
  return out;
}

// Scenario-wise total welfare W_p + W_c (price transfers cancel at cleared markets).
inline std::vector<double> social_welfare(const MarketInstance& inst, const Allocation& alloc) {
  const std::size_t n = inst.scenarios();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = producer_welfare(inst, alloc, {i}) + consumer_welfare(inst, alloc, {i});
  return w;
}

}  // namespace riskeq
