#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskeq/market.hpp"
#include "riskeq/risk.hpp"

// Price-taking best responses.  The consumer optimizes scenario by scenario;
// the producer's first-stage quantity depends on the risk set and, for two
// scenarios, falls into one of three regimes:
//
//   A: the worst-case measure is the one with the lowest expected price and
//      the unconstrained optimum x = E_min[pi]/c lies on its side,
//   C: symmetric with the highest expected price,
//   B: the kink in between, where x equals the critical quantity x_c at which
//      every measure in the risk set assigns the producer the same expected
//      welfare.

namespace riskeq {

struct SingularPriceError : std::domain_error {
  using std::domain_error::domain_error;
};

enum class RegimeLabel { A, B, C };

inline const char* to_string(RegimeLabel l) {
  switch (l) {
    case RegimeLabel::A: return "A";
    case RegimeLabel::B: return "B";
    case RegimeLabel::C: return "C";
  }
  return "?";
}

struct BestResponse {
  double x = 0.0;
  std::vector<double> x_r;
  std::optional<RegimeLabel> regime;  // set only for two-scenario interval risk sets
  double objective = 0.0;             // risk-adjusted producer value at the optimum
};

// y[w] = max(0, (V[w] - pi[w]) / r[w]); the clamp keeps consumption feasible
// above the choke price.
inline std::vector<double> consumer_best_response(const MarketInstance& inst,
                                                  const PriceVector& prices) {
  detail::check_same_size(prices.size(), inst.scenarios(), "consumer_best_response");
  std::vector<double> y(inst.scenarios());
  for (std::size_t w = 0; w < y.size(); ++w)
    y[w] = std::max(0.0, (inst.V[w] - prices[w]) / inst.r[w]);
  return y;
}

// x_r[w] = pi[w] / c_r[w]; scenario-wise optimal for every monotone risk
// measure, so independent of the risk set.
inline std::vector<double> producer_recourse(const MarketInstance& inst,
                                             const PriceVector& prices) {
  detail::check_same_size(prices.size(), inst.scenarios(), "producer_recourse");
  std::vector<double> xr(inst.scenarios());
  for (std::size_t w = 0; w < xr.size(); ++w) xr[w] = prices[w] / inst.c_r[w];
  return xr;
}

// First-stage quantity at which both extreme measures value the producer's
// position equally: x_c = (pi1^2/c_r1 - pi0^2/c_r0) / (2 (pi0 - pi1)).
// Symmetric in the scenario labels; singular at equal prices.
inline double critical_first_stage(const MarketInstance& inst, const PriceVector& prices) {
  if (inst.scenarios() != 2)
    throw std::invalid_argument("critical_first_stage: needs exactly two scenarios");
  detail::check_same_size(prices.size(), 2, "critical_first_stage");
  const double p0 = prices[0], p1 = prices[1];
  if (std::abs(p0 - p1) < 1e-12)
    throw SingularPriceError("critical_first_stage: prices coincide within 1e-12");
  return (p1 * p1 / inst.c_r[1] - p0 * p0 / inst.c_r[0]) / (2.0 * (p0 - p1));
}

namespace detail {

// Extremes of the expected price over a two-scenario interval risk set.
// e_min belongs to the measure that puts the admissible weight extreme on the
// cheaper scenario's complement; scenario ordering is handled here so callers
// never assume pi0 < pi1.
struct PriceRange {
  double e_min = 0.0, e_max = 0.0;
  double q_min = 0.0, q_max = 0.0;  // weight of scenario 0 under each extreme
};

inline PriceRange expected_price_range(const RiskSet& rs, const PriceVector& prices) {
  const auto iv = rs.interval_view();
  if (!iv) throw std::invalid_argument("expected_price_range: needs a two-scenario risk set");
  const double p0 = prices[0], p1 = prices[1];
  const double e_lo = iv->lo * p0 + (1.0 - iv->lo) * p1;  // weight lo on scenario 0
  const double e_hi = iv->hi * p0 + (1.0 - iv->hi) * p1;
  PriceRange out;
  if (e_hi <= e_lo) {
    out = {e_hi, e_lo, iv->hi, iv->lo};
  } else {
    out = {e_lo, e_hi, iv->lo, iv->hi};
  }
  return out;
}

}  // namespace detail

// Regime at the given prices; ties within tie_tol on either boundary resolve
// to B, the closure of the set where the worst-case measures tie.
inline RegimeLabel classify_regime(const MarketInstance& inst, const RiskSet& rs,
                                   const PriceVector& prices, double tie_tol = 1e-9) {
  const double xc = critical_first_stage(inst, prices);  // throws on equal prices
  const auto pr = detail::expected_price_range(rs, prices);
  const double lo = pr.e_min / inst.c, hi = pr.e_max / inst.c;
  const double tol = tie_tol * std::max(1.0, std::abs(xc));
  if (std::abs(xc - lo) <= tol || std::abs(xc - hi) <= tol) return RegimeLabel::B;
  if (xc < lo) return RegimeLabel::A;
  if (xc > hi) return RegimeLabel::C;
  return RegimeLabel::B;
}

// First-stage quantity prescribed by a fixed regime (two scenarios only).
inline double regime_first_stage(const MarketInstance& inst, const RiskSet& rs,
                                 const PriceVector& prices, RegimeLabel regime) {
  switch (regime) {
    case RegimeLabel::A: return detail::expected_price_range(rs, prices).e_min / inst.c;
    case RegimeLabel::C: return detail::expected_price_range(rs, prices).e_max / inst.c;
    case RegimeLabel::B: return critical_first_stage(inst, prices);
  }
  throw std::logic_error("regime_first_stage: bad regime");
}

// Risk-adjusted producer value at first-stage quantity x with scenario-wise
// optimal recourse folded in: -c x^2/2 + min_k (E_k[pi] x + E_k[pi^2/(2 c_r)]).
inline double producer_objective(const MarketInstance& inst, const RiskSet& rs,
                                 const PriceVector& prices, double x) {
  double best = 0.0;
  for (std::size_t k = 0; k < rs.size(); ++k) {
    double a = 0.0, b = 0.0;
    for (std::size_t w = 0; w < inst.scenarios(); ++w) {
      a += rs.extremes[k][w] * prices[w];
      b += rs.extremes[k][w] * prices[w] * prices[w] / (2.0 * inst.c_r[w]);
    }
    const double piece = a * x + b;
    if (k == 0 || piece < best) best = piece;
  }
  return -0.5 * inst.c * x * x + best;
}

namespace detail {

// Concave piecewise-quadratic maximization over x >= 0 by candidate
// enumeration: the unconstrained peak of every affine piece, every pairwise
// breakpoint, and zero.
inline double producer_first_stage_general(const MarketInstance& inst, const RiskSet& rs,
                                           const PriceVector& prices) {
  const std::size_t K = rs.size();
  std::vector<double> a(K), b(K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t w = 0; w < inst.scenarios(); ++w) {
      a[k] += rs.extremes[k][w] * prices[w];
      b[k] += rs.extremes[k][w] * prices[w] * prices[w] / (2.0 * inst.c_r[w]);
    }
  }
  std::vector<double> candidates{0.0};
  for (std::size_t k = 0; k < K; ++k) candidates.push_back(a[k] / inst.c);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = k + 1; j < K; ++j) {
      if (std::abs(a[k] - a[j]) < 1e-300) continue;
      const double xb = (b[j] - b[k]) / (a[k] - a[j]);
      if (xb >= 0.0 && std::isfinite(xb)) candidates.push_back(xb);
    }
  double best_x = 0.0;
  double best_f = producer_objective(inst, rs, prices, 0.0);
  for (double x : candidates) {
    if (x < 0.0) continue;
    const double f = producer_objective(inst, rs, prices, x);
    if (f > best_f) {
      best_f = f;
      best_x = x;
    }
  }
  return best_x;
}

}  // namespace detail

inline BestResponse producer_best_response(const MarketInstance& inst, const RiskSet& rs,
                                           const PriceVector& prices) {
  detail::check_same_size(prices.size(), inst.scenarios(), "producer_best_response");
  BestResponse br;
  br.x_r = producer_recourse(inst, prices);
  if (inst.scenarios() == 2 && std::abs(prices[0] - prices[1]) >= 1e-12) {
    const RegimeLabel regime = classify_regime(inst, rs, prices);
    br.x = regime_first_stage(inst, rs, prices, regime);
    br.regime = regime;
  } else {
    // Equal prices make the worst case price-independent and x_c singular;
    // the piecewise enumeration needs neither.
    br.x = detail::producer_first_stage_general(inst, rs, prices);
  }
  br.objective = producer_objective(inst, rs, prices, br.x);
  return br;
}

}  // namespace riskeq
