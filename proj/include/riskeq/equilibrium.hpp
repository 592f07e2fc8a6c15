#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "riskeq/agents.hpp"
#include "riskeq/market.hpp"
#include "riskeq/planner.hpp"
#include "riskeq/risk.hpp"

// Competitive equilibria of the risked market: roots of the excess supply map
// z(pi) = x(pi) + x_r(pi) - y(pi) over nonnegative prices, found by price
// adjustment, damped Newton, or (for two scenarios) analytic enumeration of
// the per-regime systems.  Also the Arrow-Debreu construction that completes
// the market with one security per scenario.

namespace riskeq {

struct SingularJacobianError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class StabilityClass { Stable, Unstable, Marginal };

inline const char* to_string(StabilityClass s) {
  switch (s) {
    case StabilityClass::Stable: return "stable";
    case StabilityClass::Unstable: return "unstable";
    case StabilityClass::Marginal: return "marginal";
  }
  return "?";
}

struct Jacobian2 {
  double m[2][2] = {{0.0, 0.0}, {0.0, 0.0}};  // m[i][j] = dz_i / dpi_j
};

struct EquilibriumRecord {
  PriceVector prices;
  Allocation alloc;
  std::optional<RegimeLabel> regime;
  std::pair<double, double> welfare_pair;  // risk-adjusted (producer, consumer)
  ProbabilityVector equalizing_measure;
  std::optional<StabilityClass> stability;
  double residual = 0.0;  // max-norm excess supply at the recorded prices
  double tol = 1e-6;
};

struct TatonnementTrace {
  std::vector<PriceVector> iterates;
  std::vector<std::vector<double>> residuals;  // excess supply at each iterate
  bool converged = false;
  PriceVector final;
};

struct RaadRecord {
  PriceVector prices;                 // energy prices pi
  ProbabilityVector security_prices;  // mu, one Arrow-Debreu price per scenario
  Allocation alloc;
  double theta = 0.0;  // producer risk-adjusted value including security payoffs
  double phi = 0.0;    // consumer counterpart
  std::vector<double> dual_weights;   // lambda with mu = sum_k lambda_k Q_k
  // Canonical fully-hedging holdings a (producer) and b = -a (consumer),
  // present only when they satisfy every equilibrium condition at `tol`.
  std::optional<std::pair<std::vector<double>, std::vector<double>>> positions;
  double tol = 1e-6;
};

inline std::vector<double> excess_supply(const MarketInstance& inst, const RiskSet& rs,
                                         const PriceVector& prices) {
  const BestResponse br = producer_best_response(inst, rs, prices);
  const std::vector<double> y = consumer_best_response(inst, prices);
  std::vector<double> z(inst.scenarios());
  for (std::size_t w = 0; w < z.size(); ++w) z[w] = br.x + br.x_r[w] - y[w];
  return z;
}

// Excess supply with the first-stage rule of a fixed regime, whether or not
// that regime is active at the given prices; used for Jacobians and for
// plotting the per-regime null manifolds.
inline std::vector<double> regime_excess(const MarketInstance& inst, const RiskSet& rs,
                                         const PriceVector& prices, RegimeLabel regime) {
  if (inst.scenarios() != 2)
    throw std::invalid_argument("regime_excess: needs exactly two scenarios");
  const double x = regime_first_stage(inst, rs, prices, regime);
  const std::vector<double> xr = producer_recourse(inst, prices);
  const std::vector<double> y = consumer_best_response(inst, prices);
  return {x + xr[0] - y[0], x + xr[1] - y[1]};
}

// Analytic Jacobian of regime_excess at interior consumer prices (pi < V).
// Regimes A and C are constant matrices; regime B differentiates the critical
// quantity x_c in closed form.
inline Jacobian2 regime_jacobian(const MarketInstance& inst, const RiskSet& rs,
                                 const PriceVector& prices, RegimeLabel regime) {
  if (inst.scenarios() != 2)
    throw std::invalid_argument("regime_jacobian: needs exactly two scenarios");
  Jacobian2 J;
  double dx0 = 0.0, dx1 = 0.0;  // dx/dpi_0, dx/dpi_1 of the first-stage rule
  if (regime == RegimeLabel::B) {
    const double xc = critical_first_stage(inst, prices);
    const double denom = prices[0] - prices[1];
    dx0 = (-prices[0] / inst.c_r[0] - xc) / denom;
    dx1 = (prices[1] / inst.c_r[1] + xc) / denom;
  } else {
    const auto pr = detail::expected_price_range(rs, prices);
    const double q = regime == RegimeLabel::A ? pr.q_min : pr.q_max;
    dx0 = q / inst.c;
    dx1 = (1.0 - q) / inst.c;
  }
  for (int i = 0; i < 2; ++i) {
    J.m[i][0] = dx0;
    J.m[i][1] = dx1;
    J.m[i][i] += 1.0 / inst.c_r[i] + 1.0 / inst.r[i];
  }
  return J;
}

// Projected Walrasian adjustment pi <- max(0, pi - tau * z(pi)), stopping as
// soon as the residual drops below tol.
inline TatonnementTrace tatonnement(const MarketInstance& inst, const RiskSet& rs,
                                    const PriceVector& start, double tau, int max_iter,
                                    double tol = 1e-6) {
  if (!(tau > 0.0)) throw std::invalid_argument("tatonnement: tau must be > 0");
  if (max_iter < 1) throw std::invalid_argument("tatonnement: max_iter must be >= 1");
  TatonnementTrace trace;
  PriceVector pi = start;
  for (int it = 0;; ++it) {
    const std::vector<double> z = excess_supply(inst, rs, pi);
    trace.iterates.push_back(pi);
    trace.residuals.push_back(z);
    double norm = 0.0;
    for (double v : z) norm = std::max(norm, std::abs(v));
    if (norm < tol) {
      trace.converged = true;
      break;
    }
    if (it >= max_iter) break;
    for (std::size_t w = 0; w < pi.size(); ++w)
      pi.pi[w] = std::max(0.0, pi.pi[w] - tau * z[w]);
  }
  trace.final = trace.iterates.back();
  return trace;
}

namespace detail {

inline bool solve2(const Jacobian2& J, const double b[2], double out[2]) {
  const double det = J.m[0][0] * J.m[1][1] - J.m[0][1] * J.m[1][0];
  double scale = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) scale = std::max(scale, std::abs(J.m[i][j]));
  if (std::abs(det) < 1e-14 * std::max(1.0, scale * scale)) return false;
  out[0] = (b[0] * J.m[1][1] - b[1] * J.m[0][1]) / det;
  out[1] = (J.m[0][0] * b[1] - J.m[1][0] * b[0]) / det;
  return true;
}

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

// Damped Newton on the piecewise-smooth excess supply using the Jacobian of
// whichever regime is active at the current iterate.
inline PriceVector newton_search(const MarketInstance& inst, const RiskSet& rs,
                                 const PriceVector& start, double tol = 1e-9,
                                 int max_iter = 100) {
  if (inst.scenarios() != 2)
    throw std::invalid_argument("newton_search: needs exactly two scenarios");
  PriceVector pi = start;
  for (int it = 0; it < max_iter; ++it) {
    std::vector<double> z = excess_supply(inst, rs, pi);
    if (std::max(std::abs(z[0]), std::abs(z[1])) < tol) return pi;
    const RegimeLabel regime = classify_regime(inst, rs, pi);
    const Jacobian2 J = regime_jacobian(inst, rs, pi, regime);
    const double rhs[2] = {-z[0], -z[1]};
    double d[2];
    if (!detail::solve2(J, rhs, d))
      throw SingularJacobianError("newton_search: singular Jacobian at (" +
                                  std::to_string(pi[0]) + ", " + std::to_string(pi[1]) + ")");
    const double base = detail::norm2(z);
    double alpha = 1.0;
    PriceVector next;
    for (;; alpha *= 0.5) {
      if (alpha < 1e-12)
        throw NonConvergenceError("newton_search: no descent step found");
      next.pi = {std::max(0.0, pi[0] + alpha * d[0]), std::max(0.0, pi[1] + alpha * d[1])};
      if (detail::norm2(excess_supply(inst, rs, next)) < base) break;
    }
    pi = next;
  }
  throw NonConvergenceError("newton_search: residual above tolerance after max_iter steps");
}

namespace detail {

// Equalizing measure of a record: the measure under which the recorded
// first-stage quantity is risk-neutrally optimal.  For the kink regime that is
// the p solving c*x_c = E_p[pi]; for the flat regimes it is the interval
// endpoint the regime selects.
inline ProbabilityVector record_measure(const MarketInstance& inst, const RiskSet& rs,
                                        const PriceVector& prices, RegimeLabel regime) {
  double q = 0.0;
  if (regime == RegimeLabel::B) {
    const double xc = critical_first_stage(inst, prices);
    q = (inst.c * xc - prices[1]) / (prices[0] - prices[1]);
    q = std::min(1.0, std::max(0.0, q));
  } else {
    const auto pr = expected_price_range(rs, prices);
    q = regime == RegimeLabel::A ? pr.q_min : pr.q_max;
  }
  return ProbabilityVector{{q, 1.0 - q}};
}

inline EquilibriumRecord make_record(const MarketInstance& inst, const RiskSet& rs,
                                     const PriceVector& prices, RegimeLabel regime) {
  EquilibriumRecord rec;
  rec.prices = prices;
  rec.regime = regime;
  const BestResponse br = producer_best_response(inst, rs, prices);
  rec.alloc.x = br.x;
  rec.alloc.x_r = br.x_r;
  rec.alloc.y = consumer_best_response(inst, prices);
  const TradedWelfares tw = traded_welfares(inst, rec.alloc, prices);
  rec.welfare_pair = {risk_evaluate(rs, tw.producer), risk_evaluate(rs, tw.consumer)};
  rec.equalizing_measure = record_measure(inst, rs, prices, regime);
  const std::vector<double> z = excess_supply(inst, rs, prices);
  for (double v : z) rec.residual = std::max(rec.residual, std::abs(v));
  return rec;
}

}  // namespace detail

struct AnalyticCensus {
  std::vector<EquilibriumRecord> equilibria;  // strictly positive prices, sorted by pi_0
  std::vector<EquilibriumRecord> boundary;    // candidates with some zero price
};

// Enumerate all two-scenario equilibria: one linear system per interval
// endpoint for the flat regimes, multistart Newton on the polynomial kink
// system for regime B.  A candidate survives only if the regime that
// generated it is the regime actually active at its prices.
inline AnalyticCensus analytic_equilibria(const MarketInstance& inst, const RiskSet& rs) {
  inst.validate();
  rs.validate();
  if (inst.scenarios() != 2 || rs.scenarios() != 2)
    throw std::invalid_argument("analytic_equilibria: needs exactly two scenarios");
  const auto iv = *rs.interval_view();
  AnalyticCensus census;
  std::vector<PriceVector> found;

  auto already_found = [&](const PriceVector& p) {
    for (const auto& q : found)
      if (std::abs(q[0] - p[0]) <= 1e-7 && std::abs(q[1] - p[1]) <= 1e-7) return true;
    return false;
  };

  auto consider = [&](double p0, double p1, RegimeLabel generator) {
    if (!std::isfinite(p0) || !std::isfinite(p1)) return;
    if (p0 < -1e-12 || p1 < -1e-12) return;
    PriceVector pi{{std::max(0.0, p0), std::max(0.0, p1)}};
    const bool on_boundary = pi[0] <= 1e-12 || pi[1] <= 1e-12;
    if (already_found(pi)) return;
    std::optional<RegimeLabel> active;
    try {
      active = classify_regime(inst, rs, pi);
    } catch (const SingularPriceError&) {
      return;
    }
    if (*active != generator) return;
    EquilibriumRecord rec = detail::make_record(inst, rs, pi, *active);
    if (on_boundary) {
      if (rec.residual <= 1e-8) {
        found.push_back(pi);
        census.boundary.push_back(std::move(rec));
      }
      return;
    }
    found.push_back(pi);
    census.equilibria.push_back(std::move(rec));
  };

  // Flat regimes: z_i = E_q[pi]/c + pi_i/c_r_i - (V_i - pi_i)/r_i = 0 is a
  // 2x2 linear system for each interval endpoint q.  Whether a root of the
  // q-system counts as regime A or C depends on the price ordering there.
  std::vector<double> endpoints{iv.lo};
  if (iv.hi != iv.lo) endpoints.push_back(iv.hi);
  for (double q : endpoints) {
    Jacobian2 M;
    M.m[0][0] = q / inst.c + 1.0 / inst.c_r[0] + 1.0 / inst.r[0];
    M.m[0][1] = (1.0 - q) / inst.c;
    M.m[1][0] = q / inst.c;
    M.m[1][1] = (1.0 - q) / inst.c + 1.0 / inst.c_r[1] + 1.0 / inst.r[1];
    const double b[2] = {inst.V[0] / inst.r[0], inst.V[1] / inst.r[1]};
    double root[2];
    if (!detail::solve2(M, b, root))
      throw SingularJacobianError("analytic_equilibria: degenerate flat-regime system");
    // The endpoint q is the minimizing measure of E_p[pi] at the root exactly
    // when it puts its weight extreme against the pricier scenario.
    const bool q_is_min = root[0] < root[1] ? q == std::max(iv.lo, iv.hi)
                                            : q == std::min(iv.lo, iv.hi);
    if (iv.lo == iv.hi) {
      consider(root[0], root[1], RegimeLabel::A);
      consider(root[0], root[1], RegimeLabel::C);
    } else {
      consider(root[0], root[1], q_is_min ? RegimeLabel::A : RegimeLabel::C);
    }
  }

  // Kink regime: clear x_c's denominator to get two polynomial equations and
  // run damped Newton from a coarse grid of seeds over the positive price box.
  {
    const double c0 = inst.c_r[0], c1 = inst.c_r[1];
    const double r0 = inst.r[0], r1 = inst.r[1];
    const double V0 = inst.V[0], V1 = inst.V[1];
    auto F = [&](double p0, double p1, double out[2]) {
      out[0] = p1 * p1 / (2.0 * c1) - (1.0 / c0 + 1.0 / r0) * p0 * p1 +
               (1.0 / r0 + 1.0 / (2.0 * c0)) * p0 * p0 + (p1 - p0) * V0 / r0;
      out[1] = (1.0 / r1 + 1.0 / (2.0 * c1)) * p1 * p1 - (1.0 / c1 + 1.0 / r1) * p0 * p1 +
               p0 * p0 / (2.0 * c0) - (p1 - p0) * V1 / r1;
    };
    auto JF = [&](double p0, double p1, Jacobian2& J) {
      J.m[0][0] = -(1.0 / c0 + 1.0 / r0) * p1 + (2.0 / r0 + 1.0 / c0) * p0 - V0 / r0;
      J.m[0][1] = p1 / c1 - (1.0 / c0 + 1.0 / r0) * p0 + V0 / r0;
      J.m[1][0] = -(1.0 / c1 + 1.0 / r1) * p1 + p0 / c0 + V1 / r1;
      J.m[1][1] = (2.0 / r1 + 1.0 / c1) * p1 - (1.0 / c1 + 1.0 / r1) * p0 - V1 / r1;
    };
    const double box = *std::max_element(inst.V.begin(), inst.V.end());
    const int grid = 11;
    std::vector<PriceVector> roots;
    for (int si = 0; si < grid; ++si) {
      for (int sj = 0; sj < grid; ++sj) {
        double p0 = box * si / (grid - 1.0), p1 = box * sj / (grid - 1.0);
        bool ok = false;
        for (int it = 0; it < 100; ++it) {
          double f[2];
          F(p0, p1, f);
          const double fn = std::abs(f[0]) + std::abs(f[1]);
          if (fn < 1e-12 * std::max(1.0, box * box)) {
            ok = true;
            break;
          }
          Jacobian2 J;
          JF(p0, p1, J);
          const double rhs[2] = {-f[0], -f[1]};
          double d[2];
          if (!detail::solve2(J, rhs, d)) break;
          double alpha = 1.0;
          while (alpha > 1e-10) {
            double g[2];
            F(p0 + alpha * d[0], p1 + alpha * d[1], g);
            if (std::abs(g[0]) + std::abs(g[1]) < fn) break;
            alpha *= 0.5;
          }
          if (alpha <= 1e-10) break;
          p0 += alpha * d[0];
          p1 += alpha * d[1];
          if (!std::isfinite(p0) || !std::isfinite(p1) || std::abs(p0) > 1e6 ||
              std::abs(p1) > 1e6)
            break;
        }
        if (!ok || std::abs(p0 - p1) < 1e-10) continue;
        bool dup = false;
        for (const auto& rt : roots)
          if (std::abs(rt[0] - p0) <= 1e-7 && std::abs(rt[1] - p1) <= 1e-7) dup = true;
        if (dup) continue;
        roots.push_back(PriceVector{{p0, p1}});
      }
    }
    for (const auto& rt : roots) consider(rt[0], rt[1], RegimeLabel::B);
  }

  auto by_price = [](const EquilibriumRecord& a, const EquilibriumRecord& b) {
    return a.prices[0] != b.prices[0] ? a.prices[0] < b.prices[0] : a.prices[1] < b.prices[1];
  };
  std::sort(census.equilibria.begin(), census.equilibria.end(), by_price);
  std::sort(census.boundary.begin(), census.boundary.end(), by_price);
  return census;
}

struct VerificationReport {
  bool pass = false;
  std::vector<double> excess;           // z per scenario at recomputed best responses
  std::vector<double> complementarity;  // pi * z per scenario
  double worst = 0.0;                   // largest violation of either condition
  double tol = 0.0;
};

namespace detail {

inline VerificationReport verify_against(const MarketInstance& inst, const RiskSet& rs,
                                         const PriceVector& prices, double tol) {
  VerificationReport rep;
  rep.tol = tol;
  rep.excess = excess_supply(inst, rs, prices);
  rep.complementarity.resize(rep.excess.size());
  rep.pass = true;
  for (std::size_t w = 0; w < rep.excess.size(); ++w) {
    rep.complementarity[w] = prices[w] * rep.excess[w];
    rep.worst = std::max(rep.worst, -rep.excess[w]);
    rep.worst = std::max(rep.worst, std::abs(rep.complementarity[w]));
    if (rep.excess[w] < -tol || std::abs(rep.complementarity[w]) > tol) rep.pass = false;
  }
  return rep;
}

}  // namespace detail

// Risk-averse mode: best responses under the risk set.
inline VerificationReport verify_equilibrium(const MarketInstance& inst, const RiskSet& rs,
                                             const PriceVector& prices, double tol = 1e-6) {
  return detail::verify_against(inst, rs, prices, tol);
}

// Risk-neutral mode: the producer responds to a single measure.
inline VerificationReport verify_equilibrium(const MarketInstance& inst,
                                             const ProbabilityVector& measure,
                                             const PriceVector& prices, double tol = 1e-6) {
  return detail::verify_against(inst, RiskSet{{measure}}, prices, tol);
}

// Build the risk-trading equilibrium from the risk-averse planner optimum:
// mu is the planner's worst-case measure, pi the supporting prices of the
// risk-neutral problem under mu, and the canonical security holdings hedge the
// producer's traded welfare flat (a = E_mu[w_p] - w_p, b = -a).
inline RaadRecord construct_raad(const MarketInstance& inst, const RiskSet& rs,
                                 double tol = 1e-6) {
  const PlannerSolution rasp = solve_rasp(inst, rs);
  const PlannerSolution rn = solve_rnsp(inst, rasp.worst_case);

  RaadRecord rec;
  rec.prices = rn.support_prices;
  rec.security_prices = rasp.worst_case;
  rec.alloc = rn.alloc;
  rec.dual_weights = rasp.dual_weights;
  rec.tol = tol;

  const TradedWelfares tw = traded_welfares(inst, rec.alloc, rec.prices);
  const double e_wp = expected_value(rec.security_prices, tw.producer);
  const std::size_t n = inst.scenarios();
  std::vector<double> a(n), b(n), hedged_consumer(n);
  for (std::size_t w = 0; w < n; ++w) {
    a[w] = e_wp - tw.producer[w];
    b[w] = -a[w];
    hedged_consumer[w] = tw.consumer[w] + b[w];
  }
  rec.theta = e_wp;  // min_k E_k[w_p + a]: the hedged producer vector is constant
  rec.phi = risk_evaluate(rs, hedged_consumer);

  // The canonical holdings are an equilibrium only if every first-order and
  // complementarity condition checks out at the recorded decisions.
  bool valid = true;
  double e_pi = 0.0;
  for (std::size_t w = 0; w < n; ++w) {
    e_pi += rec.security_prices[w] * rec.prices[w];
    const double zw = rec.alloc.x + rec.alloc.x_r[w] - rec.alloc.y[w];
    if (zw < -tol || rec.prices[w] * zw > tol) valid = false;
    if (rec.security_prices[w] > tol) {
      if (std::abs(rec.alloc.x_r[w] - rec.prices[w] / inst.c_r[w]) > tol) valid = false;
      if (std::abs(rec.prices[w] - (inst.V[w] - inst.r[w] * rec.alloc.y[w])) > tol)
        valid = false;
    }
  }
  if (std::abs(inst.c * rec.alloc.x - e_pi) > tol) valid = false;
  // Consumer optimality: mu must attain the worst case of the hedged position.
  if (std::abs(expected_value(rec.security_prices, hedged_consumer) - rec.phi) >
      tol * std::max(1.0, std::abs(rec.phi)))
    valid = false;
  if (valid) rec.positions = std::make_pair(std::move(a), std::move(b));
  return rec;
}

}  // namespace riskeq
