#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "riskeq/equilibrium.hpp"
#include "riskeq/stability.hpp"
#include "support.hpp"

using namespace riskeq;
using namespace testsupport;

namespace {
double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}
}  // namespace

TEST_CASE("excess supply") {
  const MarketInstance inst = paper_instance();
  const RiskSet rs = paper_risk();

  CHECK(max_abs(excess_supply(inst, rs, blue_reported())) < 1e-4);
  CHECK(max_abs(excess_supply(inst, rs, green_reported())) < 1e-4);

  SECTION("choke prices leave positive excess everywhere") {
    const std::vector<double> z = excess_supply(inst, rs, PriceVector{{inst.V[0], inst.V[1]}});
    CHECK(z[0] > 0.0);
    CHECK(z[1] > 0.0);
  }
}

TEST_CASE("fixed-regime excess supply") {
  const MarketInstance inst = paper_instance();
  const RiskSet rs = paper_risk();

  SECTION("matches the live map when the forced regime is the active one") {
    Rng rng(100);
    for (int trial = 0; trial < 200; ++trial) {
      const PriceVector pi = rng.prices(2, 8.0);
      RegimeLabel active;
      try {
        active = classify_regime(inst, rs, pi);
      } catch (const SingularPriceError&) {
        continue;
      }
      const std::vector<double> a = regime_excess(inst, rs, pi, active);
      const std::vector<double> b = excess_supply(inst, rs, pi);
      CHECK(a[0] == b[0]);
      CHECK(a[1] == b[1]);
    }
  }
  SECTION("kink rule vanishes at the kink equilibrium") {
    CHECK(max_abs(regime_excess(inst, rs, blue_reported(), RegimeLabel::B)) < 1e-4);
  }
  SECTION("wrong regime does not vanish at the low equilibrium") {
    CHECK(max_abs(regime_excess(inst, rs, green_reported(), RegimeLabel::A)) > 1e-3);
  }
  SECTION("kink rule is singular at equal prices") {
    CHECK_THROWS_AS(regime_excess(inst, rs, PriceVector{{2.0, 2.0}}, RegimeLabel::B),
                    SingularPriceError);
  }
}

TEST_CASE("tatonnement") {
  const MarketInstance inst = paper_instance();
  const RiskSet rs = paper_risk();

  SECTION("an equilibrium is a fixed point") {
    const TatonnementTrace trace = tatonnement(inst, rs, green_prices(), 0.1, 100);
    CHECK(trace.converged);
    CHECK(trace.iterates.size() == 1);
    CHECK(trace.final.pi == green_prices().pi);
  }
  SECTION("reference runs reach the stable equilibria") {
    const TatonnementTrace to_green =
        tatonnement(inst, rs, PriceVector{{1.25, 2.06}}, 0.1, 100);
    CHECK_THAT(to_green.final[0], Catch::Matchers::WithinAbs(1.2256, 1e-3));
    CHECK_THAT(to_green.final[1], Catch::Matchers::WithinAbs(2.0698, 1e-3));

    const TatonnementTrace to_red = tatonnement(inst, rs, PriceVector{{1.22, 2.18}}, 0.1, 100);
    CHECK_THAT(to_red.final[0], Catch::Matchers::WithinAbs(1.2478, 1e-3));
    CHECK_THAT(to_red.final[1], Catch::Matchers::WithinAbs(2.1564, 1e-3));
  }
  SECTION("trace bookkeeping") {
    const TatonnementTrace trace = tatonnement(inst, rs, PriceVector{{1.25, 2.06}}, 0.1, 25);
    CHECK(trace.iterates.size() == trace.residuals.size());
    CHECK(trace.iterates.size() <= 26);
    CHECK(trace.final.pi == trace.iterates.back().pi);
    if (trace.converged) CHECK(max_abs(trace.residuals.back()) < 1e-6);
  }
  SECTION("converged endpoints verify as equilibria") {
    const TatonnementTrace trace =
        tatonnement(inst, rs, PriceVector{{1.25, 2.06}}, 0.1, 5000, 1e-7);
    REQUIRE(trace.converged);
    CHECK(verify_equilibrium(inst, rs, trace.final, 1e-4).pass);
  }
  SECTION("parameter validation") {
    CHECK_THROWS_AS(tatonnement(inst, rs, green_prices(), 0.0, 10), std::invalid_argument);
    CHECK_THROWS_AS(tatonnement(inst, rs, green_prices(), 0.1, 0), std::invalid_argument);
  }
}

TEST_CASE("newton search") {
  const MarketInstance inst = paper_instance();
  const RiskSet rs = paper_risk();

  SECTION("a root is returned immediately") {
    const PriceVector out = newton_search(inst, rs, blue_prices(), 1e-9, 50);
    CHECK(out.pi == blue_prices().pi);
  }
  SECTION("converges to the kink equilibrium from inside its regime") {
    const PriceVector out = newton_search(inst, rs, PriceVector{{1.2375, 2.11}}, 1e-9, 100);
    CHECK_THAT(out[0], Catch::Matchers::WithinAbs(blue_prices()[0], 1e-6));
    CHECK_THAT(out[1], Catch::Matchers::WithinAbs(blue_prices()[1], 1e-6));
    CHECK(max_abs(excess_supply(inst, rs, out)) < 1e-6);
  }
  SECTION("too few steps raise the non-convergence error") {
    CHECK_THROWS_AS(newton_search(inst, rs, PriceVector{{3.0, 5.0}}, 1e-12, 1),
                    NonConvergenceError);
  }
  SECTION("lands on one of the three equilibria from a generic start") {
    const PriceVector out = newton_search(inst, rs, PriceVector{{1.20, 2.00}}, 1e-9, 100);
    const bool near_green = std::abs(out[0] - green_prices()[0]) < 1e-6 &&
                            std::abs(out[1] - green_prices()[1]) < 1e-6;
    const bool near_blue = std::abs(out[0] - blue_prices()[0]) < 1e-6 &&
                           std::abs(out[1] - blue_prices()[1]) < 1e-6;
    const bool near_red = std::abs(out[0] - red_prices()[0]) < 1e-6 &&
                          std::abs(out[1] - red_prices()[1]) < 1e-6;
    CHECK((near_green || near_blue || near_red));
  }
}

TEST_CASE("analytic equilibrium census") {
  const MarketInstance inst = paper_instance();
  const RiskSet rs = paper_risk();
  const AnalyticCensus census = analytic_equilibria(inst, rs);

  SECTION("exactly three equilibria with the expected prices and regimes") {
    REQUIRE(census.equilibria.size() == 3);
    const auto& g = census.equilibria[0];
    const auto& b = census.equilibria[1];
    const auto& r = census.equilibria[2];
    CHECK_THAT(g.prices[0], Catch::Matchers::WithinAbs(1.2256, 1e-3));
    CHECK_THAT(g.prices[1], Catch::Matchers::WithinAbs(2.0698, 1e-3));
    CHECK_THAT(b.prices[0], Catch::Matchers::WithinAbs(1.23578, 1e-3));
    CHECK_THAT(b.prices[1], Catch::Matchers::WithinAbs(2.10953, 1e-3));
    CHECK_THAT(r.prices[0], Catch::Matchers::WithinAbs(1.2478, 1e-3));
    CHECK_THAT(r.prices[1], Catch::Matchers::WithinAbs(2.1564, 1e-3));
    CHECK(g.regime == RegimeLabel::C);
    CHECK(b.regime == RegimeLabel::B);
    CHECK(r.regime == RegimeLabel::A);
    CHECK(census.boundary.empty());

    // tight check against the independently computed roots
    CHECK_THAT(g.prices[0], Catch::Matchers::WithinAbs(green_prices()[0], 1e-10));
    CHECK_THAT(b.prices[0], Catch::Matchers::WithinAbs(blue_prices()[0], 1e-9));
    CHECK_THAT(r.prices[0], Catch::Matchers::WithinAbs(red_prices()[0], 1e-10));
  }

  SECTION("welfare pairs match as unordered pairs") {
    REQUIRE(census.equilibria.size() == 3);
    const double expect[3][2] = {{2.152, 0.798}, {2.134, 0.821}, {2.113, 0.845}};
    for (int i = 0; i < 3; ++i) {
      const auto& eq = census.equilibria[i];
      const double lo = std::min(eq.welfare_pair.first, eq.welfare_pair.second);
      const double hi = std::max(eq.welfare_pair.first, eq.welfare_pair.second);
      CHECK_THAT(hi, Catch::Matchers::WithinAbs(expect[i][0], 2e-3));
      CHECK_THAT(lo, Catch::Matchers::WithinAbs(expect[i][1], 2e-3));
    }
  }

  SECTION("every record verifies and its measure rationalizes the first stage") {
    for (const auto& eq : census.equilibria) {
      CHECK(verify_equilibrium(inst, rs, eq.prices, 1e-6).pass);
      CHECK(eq.residual < 1e-9);
      // E_mu[pi] / c reproduces the recorded first stage
      const double e_pi = expected_value(eq.equalizing_measure, eq.prices.pi);
      CHECK_THAT(e_pi / inst.c, Catch::Matchers::WithinAbs(eq.alloc.x, 1e-9));
    }
    // the kink record's measure matches the independent computation
    CHECK_THAT(census.equilibria[1].equalizing_measure[0],
               Catch::Matchers::WithinAbs(kBlueEqualizingP, 1e-6));
  }

  SECTION("the kink point lies on the segment between the flat-regime points") {
    REQUIRE(census.equilibria.size() == 3);
    const auto& g = census.equilibria[0].prices;
    const auto& b = census.equilibria[1].prices;
    const auto& r = census.equilibria[2].prices;
    const double t0 = (b[0] - g[0]) / (r[0] - g[0]);
    const double t1 = (b[1] - g[1]) / (r[1] - g[1]);
    CHECK(std::abs(t0 - t1) < 1e-2);
    CHECK_THAT(t0, Catch::Matchers::WithinAbs(0.459, 1e-2));
  }

  SECTION("no equilibrium welfare-dominates another") {
    for (const auto& a : census.equilibria)
      for (const auto& b : census.equilibria) {
        if (&a == &b) continue;
        const bool producer_up = a.welfare_pair.first > b.welfare_pair.first;
        const bool consumer_up = a.welfare_pair.second > b.welfare_pair.second;
        CHECK(producer_up != consumer_up);
      }
  }

  SECTION("degenerate interval collapses to the risk-neutral equilibrium") {
    const ProbabilityVector q{{0.4, 0.6}};
    const RiskSet degenerate{{q, q}};
    const AnalyticCensus collapsed = analytic_equilibria(inst, degenerate);
    REQUIRE(collapsed.equilibria.size() == 1);
    const PlannerSolution sol = solve_rnsp(inst, q);
    CHECK_THAT(collapsed.equilibria[0].prices[0],
               Catch::Matchers::WithinAbs(sol.support_prices[0], 1e-9));
    CHECK_THAT(collapsed.equilibria[0].prices[1],
               Catch::Matchers::WithinAbs(sol.support_prices[1], 1e-9));
  }
}

TEST_CASE("equilibrium verification") {
  const MarketInstance inst = paper_instance();
  const RiskSet rs = paper_risk();

  CHECK(verify_equilibrium(inst, rs, blue_reported(), 1e-4).pass);

  SECTION("a shifted price vector fails") {
    PriceVector off = blue_reported();
    off.pi[0] += 0.01;
    CHECK_FALSE(verify_equilibrium(inst, rs, off, 1e-4).pass);
  }
  SECTION("report carries per-scenario residuals") {
    const VerificationReport rep = verify_equilibrium(inst, rs, blue_reported(), 1e-4);
    REQUIRE(rep.excess.size() == 2);
    REQUIRE(rep.complementarity.size() == 2);
    CHECK(rep.tol == 1e-4);
    CHECK(rep.worst < 1e-4);
  }
}

TEST_CASE("risk trading construction") {
  const MarketInstance inst = paper_instance();
  const RiskSet rs = paper_risk();

  SECTION("singleton risk set returns the risk-neutral prices") {
    const ProbabilityVector q{{0.6, 0.4}};
    const RaadRecord rec = construct_raad(inst, RiskSet{{q}});
    const PlannerSolution sol = solve_rnsp(inst, q);
    CHECK(rec.security_prices.p == q.p);
    for (std::size_t w = 0; w < 2; ++w)
      CHECK_THAT(rec.prices[w], Catch::Matchers::WithinAbs(sol.support_prices[w], 1e-9));
  }

  SECTION("reference instance") {
    const RaadRecord rec = construct_raad(inst, rs);
    CHECK(rec.security_prices[0] >= 0.25);
    CHECK(rec.security_prices[0] <= 0.75);
    CHECK_THAT(rec.security_prices[0], Catch::Matchers::WithinAbs(0.75, 1e-9));
    CHECK_THAT(rec.theta, Catch::Matchers::WithinAbs(0.84455973595661777, 1e-9));
    CHECK_THAT(rec.phi, Catch::Matchers::WithinAbs(2.1128048321253734, 1e-9));

    // the allocation solves the risk-neutral problem under mu
    const PlannerSolution rn = solve_rnsp(inst, rec.security_prices);
    CHECK_THAT(rec.alloc.x, Catch::Matchers::WithinAbs(rn.alloc.x, 1e-6));
    for (std::size_t w = 0; w < 2; ++w) {
      CHECK_THAT(rec.alloc.x_r[w], Catch::Matchers::WithinAbs(rn.alloc.x_r[w], 1e-6));
      CHECK_THAT(rec.alloc.y[w], Catch::Matchers::WithinAbs(rn.alloc.y[w], 1e-6));
    }
    CHECK(verify_equilibrium(inst, rec.security_prices, rec.prices, 1e-6).pass);

    // value split: theta + phi accounts for the expected social welfare
    const double total =
        expected_value(rec.security_prices, social_welfare(inst, rec.alloc));
    CHECK_THAT(rec.theta + rec.phi, Catch::Matchers::WithinAbs(total, 1e-6));

    REQUIRE(rec.positions.has_value());
    const auto& [a, b] = *rec.positions;
    for (std::size_t w = 0; w < 2; ++w) CHECK(a[w] + b[w] == 0.0);
    // the hedge makes the producer's traded welfare scenario independent
    const TradedWelfares tw = traded_welfares(inst, rec.alloc, rec.prices);
    CHECK_THAT(tw.producer[0] + a[0], Catch::Matchers::WithinAbs(tw.producer[1] + a[1], 1e-12));
  }

  SECTION("mechanical equilibrium checks on random instances") {
    Rng rng(112358);
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 3));
      const std::size_t K = static_cast<std::size_t>(rng.uniform_int(1, 4));
      const MarketInstance mi = rng.instance(n);
      const RiskSet sr = rng.risk_set(n, K, true);
      const RaadRecord rec = construct_raad(mi, sr);
      // mu in the convex hull of the extremes
      REQUIRE(rec.dual_weights.size() == K);
      for (std::size_t w = 0; w < n; ++w) {
        double mixed = 0.0;
        for (std::size_t k = 0; k < K; ++k) mixed += rec.dual_weights[k] * sr.extremes[k][w];
        CHECK_THAT(mixed, Catch::Matchers::WithinAbs(rec.security_prices[w], 1e-8));
      }
      const PlannerSolution rn = solve_rnsp(mi, rec.security_prices);
      CHECK_THAT(rec.alloc.x, Catch::Matchers::WithinAbs(rn.alloc.x, 1e-6));
      const double total =
          expected_value(rec.security_prices, social_welfare(mi, rec.alloc));
      CHECK_THAT(rec.theta + rec.phi, Catch::Matchers::WithinAbs(total, 1e-6));
      CHECK(rec.positions.has_value());
    }
  }
}
