#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <stdexcept>

#include "riskeq/equilibrium.hpp"

// Local stability of equilibria under the price dynamics, decided by the sign
// of the eigenvalue real parts of the excess-supply Jacobian.  The dynamics
// convention matches price adjustment along excess demand (-z), so an
// equilibrium is stable exactly when both real parts are strictly positive.

namespace riskeq {

struct BoundaryPointError : std::domain_error {
  using std::domain_error::domain_error;
};

struct JacobianResult {
  Jacobian2 analytic;
  Jacobian2 finite_diff;          // central differences, step 1e-6
  double max_rel_discrepancy = 0.0;
  RegimeLabel regime = RegimeLabel::A;
};

// Jacobian of regime_excess for the active regime (or a forced one).  Unless a
// regime is forced, prices sitting on a regime boundary within 1e-9 are
// rejected: the one-sided derivatives disagree there.
inline JacobianResult jacobian(const MarketInstance& inst, const RiskSet& rs,
                               const PriceVector& prices,
                               std::optional<RegimeLabel> forced = std::nullopt) {
  if (inst.scenarios() != 2)
    throw std::invalid_argument("jacobian: needs exactly two scenarios");
  JacobianResult out;
  if (forced) {
    out.regime = *forced;
  } else {
    const double xc = critical_first_stage(inst, prices);  // throws on equal prices
    const auto pr = detail::expected_price_range(rs, prices);
    const double guard = 1e-9 * std::max(1.0, std::abs(xc));
    if (std::abs(xc - pr.e_min / inst.c) <= guard || std::abs(xc - pr.e_max / inst.c) <= guard)
      throw BoundaryPointError("jacobian: prices lie on a regime boundary");
    out.regime = classify_regime(inst, rs, prices);
  }
  out.analytic = regime_jacobian(inst, rs, prices, out.regime);

  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    PriceVector up = prices, dn = prices;
    up.pi[j] += h;
    dn.pi[j] -= h;
    const auto zu = regime_excess(inst, rs, up, out.regime);
    const auto zd = regime_excess(inst, rs, dn, out.regime);
    for (int i = 0; i < 2; ++i) out.finite_diff.m[i][j] = (zu[i] - zd[i]) / (2.0 * h);
  }
  double scale = 0.0, diff = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      scale = std::max(scale, std::abs(out.analytic.m[i][j]));
      diff = std::max(diff, std::abs(out.analytic.m[i][j] - out.finite_diff.m[i][j]));
    }
  out.max_rel_discrepancy = diff / std::max(scale, 1e-300);
  return out;
}

// Roots of lambda^2 - tr*lambda + det, by the numerically stable quadratic
// formula; ordered by descending real part, then descending imaginary part.
inline std::array<std::complex<double>, 2> eig2(const Jacobian2& m) {
  const double tr = m.m[0][0] + m.m[1][1];
  const double det = m.m[0][0] * m.m[1][1] - m.m[0][1] * m.m[1][0];
  const double disc = tr * tr - 4.0 * det;
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    double l1;
    if (tr >= 0.0)
      l1 = 0.5 * (tr + root);
    else
      l1 = 0.5 * (tr - root);
    const double l2 = l1 != 0.0 ? det / l1 : 0.5 * (tr - (tr >= 0.0 ? root : -root));
    const double hi = std::max(l1, l2), lo = std::min(l1, l2);
    return {std::complex<double>(hi, 0.0), std::complex<double>(lo, 0.0)};
  }
  const double im = 0.5 * std::sqrt(-disc);
  return {std::complex<double>(0.5 * tr, im), std::complex<double>(0.5 * tr, -im)};
}

// Stable iff both eigenvalue real parts exceed the guard band, unstable iff
// any falls below it, marginal in between or on a regime boundary.
inline StabilityClass classify_stability(const MarketInstance& inst, const RiskSet& rs,
                                         const EquilibriumRecord& eq,
                                         double zero_tol = 1e-9) {
  JacobianResult jr;
  try {
    jr = jacobian(inst, rs, eq.prices);
  } catch (const BoundaryPointError&) {
    return StabilityClass::Marginal;
  }
  const auto ev = eig2(jr.analytic);
  const double re0 = ev[0].real(), re1 = ev[1].real();
  if (re0 > zero_tol && re1 > zero_tol) return StabilityClass::Stable;
  if (re0 < -zero_tol || re1 < -zero_tol) return StabilityClass::Unstable;
  return StabilityClass::Marginal;
}

}  // namespace riskeq
