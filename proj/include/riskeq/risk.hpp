#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "riskeq/market.hpp"

// Polyhedral coherent risk measures in dual form: the risk set is the convex
// hull of finitely many probability vectors Q_1..Q_K and the measure of a
// welfare vector z is min_k E_{Q_k}[z].

namespace riskeq {

struct RiskSet {
  std::vector<ProbabilityVector> extremes;  // Q_1..Q_K, K >= 1

  std::size_t size() const { return extremes.size(); }
  std::size_t scenarios() const { return extremes.empty() ? 0 : extremes.front().size(); }

  void validate(double tol = 1e-12) const {
    if (extremes.empty()) throw std::invalid_argument("RiskSet: no extreme points");
    const std::size_t n = extremes.front().size();
    for (const auto& q : extremes) {
      if (q.size() != n) throw std::invalid_argument("RiskSet: extremes differ in length");
      q.validate(tol);
    }
  }

  // For two scenarios the risk set is the interval of values of Q[0]:
  // [min_k Q_k[0], max_k Q_k[0]].  Empty for any other scenario count.
  struct Interval {
    double lo = 0.0;
    double hi = 0.0;
  };
  std::optional<Interval> interval_view() const {
    if (scenarios() != 2) return std::nullopt;
    Interval iv{extremes.front()[0], extremes.front()[0]};
    for (const auto& q : extremes) {
      iv.lo = std::min(iv.lo, q[0]);
      iv.hi = std::max(iv.hi, q[0]);
    }
    return iv;
  }
};

inline double expected_value(const ProbabilityVector& p, const std::vector<double>& z) {
  detail::check_same_size(p.size(), z.size(), "expected_value");
  double s = 0.0;
  for (std::size_t w = 0; w < z.size(); ++w) s += p[w] * z[w];
  return s;
}

// min_k E_{Q_k}[z].
inline double risk_evaluate(const RiskSet& rs, const std::vector<double>& z) {
  if (rs.extremes.empty()) throw std::invalid_argument("risk_evaluate: empty risk set");
  double best = expected_value(rs.extremes.front(), z);
  for (std::size_t k = 1; k < rs.size(); ++k)
    best = std::min(best, expected_value(rs.extremes[k], z));
  return best;
}

struct WorstCase {
  double value = 0.0;                 // min_k E_{Q_k}[z]
  std::vector<std::size_t> active;    // all k attaining the minimum within tolerance
  ProbabilityVector canonical_mixture;  // uniform average of active extremes
};

// Ties are detected with a relative tolerance on the minimal value; tie sets
// are what distinguish the producer's intermediate price regime, so the
// tolerance is a parameter rather than an epsilon buried in a comparison.
inline WorstCase worst_case_measures(const RiskSet& rs, const std::vector<double>& z,
                                     double tie_tol = 1e-9) {
  WorstCase out;
  std::vector<double> vals(rs.size());
  for (std::size_t k = 0; k < rs.size(); ++k) vals[k] = expected_value(rs.extremes[k], z);
  out.value = *std::min_element(vals.begin(), vals.end());
  const double tol = tie_tol * std::max(1.0, std::abs(out.value));
  for (std::size_t k = 0; k < rs.size(); ++k)
    if (vals[k] <= out.value + tol) out.active.push_back(k);

  out.canonical_mixture.p.assign(rs.scenarios(), 0.0);
  for (std::size_t k : out.active)
    for (std::size_t w = 0; w < rs.scenarios(); ++w)
      out.canonical_mixture.p[w] += rs.extremes[k][w] / static_cast<double>(out.active.size());
  return out;
}

}  // namespace riskeq
