#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskeq/market.hpp"
#include "riskeq/risk.hpp"

// Social planner problems.  The risk-neutral planner maximizes expected total
// welfare subject to per-scenario supply >= demand; the risk-averse planner
// maximizes the polyhedral risk measure of total welfare, solved here as a
// minimization of the risk-neutral value over mixtures of the risk set's
// extreme points.

namespace riskeq {

struct NonConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PlannerSolution {
  Allocation alloc;
  double value = 0.0;              // optimal objective (theta for the risk-averse planner)
  PriceVector support_prices;      // scenario multipliers scaled by 1/p
  ProbabilityVector worst_case;    // mu; the input measure in the risk-neutral case
  std::vector<double> dual_weights;  // lambda per extreme point (risk-averse only)
  bool duals_nonunique = false;    // set when more than two extremes tie at the optimum
  std::vector<double> incumbent_history;  // best lower bound per master iteration
};

struct PlannerNonConvergence : NonConvergenceError {
  PlannerNonConvergence(const std::string& msg, PlannerSolution best)
      : NonConvergenceError(msg), incumbent(std::move(best)) {}
  PlannerSolution incumbent;
};

// Maximize E_p[W_sp] s.t. x + x_r(w) >= y(w), all variables >= 0.
//
// At an interior optimum every charged scenario is tight and the first-order
// conditions give pi = V - r*y = c_r*x_r and c*x = E_p[pi], which collapses to
// one linear equation in x.  Scenarios whose recourse would go negative are
// dropped to a slack state (x_r = 0, pi = 0, y = V/r); violations are resolved
// one at a time, most negative first.
inline PlannerSolution solve_rnsp(const MarketInstance& inst, const ProbabilityVector& p) {
  inst.validate();
  p.validate();
  const std::size_t n = inst.scenarios();
  detail::check_same_size(p.size(), n, "solve_rnsp");

  enum class State { Interior, Slack, Unweighted };
  std::vector<State> state(n, State::Interior);
  for (std::size_t w = 0; w < n; ++w)
    if (p[w] == 0.0) state[w] = State::Unweighted;

  double x = 0.0;
  std::vector<double> x_r(n, 0.0);
  const int max_passes = static_cast<int>(4 * n + 16);
  int pass = 0;
  for (;; ++pass) {
    if (pass > max_passes)
      throw std::logic_error("solve_rnsp: active-set loop failed to settle");
    double num = 0.0, den = inst.c;
    for (std::size_t w = 0; w < n; ++w) {
      if (state[w] != State::Interior) continue;
      const double share = inst.c_r[w] / (inst.c_r[w] + inst.r[w]);
      num += p[w] * share * inst.V[w];
      den += p[w] * share * inst.r[w];
    }
    x = num / den;
    for (std::size_t w = 0; w < n; ++w)
      x_r[w] = state[w] == State::Interior
                   ? (inst.V[w] - inst.r[w] * x) / (inst.c_r[w] + inst.r[w])
                   : 0.0;

    // Worst violation: negative recourse in an interior scenario, or demand
    // exceeding supply in a slack one.
    double worst = -1e-12;
    std::size_t worst_w = n;
    for (std::size_t w = 0; w < n; ++w) {
      if (state[w] == State::Interior && x_r[w] < worst) {
        worst = x_r[w];
        worst_w = w;
      } else if (state[w] == State::Slack) {
        const double excess = x - inst.V[w] / inst.r[w];
        if (excess < worst) {
          worst = excess;
          worst_w = w;
        }
      }
    }
    if (worst_w == n) break;
    state[worst_w] = state[worst_w] == State::Interior ? State::Slack : State::Interior;
  }

  PlannerSolution sol;
  sol.alloc.x = x;
  sol.alloc.x_r.assign(n, 0.0);
  sol.alloc.y.assign(n, 0.0);
  sol.support_prices.pi.assign(n, 0.0);
  for (std::size_t w = 0; w < n; ++w) {
    switch (state[w]) {
      case State::Interior:
        sol.alloc.x_r[w] = std::max(0.0, x_r[w]);
        sol.alloc.y[w] = x + sol.alloc.x_r[w];
        sol.support_prices.pi[w] = inst.c_r[w] * sol.alloc.x_r[w];
        break;
      case State::Slack:
        sol.alloc.y[w] = inst.V[w] / inst.r[w];
        break;
      case State::Unweighted:
        sol.alloc.y[w] = x;
        sol.support_prices.pi[w] = std::max(0.0, inst.V[w] - inst.r[w] * x);
        break;
    }
  }
  sol.value = expected_value(p, social_welfare(inst, sol.alloc));
  sol.worst_case = p;
  return sol;
}

struct RaspOptions {
  double gap_tol = 1e-8;           // duality gap at the incumbent
  double stationarity_tol = 1e-10; // minimal mixture movement
  int max_iter = 10000;
};

namespace detail {

inline ProbabilityVector mix_extremes(const RiskSet& rs, const std::vector<double>& lambda) {
  ProbabilityVector mu;
  mu.p.assign(rs.scenarios(), 0.0);
  for (std::size_t k = 0; k < rs.size(); ++k)
    for (std::size_t w = 0; w < rs.scenarios(); ++w) mu.p[w] += lambda[k] * rs.extremes[k][w];
  return mu;
}

// Least-squares solve of the small system sum_k lambda_k [Q_k; 1] = [mu; 1]
// restricted to the given support.  Returns false if the residual exceeds tol
// or any weight is meaningfully negative.
inline bool representation_on_support(const RiskSet& rs, const ProbabilityVector& mu,
                                      const std::vector<std::size_t>& support,
                                      std::vector<double>& lambda_out, double tol = 1e-10) {
  const std::size_t m = support.size();
  const std::size_t rows = rs.scenarios() + 1;
  // normal equations G w = h with G = A^T A
  std::vector<std::vector<double>> G(m, std::vector<double>(m, 0.0));
  std::vector<double> h(m, 0.0);
  auto col = [&](std::size_t j, std::size_t i) {
    return i < rs.scenarios() ? rs.extremes[support[j]][i] : 1.0;
  };
  auto rhs = [&](std::size_t i) { return i < rs.scenarios() ? mu[i] : 1.0; };
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b)
      for (std::size_t i = 0; i < rows; ++i) G[a][b] += col(a, i) * col(b, i);
    for (std::size_t i = 0; i < rows; ++i) h[a] += col(a, i) * rhs(i);
  }
  // Gaussian elimination with partial pivoting; m is tiny.
  std::vector<double> w(m, 0.0);
  for (std::size_t cidx = 0; cidx < m; ++cidx) {
    std::size_t piv = cidx;
    for (std::size_t rr = cidx + 1; rr < m; ++rr)
      if (std::abs(G[rr][cidx]) > std::abs(G[piv][cidx])) piv = rr;
    if (std::abs(G[piv][cidx]) < 1e-14) return false;
    std::swap(G[piv], G[cidx]);
    std::swap(h[piv], h[cidx]);
    for (std::size_t rr = cidx + 1; rr < m; ++rr) {
      const double f = G[rr][cidx] / G[cidx][cidx];
      for (std::size_t cc = cidx; cc < m; ++cc) G[rr][cc] -= f * G[cidx][cc];
      h[rr] -= f * h[cidx];
    }
  }
  for (std::size_t cidx = m; cidx-- > 0;) {
    double s = h[cidx];
    for (std::size_t cc = cidx + 1; cc < m; ++cc) s -= G[cidx][cc] * w[cc];
    w[cidx] = s / G[cidx][cidx];
  }
  for (double v : w)
    if (v < -1e-9) return false;
  double resid = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double s = -rhs(i);
    for (std::size_t j = 0; j < m; ++j) s += col(j, i) * w[j];
    resid = std::max(resid, std::abs(s));
  }
  if (resid > tol) return false;
  lambda_out.assign(rs.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) total += std::max(0.0, w[j]);
  for (std::size_t j = 0; j < m; ++j) lambda_out[support[j]] = std::max(0.0, w[j]) / total;
  return true;
}

// Smallest support representing mu on the active extremes, supports tried in
// lexicographic order within each size.
inline bool sparsify_duals(const RiskSet& rs, const ProbabilityVector& mu,
                           const std::vector<std::size_t>& active,
                           std::vector<double>& lambda) {
  std::vector<std::size_t> subset;
  for (std::size_t m = 1; m <= active.size(); ++m) {
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i;
    while (true) {
      subset.clear();
      for (std::size_t i : idx) subset.push_back(active[i]);
      if (representation_on_support(rs, mu, subset, lambda)) return true;
      std::size_t i = m;
      while (i-- > 0) {
        if (idx[i] + (m - i) < active.size()) {
          ++idx[i];
          for (std::size_t j = i + 1; j < m; ++j) idx[j] = idx[j - 1] + 1;
          break;
        }
        if (i == 0) goto next_size;
      }
    }
  next_size:;
    }
  return false;
}

}  // namespace detail

// Maximize min_k E_{Q_k}[W_sp] over feasible allocations.
//
// The value function mu -> RNSP value is convex on the simplex of mixtures, so
// the search runs over mixture weights: exact 1-D bisection on the directional
// derivative for two extremes, Frank-Wolfe steps with exact line search toward
// the minimizing extreme otherwise.  Stops when the duality gap at the
// incumbent falls below gap_tol or the mixture stops moving.
inline PlannerSolution solve_rasp(const MarketInstance& inst, const RiskSet& rs,
                                  const RaspOptions& opt = {}) {
  inst.validate();
  rs.validate();
  detail::check_same_size(rs.scenarios(), inst.scenarios(), "solve_rasp");
  const std::size_t K = rs.size();

  if (K == 1) {
    PlannerSolution sol = solve_rnsp(inst, rs.extremes.front());
    sol.dual_weights = {1.0};
    sol.incumbent_history = {sol.value};
    return sol;
  }

  std::vector<double> lambda(K, 1.0 / static_cast<double>(K));
  std::vector<double> history;
  double best_value = -std::numeric_limits<double>::infinity();
  PlannerSolution best;
  int evals = 0;

  // One RNSP solve; returns per-extreme expectations and tracks the incumbent.
  auto evaluate = [&](const std::vector<double>& lam, PlannerSolution& sol,
                      std::vector<double>& ek) {
    sol = solve_rnsp(inst, detail::mix_extremes(rs, lam));
    const std::vector<double> w = social_welfare(inst, sol.alloc);
    ek.resize(K);
    for (std::size_t k = 0; k < K; ++k) ek[k] = expected_value(rs.extremes[k], w);
    const double lower = *std::min_element(ek.begin(), ek.end());
    if (lower > best_value) {
      best_value = lower;
      best = sol;
      best.value = lower;  // the certified objective, not the mixture's value
      best.dual_weights = lam;
    }
    history.push_back(best_value);
    ++evals;
  };

  PlannerSolution sol;
  std::vector<double> ek;
  if (K == 2) {
    // lambda = (1-t, t); the derivative of the value along t is
    // E_{Q_1}[W_sp] - E_{Q_0}[W_sp] at the current optimum, nondecreasing in t.
    auto lam_of = [](double t) { return std::vector<double>{1.0 - t, t}; };
    auto deriv = [&](double t) {
      evaluate(lam_of(t), sol, ek);
      return ek[1] - ek[0];
    };
    double t = 0.0;
    const double d0 = deriv(0.0);
    if (d0 < 0.0) {
      const double d1 = deriv(1.0);
      if (d1 <= 0.0) {
        t = 1.0;
      } else {
        double lo = 0.0, hi = 1.0;
        for (int b = 0; hi - lo > opt.stationarity_tol && b < 200; ++b) {
          if (evals > opt.max_iter)
            throw PlannerNonConvergence("solve_rasp: bisection iteration limit", best);
          const double mid = 0.5 * (lo + hi);
          if (deriv(mid) < 0.0)
            lo = mid;
          else
            hi = mid;
        }
        t = 0.5 * (lo + hi);
      }
    }
    lambda = lam_of(t);
    evaluate(lambda, sol, ek);
  } else {
    // Coordinate search over vertex pairs: move mass t from extreme k to
    // extreme j, minimizing exactly along each segment.  The directional
    // derivative E_j[W_sp] - E_k[W_sp] is nondecreasing in t by convexity.
    for (int pass = 0;; ++pass) {
      if (pass >= opt.max_iter || evals > 100 * opt.max_iter)
        throw PlannerNonConvergence("solve_rasp: master iteration limit", best);
      evaluate(lambda, sol, ek);
      const double vmin = *std::min_element(ek.begin(), ek.end());
      double e_mix = 0.0;
      for (std::size_t k = 0; k < K; ++k) e_mix += lambda[k] * ek[k];
      if (e_mix - vmin <= opt.gap_tol * std::max(1.0, std::abs(vmin))) break;

      bool moved = false;
      for (std::size_t from = 0; from < K; ++from) {
        for (std::size_t to = 0; to < K; ++to) {
          if (to == from || lambda[from] <= 0.0) continue;
          PlannerSolution tmp;
          std::vector<double> ek_t;
          auto lam_at = [&](double t) {
            std::vector<double> l = lambda;
            l[from] -= t;
            l[to] += t;
            return l;
          };
          auto deriv_at = [&](double t) {
            evaluate(lam_at(t), tmp, ek_t);
            return ek_t[to] - ek_t[from];
          };
          if (ek[to] - ek[from] >= 0.0) continue;  // no descent this way
          const double t_max = lambda[from];
          double t = t_max;
          if (deriv_at(t_max) > 0.0) {
            double lo = 0.0, hi = t_max;
            for (int b = 0; hi - lo > opt.stationarity_tol && b < 200; ++b) {
              const double mid = 0.5 * (lo + hi);
              if (deriv_at(mid) < 0.0)
                lo = mid;
              else
                hi = mid;
            }
            t = 0.5 * (lo + hi);
          }
          if (t > opt.stationarity_tol) {
            lambda = lam_at(t);
            evaluate(lambda, sol, ek);
            moved = true;
          }
        }
      }
      if (!moved) break;  // stationary mixture
    }
    evaluate(lambda, sol, ek);
  }

  // Final polish: tie out the dual weights on the active extremes preferring
  // the smallest support, then report theta from the risk measure itself.
  const double vmin = *std::min_element(ek.begin(), ek.end());
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < K; ++k)
    if (ek[k] <= vmin + 1e-9 * std::max(1.0, std::abs(vmin))) active.push_back(k);

  std::vector<double> sparse;
  if (detail::sparsify_duals(rs, sol.worst_case, active, sparse)) lambda = sparse;
  PlannerSolution out = solve_rnsp(inst, detail::mix_extremes(rs, lambda));
  out.value = risk_evaluate(rs, social_welfare(inst, out.alloc));
  out.dual_weights = lambda;
  out.duals_nonunique = active.size() > 2;
  out.incumbent_history = std::move(history);
  return out;
}

}  // namespace riskeq
