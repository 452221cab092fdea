#pragma once

// Backward solvers for Y_t = xi - int Z dM + int g(s, Y_s) dA_s on the
// lattice: implicit node equations (closed form for the two penalty
// generators, damped Picard otherwise), the global Picard map, and the
// exponential closed form of the linear equation.

#include <cmath>
#include <string>
#include <vector>

#include "gbsde/lattice.hpp"
#include "gbsde/process.hpp"

namespace gbsde {

struct GbsdeSolution {
  AdaptedProcess y;
  AdaptedProcess z;  // defined for steps 0..N-1; terminal slice unused
  double residual = 0.0;
};

// Unique solution of y = c + n*dA*(eta - y)^+ .
inline double node_solve_penalty_up(double c, double eta, double n, double dA) {
  if (c >= eta) return c;
  return (c + n * dA * eta) / (1.0 + n * dA);
}

// Unique solution of y = c - n*dA*(y - eta)^+ .
inline double node_solve_penalty_down(double c, double eta, double n, double dA) {
  if (c <= eta) return c;
  return (c + n * dA * eta) / (1.0 + n * dA);
}

namespace detail {

constexpr int kNodeIterationCap = 10000;

// Solves y = c + g(step, index, y) * dA. The caller guarantees either an
// exact penalty form or L * dA < 1.
inline double implicit_node_solve(const Generator& gen, int step, int index, double c, double dA,
                                  double tol) {
  if (dA == 0.0) return c;
  switch (gen.form()) {
    case GenForm::PenaltyUp:
      return node_solve_penalty_up(c, gen.barrier().at(step, index), gen.penalty_level(), dA);
    case GenForm::PenaltyDown:
      return node_solve_penalty_down(c, gen.barrier().at(step, index), gen.penalty_level(), dA);
    case GenForm::Generic:
      break;
  }
  double y = c;
  for (int it = 0; it < kNodeIterationCap; ++it) {
    const double next = c + gen(step, index, y) * dA;
    const double move = std::abs(next - y);
    y = next;
    if (move <= tol) return y;
  }
  throw NonConvergenceError("node fixed point did not reach tolerance at " + node_str(step, index),
                            gen.lipschitz() * dA);
}

inline void check_contraction_gate(const LatticeModel& model, const Driver& driver,
                                   const Generator& gen) {
  if (gen.form() != GenForm::Generic) return;  // closed-form node solves
  const double l = gen.lipschitz();
  if (l * driver.max_delta() < 1.0) return;
  for (int k = 0; k < model.depth(); ++k)
    for (int i = 0; i < model.node_count(k); ++i)
      if (l * driver.delta(k, i) >= 1.0)
        throw SchemeInfeasibleError("implicit scheme infeasible: L*dA = " +
                                        std::to_string(l * driver.delta(k, i)) + " >= 1 at node " +
                                        node_str(k, i),
                                    k, i, l * driver.delta(k, i));
}

inline void check_solver_inputs(const LatticeModel& model, const MartingaleM& m,
                                const Driver& driver, const std::vector<double>& xi) {
  check_shape(model, m.values, "martingale");
  check_shape(model, driver.a(), "driver");
  if (static_cast<int>(xi.size()) != model.node_count(model.depth()))
    throw ValidationError("terminal data size does not match the terminal step");
}

// Max defect of Y_k = Y_{k+1} - Z_k dM + g(k, Y_k) dA + dK_k over both
// branches of every node.
inline double path_identity_residual(const LatticeModel& model, const MartingaleM& m,
                                     const Driver& driver, const Generator& gen,
                                     const AdaptedProcess& y, const AdaptedProcess& z,
                                     const AdaptedProcess* k_inc) {
  double worst = 0.0;
  for (int k = 0; k < model.depth(); ++k) {
    for (int i = 0; i < model.node_count(k); ++i) {
      const double g_term = gen(k, i, y.at(k, i)) * driver.delta(k, i);
      const double dk = k_inc ? k_inc->at(k, i) : 0.0;
      for (bool up : {false, true}) {
        const double ynext = y.at(k + 1, model.child_index(k, i, up));
        const double dm = up ? m.inc_up[k][i] : m.inc_down[k][i];
        const double defect = y.at(k, i) - (ynext - z.at(k, i) * dm + g_term + dk);
        worst = std::max(worst, std::abs(defect));
      }
    }
  }
  return worst;
}

}  // namespace detail

// Implicit backward induction: at each node Y solves y = E[Y_next | node] +
// g(k, node, y) dA_k, then Z is read off the two branches.
inline GbsdeSolution solve_backward(const LatticeModel& model, const MartingaleM& m,
                                    const Driver& driver, const Generator& gen,
                                    const std::vector<double>& xi, double tol = 1e-12) {
  if (tol <= 0.0) throw ValidationError("solver tolerance must be positive");
  detail::check_solver_inputs(model, m, driver, xi);
  detail::check_contraction_gate(model, driver, gen);

  GbsdeSolution sol;
  sol.y = AdaptedProcess(model);
  sol.z = AdaptedProcess(model);
  sol.y.slice(model.depth()) = xi;
  for (int k = model.depth() - 1; k >= 0; --k) {
    const std::vector<double> c = conditional_expectation(model, sol.y.slice(k + 1), k);
    const std::vector<double> z = representation_coefficient(model, m, sol.y.slice(k + 1), k);
    for (int i = 0; i < model.node_count(k); ++i) {
      sol.y.at(k, i) = detail::implicit_node_solve(gen, k, i, c[i], driver.delta(k, i), tol);
      sol.z.at(k, i) = z[i];
    }
  }
  sol.residual = detail::path_identity_residual(model, m, driver, gen, sol.y, sol.z, nullptr);
  return sol;
}

struct PicardTrace {
  int iterations = 0;
  std::vector<double> ratios;  // successive weighted-difference ratios
};

// Global Picard map Phi(w)_k = E[xi + sum_{j>=k} g(j, w_j) dA_j | F_k],
// iterated to a fixed point in the beta-weighted sup norm.
inline GbsdeSolution solve_picard_global(const LatticeModel& model, const MartingaleM& m,
                                         const Driver& driver, const Generator& gen,
                                         const std::vector<double>& xi, double beta,
                                         int max_iter = 200, double tol = 1e-12,
                                         PicardTrace* trace = nullptr) {
  if (tol <= 0.0) throw ValidationError("solver tolerance must be positive");
  if (max_iter < 1) throw ValidationError("max_iter must be >= 1");
  detail::check_solver_inputs(model, m, driver, xi);

  const AdaptedProcess half_weight = exp_weight(driver, beta / 2.0);
  auto weighted_gap = [&](const AdaptedProcess& a, const AdaptedProcess& b) {
    double g = 0.0;
    for (int k = 0; k <= model.depth(); ++k)
      for (int i = 0; i < model.node_count(k); ++i)
        g = std::max(g, half_weight.at(k, i) * std::abs(a.at(k, i) - b.at(k, i)));
    return g;
  };

  auto apply_phi = [&](const AdaptedProcess& w) {
    AdaptedProcess out(model);
    out.slice(model.depth()) = xi;
    for (int k = model.depth() - 1; k >= 0; --k) {
      const std::vector<double> c = conditional_expectation(model, out.slice(k + 1), k);
      for (int i = 0; i < model.node_count(k); ++i)
        out.at(k, i) = c[i] + gen(k, i, w.at(k, i)) * driver.delta(k, i);
    }
    return out;
  };

  AdaptedProcess w(model);
  w.slice(model.depth()) = xi;
  double prev_gap = -1.0;
  double last_ratio = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    AdaptedProcess next = apply_phi(w);
    const double gap = weighted_gap(next, w);
    if (trace) {
      trace->iterations = it;
      if (prev_gap > 0.0) trace->ratios.push_back(gap / prev_gap);
    }
    if (prev_gap > 0.0) last_ratio = gap / prev_gap;
    w = std::move(next);
    if (gap < tol) {
      GbsdeSolution sol;
      sol.y = std::move(w);
      sol.z = AdaptedProcess(model);
      for (int k = 0; k < model.depth(); ++k)
        sol.z.slice(k) = representation_coefficient(model, m, sol.y.slice(k + 1), k);
      sol.residual = detail::path_identity_residual(model, m, driver, gen, sol.y, sol.z, nullptr);
      return sol;
    }
    prev_gap = gap;
  }
  throw NonConvergenceError("global Picard iteration exceeded max_iter = " + std::to_string(max_iter) +
                                " (last contraction ratio " + std::to_string(last_ratio) + ")",
                            last_ratio);
}

// Default weight: strictly above the 2L + 1/alpha contraction threshold at
// alpha = 1.
inline GbsdeSolution solve_picard_global(const LatticeModel& model, const MartingaleM& m,
                                         const Driver& driver, const Generator& gen,
                                         const std::vector<double>& xi) {
  return solve_picard_global(model, m, driver, gen, xi, 2.0 * gen.lipschitz() + 2.0);
}

// Exponential closed form of the linear generator n (eta - y):
//   Ybar_k = eta_k (1 - exp(-n dA_k)) + exp(-n dA_k) E[Ybar_{k+1} | node],
// the backward form of the path expectation of xi exp(n(A_k - A_N)) plus the
// exp_integral_weights average of eta.
inline AdaptedProcess solve_linear_closed_form(const LatticeModel& model, const Driver& driver,
                                               double n, const AdaptedProcess& eta,
                                               const std::vector<double>& xi) {
  if (n < 0.0) throw ValidationError("penalty level must be >= 0");
  check_shape(model, eta, "eta");
  if (static_cast<int>(xi.size()) != model.node_count(model.depth()))
    throw ValidationError("terminal data size does not match the terminal step");
  AdaptedProcess y(model);
  y.slice(model.depth()) = xi;
  for (int k = model.depth() - 1; k >= 0; --k) {
    const std::vector<double> c = conditional_expectation(model, y.slice(k + 1), k);
    for (int i = 0; i < model.node_count(k); ++i) {
      const double keep = std::exp(-n * driver.delta(k, i));
      y.at(k, i) = eta.at(k, i) * (1.0 - keep) + keep * c[i];
    }
  }
  return y;
}

}  // namespace gbsde
