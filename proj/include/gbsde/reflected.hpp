#pragma once

// Reflected backward solver with a lower obstacle: per node
//   y = max(zeta, c + g(k, node, y) dA),  dK = y - (c + g(k, y) dA) >= 0,
// so K increases only where the obstacle binds (discrete Skorokhod
// condition). The terminal condition is the obstacle's terminal slice.

#include <cmath>
#include <vector>

#include "gbsde/solver.hpp"

namespace gbsde {

struct RgbsdeSolution {
  AdaptedProcess y;
  AdaptedProcess z;      // steps 0..N-1
  AdaptedProcess k_inc;  // dK_k >= 0 per node, steps 0..N-1
  double residual = 0.0;
};

inline RgbsdeSolution solve_reflected(const LatticeModel& model, const MartingaleM& m,
                                      const Driver& driver, const Generator& gen,
                                      const AdaptedProcess& zeta, double tol = 1e-12) {
  if (tol <= 0.0) throw ValidationError("solver tolerance must be positive");
  check_shape(model, zeta, "obstacle");
  detail::check_solver_inputs(model, m, driver, zeta.terminal());
  detail::check_contraction_gate(model, driver, gen);

  RgbsdeSolution sol;
  sol.y = AdaptedProcess(model);
  sol.z = AdaptedProcess(model);
  sol.k_inc = AdaptedProcess(model);
  sol.y.slice(model.depth()) = zeta.terminal();
  for (int k = model.depth() - 1; k >= 0; --k) {
    const std::vector<double> c = conditional_expectation(model, sol.y.slice(k + 1), k);
    const std::vector<double> z = representation_coefficient(model, m, sol.y.slice(k + 1), k);
    for (int i = 0; i < model.node_count(k); ++i) {
      const double dA = driver.delta(k, i);
      const double unreflected = detail::implicit_node_solve(gen, k, i, c[i], dA, tol);
      const double lo = zeta.at(k, i);
      sol.y.at(k, i) = std::max(lo, unreflected);
      sol.z.at(k, i) = z[i];
      // dK is exactly zero off the contact set; node-solve residue is
      // accounted for in `residual`, not smuggled into K.
      sol.k_inc.at(k, i) =
          lo > unreflected ? std::max(0.0, lo - (c[i] + gen(k, i, lo) * dA)) : 0.0;
    }
  }
  sol.residual = detail::path_identity_residual(model, m, driver, gen, sol.y, sol.z, &sol.k_inc);
  return sol;
}

// Path-cumulative K from the per-node increments. Prefix sums along paths are
// genuinely path dependent, so the result is indexed on the full binary
// expansion of the tree (for FullBinary models that is the tree itself).
inline AdaptedProcess extract_k_cumulative(const LatticeModel& model, const RgbsdeSolution& sol) {
  std::vector<std::vector<double>> slices(model.depth() + 1);
  slices[0].assign(1, 0.0);
  for (int k = 0; k < model.depth(); ++k) {
    slices[k + 1].assign(std::size_t{1} << (k + 1), 0.0);
    for (std::size_t q = 0; q < slices[k].size(); ++q) {
      const int node = model.structure() == TreeStructure::FullBinary ? static_cast<int>(q)
                                                                      : std::popcount(q);
      const double next = slices[k][q] + sol.k_inc.at(k, node);
      slices[k + 1][2 * q] = next;
      slices[k + 1][2 * q + 1] = next;
    }
  }
  return AdaptedProcess::from_slices(std::move(slices));
}

}  // namespace gbsde
