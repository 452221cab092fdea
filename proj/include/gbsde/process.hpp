#pragma once

// Nondecreasing drivers with their right support, exponential weights and
// exact exponential quadrature against dA, generators, and stopping rules.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "gbsde/lattice.hpp"

namespace gbsde {

// Nondecreasing process A with A_0 = 0. Increments are announced one step
// ahead (both successors of a node carry the same A value), the discrete
// counterpart of a continuous driver; on a recombining tree this forces A to
// be deterministic in the step.
class Driver {
 public:
  Driver() = default;

  const AdaptedProcess& a() const { return a_; }
  double value(int step, int index) const { return a_.at(step, index); }
  double delta(int step, int index) const { return delta_[step][index]; }
  const std::vector<std::vector<double>>& deltas() const { return delta_; }
  double c_a() const { return bound_; }
  int depth() const { return a_.depth(); }

  bool in_right_support(int step, int index) const { return right_support_[step][index] != 0; }

  // S-bar = right support plus all terminal nodes.
  bool in_sbar(int step, int index) const {
    return step == depth() ? true : in_right_support(step, index);
  }

  double max_delta() const { return max_delta_; }

  // Smallest strictly positive increment; +inf when the right support is empty.
  double min_delta_on_support() const { return min_delta_on_support_; }

  friend Driver make_driver(const LatticeModel& model, const AdaptedProcess& a_values);

 private:
  AdaptedProcess a_;
  std::vector<std::vector<double>> delta_;
  std::vector<std::vector<char>> right_support_;
  double bound_ = 0.0;
  double max_delta_ = 0.0;
  double min_delta_on_support_ = std::numeric_limits<double>::infinity();
};

inline Driver make_driver(const LatticeModel& model, const AdaptedProcess& a_values) {
  check_shape(model, a_values, "driver");
  if (a_values.at(0, 0) != 0.0)
    throw ValidationError("driver must start at zero, got A_0 = " + std::to_string(a_values.at(0, 0)));

  Driver d;
  d.a_ = a_values;
  d.delta_.resize(model.depth());
  d.right_support_.resize(model.depth());
  for (int k = 0; k < model.depth(); ++k) {
    d.delta_[k].resize(model.node_count(k));
    d.right_support_[k].resize(model.node_count(k));
    for (int i = 0; i < model.node_count(k); ++i) {
      const double au = a_values.at(k + 1, model.child_index(k, i, true));
      const double ad = a_values.at(k + 1, model.child_index(k, i, false));
      if (au != ad)
        throw ValidationError("driver increment not announced at node " + node_str(k, i) +
                              ": successor values differ (" + std::to_string(au) + " vs " +
                              std::to_string(ad) + ")");
      const double da = au - a_values.at(k, i);
      if (da < 0.0)
        throw ValidationError("driver must be nondecreasing, negative increment at node " + node_str(k, i));
      d.delta_[k][i] = da;
      d.right_support_[k][i] = da > 0.0 ? 1 : 0;
      d.max_delta_ = std::max(d.max_delta_, da);
      if (da > 0.0) d.min_delta_on_support_ = std::min(d.min_delta_on_support_, da);
    }
  }
  for (double v : a_values.terminal()) d.bound_ = std::max(d.bound_, v);
  return d;
}

// e_k = exp(beta * A_k) per node.
inline AdaptedProcess exp_weight(const Driver& driver, double beta) {
  AdaptedProcess e = driver.a();
  for (int k = 0; k <= e.depth(); ++k)
    for (double& v : e.slice(k)) v = std::exp(beta * v);
  return e;
}

// Exact quadrature of the kernel n * exp(n (A_from - A_s)) dA_s over one grid
// step (A interpolated linearly in between):
//   integral over ]t_k, t_{k+1}] = exp(n(A_from - A_k)) - exp(n(A_from - A_{k+1})).
// Weights plus the terminal mass exp(n(A_from - A_N)) telescope to one.
struct ExpIntegralWeights {
  int from_step = 0;
  std::vector<double> weights;  // one per step from_step..N-1
  double terminal_mass = 1.0;
};

inline ExpIntegralWeights exp_integral_weights(const LatticeModel& model, const Driver& driver,
                                               double n, int from_step, std::uint64_t path_bits) {
  model.check_step(from_step);
  if (n < 0.0) throw ValidationError("exp_integral_weights needs n >= 0");
  ExpIntegralWeights w;
  w.from_step = from_step;
  const double a_from = driver.value(from_step, model.node_on_path(path_bits, from_step));
  double decay_left = 1.0;  // exp(n (A_from - A_k)), starts at k = from_step
  for (int k = from_step; k < model.depth(); ++k) {
    const double a_next = driver.value(k + 1, model.node_on_path(path_bits, k + 1));
    const double decay_right = std::exp(n * (a_from - a_next));
    w.weights.push_back(decay_left - decay_right);
    decay_left = decay_right;
  }
  w.terminal_mass = decay_left;
  return w;
}

// --- generators ----------------------------------------------------------

enum class GenMonotone { NonIncreasingInY, Unknown };
enum class GenSign { NonNegative, NonPositive, Unknown };
enum class GenForm { Generic, PenaltyUp, PenaltyDown };

// The nonlinearity integrated against dA: an evaluable map
// (step, node, y) -> real with a declared Lipschitz constant. The two penalty
// forms carry their barrier so node equations can be solved in closed form.
class Generator {
 public:
  using EvalFn = std::function<double(int step, int index, double y)>;

  static Generator from_function(EvalFn f, double lipschitz,
                                 GenMonotone monotone = GenMonotone::Unknown,
                                 GenSign sign = GenSign::Unknown) {
    if (lipschitz < 0.0) throw ValidationError("generator Lipschitz constant must be >= 0");
    Generator g;
    g.eval_ = std::move(f);
    g.lipschitz_ = lipschitz;
    g.monotone_ = monotone;
    g.sign_ = sign;
    return g;
  }

  static Generator zero() {
    return from_function([](int, int, double) { return 0.0; }, 0.0,
                         GenMonotone::NonIncreasingInY, GenSign::NonNegative);
  }

  static Generator constant_rate(double c) {
    return from_function([c](int, int, double) { return c; }, 0.0, GenMonotone::NonIncreasingInY,
                         c >= 0.0 ? GenSign::NonNegative : GenSign::NonPositive);
  }

  // g(k, i, y) = n * (eta - y)^+
  static Generator penalty_up(double n, AdaptedProcess eta) {
    if (n < 0.0) throw ValidationError("penalty level must be >= 0");
    Generator g;
    g.form_ = GenForm::PenaltyUp;
    g.penalty_n_ = n;
    g.barrier_ = std::make_shared<AdaptedProcess>(std::move(eta));
    auto barrier = g.barrier_;
    g.eval_ = [n, barrier](int step, int index, double y) {
      return n * std::max(barrier->at(step, index) - y, 0.0);
    };
    g.lipschitz_ = n;
    g.monotone_ = GenMonotone::NonIncreasingInY;
    g.sign_ = GenSign::NonNegative;
    return g;
  }

  // g(k, i, y) = -n * (y - eta)^+
  static Generator penalty_down(double n, AdaptedProcess eta) {
    if (n < 0.0) throw ValidationError("penalty level must be >= 0");
    Generator g;
    g.form_ = GenForm::PenaltyDown;
    g.penalty_n_ = n;
    g.barrier_ = std::make_shared<AdaptedProcess>(std::move(eta));
    auto barrier = g.barrier_;
    g.eval_ = [n, barrier](int step, int index, double y) {
      return -n * std::max(y - barrier->at(step, index), 0.0);
    };
    g.lipschitz_ = n;
    g.monotone_ = GenMonotone::NonIncreasingInY;
    g.sign_ = GenSign::NonPositive;
    return g;
  }

  double operator()(int step, int index, double y) const { return eval_(step, index, y); }

  double lipschitz() const { return lipschitz_; }
  GenMonotone monotone() const { return monotone_; }
  GenSign sign() const { return sign_; }
  GenForm form() const { return form_; }
  double penalty_level() const { return penalty_n_; }
  const AdaptedProcess& barrier() const { return *barrier_; }

 private:
  EvalFn eval_;
  double lipschitz_ = 0.0;
  GenMonotone monotone_ = GenMonotone::Unknown;
  GenSign sign_ = GenSign::Unknown;
  GenForm form_ = GenForm::Generic;
  double penalty_n_ = 0.0;
  std::shared_ptr<const AdaptedProcess> barrier_;
};

// --- stopping rules ------------------------------------------------------

// Per-node stop/continue decisions, adapted, with a forced stop at the
// terminal step. Decisions are indexed on the full binary expansion of the
// tree (step k has 2^k entries) so that path-dependent rules are expressible
// on recombining models as well.
struct StoppingRule {
  std::vector<std::vector<char>> stop;
  bool constrained = false;
};

inline StoppingRule make_stopping_rule(const LatticeModel& model, bool constrained) {
  StoppingRule r;
  r.constrained = constrained;
  r.stop.resize(model.depth() + 1);
  for (int k = 0; k <= model.depth(); ++k)
    r.stop[k].assign(std::size_t{1} << k, k == model.depth() ? 1 : 0);
  return r;
}

inline void validate_stopping_rule(const LatticeModel& model, const Driver& driver,
                                   const StoppingRule& rule) {
  if (static_cast<int>(rule.stop.size()) != model.depth() + 1)
    throw ValidationError("stopping rule depth does not match the lattice");
  for (int k = 0; k <= model.depth(); ++k) {
    if (rule.stop[k].size() != (std::size_t{1} << k))
      throw ValidationError("stopping rule step " + std::to_string(k) + " has wrong width");
    for (std::size_t q = 0; q < rule.stop[k].size(); ++q) {
      if (k == model.depth() && !rule.stop[k][q])
        throw ValidationError("stopping rule must stop at every terminal node");
      if (rule.constrained && k < model.depth() && rule.stop[k][q]) {
        const int node = model.structure() == TreeStructure::FullBinary
                             ? static_cast<int>(q)
                             : std::popcount(q);
        if (!driver.in_sbar(k, node))
          throw ValidationError("constrained rule stops outside the support at node " + node_str(k, node));
      }
    }
  }
}

// First step along the path with stop = true; the terminal stop is forced.
inline int realized_stop(const LatticeModel& model, const StoppingRule& rule,
                         std::uint64_t path_bits) {
  for (int k = 0; k <= model.depth(); ++k) {
    if (rule.stop[k][model.expansion_index(path_bits, k)]) return k;
  }
  return model.depth();
}

}  // namespace gbsde
