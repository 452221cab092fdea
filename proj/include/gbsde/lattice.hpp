#pragma once

// Finite binomial filtrations: node indexing for recombining and full binary
// trees, node-indexed processes, the standard unit-variance walk martingale,
// conditional expectations and the one-step martingale representation.

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gbsde/errors.hpp"

namespace gbsde {

enum class TreeStructure { Recombining, FullBinary };

struct NodeId {
  int step = 0;
  int index = 0;
};

inline std::string node_str(int step, int index) {
  return "(step=" + std::to_string(step) + ", index=" + std::to_string(index) + ")";
}

// A depth-N binomial tree with a constant up probability. Time steps are
// k = 0..N. Recombining trees index nodes by the number of up moves so far;
// full binary trees index nodes by the whole move prefix (most significant
// bit = first move, bit value 1 = up).
class LatticeModel {
 public:
  LatticeModel(int depth, double up_prob, TreeStructure structure)
      : depth_(depth), up_prob_(up_prob), structure_(structure) {
    if (depth < 1) throw ValidationError("lattice depth must be >= 1, got " + std::to_string(depth));
    if (!(up_prob > 0.0 && up_prob < 1.0))
      throw ValidationError("up probability must lie in (0,1), got " + std::to_string(up_prob));
    if (structure == TreeStructure::FullBinary && depth > 30)
      throw ValidationError("full binary depth capped at 30, got " + std::to_string(depth));
  }

  int depth() const { return depth_; }
  double up_prob() const { return up_prob_; }
  TreeStructure structure() const { return structure_; }

  int node_count(int step) const {
    check_step(step);
    return structure_ == TreeStructure::Recombining ? step + 1 : 1 << step;
  }

  // Successor index at step+1 of node `index` at `step`.
  int child_index(int step, int index, bool up) const {
    check_node(step, index, /*terminal_ok=*/false);
    if (structure_ == TreeStructure::Recombining) return up ? index + 1 : index;
    return 2 * index + (up ? 1 : 0);
  }

  // --- path helpers ------------------------------------------------------
  // A path is encoded in the low `depth` bits of `bits`; the most significant
  // of those bits is the first move, bit value 1 = up.

  std::uint64_t path_count() const { return std::uint64_t{1} << depth_; }

  // Move prefix of length `step` (index into the full binary expansion).
  std::uint64_t expansion_index(std::uint64_t bits, int step) const {
    check_step(step);
    return step == 0 ? 0 : (bits >> (depth_ - step));
  }

  // Lattice node index visited at `step` along the path.
  int node_on_path(std::uint64_t bits, int step) const {
    const std::uint64_t prefix = expansion_index(bits, step);
    if (structure_ == TreeStructure::FullBinary) return static_cast<int>(prefix);
    return std::popcount(prefix);
  }

  double path_probability(std::uint64_t bits) const {
    const int ups = std::popcount(bits & (path_count() - 1));
    return std::pow(up_prob_, ups) * std::pow(1.0 - up_prob_, depth_ - ups);
  }

  void check_step(int step) const {
    if (step < 0 || step > depth_)
      throw ValidationError("step " + std::to_string(step) + " outside [0," + std::to_string(depth_) + "]");
  }

  void check_node(int step, int index, bool terminal_ok = true) const {
    check_step(step);
    if (!terminal_ok && step == depth_)
      throw ValidationError("terminal node has no successors: " + node_str(step, index));
    if (index < 0 || index >= node_count(step))
      throw ValidationError("node index out of range: " + node_str(step, index));
  }

 private:
  int depth_;
  double up_prob_;
  TreeStructure structure_;
};

inline LatticeModel build_lattice(int depth, double up_prob, TreeStructure structure) {
  return LatticeModel(depth, up_prob, structure);
}

// One real value per tree node, steps 0..N.
class AdaptedProcess {
 public:
  AdaptedProcess() = default;

  explicit AdaptedProcess(const LatticeModel& model, double fill = 0.0) {
    values_.resize(model.depth() + 1);
    for (int k = 0; k <= model.depth(); ++k) values_[k].assign(model.node_count(k), fill);
  }

  static AdaptedProcess constant(const LatticeModel& model, double c) { return AdaptedProcess(model, c); }

  static AdaptedProcess from_slices(std::vector<std::vector<double>> slices) {
    AdaptedProcess p;
    p.values_ = std::move(slices);
    return p;
  }

  int depth() const { return static_cast<int>(values_.size()) - 1; }
  int count(int step) const { return static_cast<int>(values_[step].size()); }

  double at(int step, int index) const { return values_[step][index]; }
  double& at(int step, int index) { return values_[step][index]; }

  const std::vector<double>& slice(int step) const { return values_[step]; }
  std::vector<double>& slice(int step) { return values_[step]; }

  const std::vector<double>& terminal() const { return values_.back(); }

  bool shape_matches(const LatticeModel& model) const {
    if (depth() != model.depth()) return false;
    for (int k = 0; k <= model.depth(); ++k)
      if (count(k) != model.node_count(k)) return false;
    return true;
  }

 private:
  std::vector<std::vector<double>> values_;
};

inline void check_shape(const LatticeModel& model, const AdaptedProcess& x, const char* what) {
  if (!x.shape_matches(model))
    throw ValidationError(std::string(what) + ": process shape does not match the lattice");
}

// Square-integrable martingale with per-branch increments and pathwise bracket.
struct MartingaleM {
  AdaptedProcess values;                      // M_k per node
  std::vector<std::vector<double>> inc_up;    // dM on the up branch, steps 0..N-1
  std::vector<std::vector<double>> inc_down;  // dM on the down branch
  AdaptedProcess bracket;                     // [M]_k = sum of squared increments along the path
};

// Canonical walk: M_0 = 0, increments (1-p)/s up and -p/s down with
// s = sqrt(p(1-p)), so that E[dM | node] = 0 and E[(dM)^2 | node] = 1.
inline MartingaleM standard_walk_martingale(const LatticeModel& model) {
  const double p = model.up_prob();
  const double s = std::sqrt(p * (1.0 - p));
  const double du = (1.0 - p) / s;
  const double dd = -p / s;

  MartingaleM m;
  m.values = AdaptedProcess(model);
  m.bracket = AdaptedProcess(model);
  m.inc_up.resize(model.depth());
  m.inc_down.resize(model.depth());
  for (int k = 0; k < model.depth(); ++k) {
    m.inc_up[k].assign(model.node_count(k), du);
    m.inc_down[k].assign(model.node_count(k), dd);
  }
  for (int k = 0; k <= model.depth(); ++k) {
    for (int i = 0; i < model.node_count(k); ++i) {
      int ups;
      if (model.structure() == TreeStructure::Recombining) {
        ups = i;
      } else {
        ups = std::popcount(static_cast<unsigned>(i));
      }
      m.values.at(k, i) = ups * du + (k - ups) * dd;
      m.bracket.at(k, i) = ups * du * du + (k - ups) * dd * dd;
    }
  }
  return m;
}

// E[x_{step+1} | node] for every node at `step`; `next` holds step+1 values.
inline std::vector<double> conditional_expectation(const LatticeModel& model,
                                                   const std::vector<double>& next, int step) {
  model.check_step(step);
  if (step == model.depth())
    throw ValidationError("conditional expectation needs step < depth, got step=" + std::to_string(step));
  if (static_cast<int>(next.size()) != model.node_count(step + 1))
    throw ValidationError("conditional expectation: slice size " + std::to_string(next.size()) +
                          " does not match step " + std::to_string(step + 1));
  const double p = model.up_prob();
  std::vector<double> out(model.node_count(step));
  for (int i = 0; i < model.node_count(step); ++i) {
    const double xu = next[model.child_index(step, i, true)];
    const double xd = next[model.child_index(step, i, false)];
    out[i] = p * xu + (1.0 - p) * xd;
  }
  return out;
}

inline std::vector<double> conditional_expectation(const LatticeModel& model,
                                                   const AdaptedProcess& x, int step) {
  return conditional_expectation(model, x.slice(step + 1), step);
}

// Predictable representation: Z at each node so that
// y_next - E[y_next | node] = Z * dM exactly on both branches.
inline std::vector<double> representation_coefficient(const LatticeModel& model, const MartingaleM& m,
                                                      const std::vector<double>& y_next, int step) {
  model.check_step(step);
  if (step == model.depth())
    throw ValidationError("representation needs step < depth, got step=" + std::to_string(step));
  if (static_cast<int>(y_next.size()) != model.node_count(step + 1))
    throw ValidationError("representation: slice size does not match step " + std::to_string(step + 1));
  std::vector<double> z(model.node_count(step));
  for (int i = 0; i < model.node_count(step); ++i) {
    const double du = m.inc_up[step][i];
    const double dd = m.inc_down[step][i];
    if (du == dd)
      throw RepresentationError("degenerate branch increments at node " + node_str(step, i));
    const double yu = y_next[model.child_index(step, i, true)];
    const double yd = y_next[model.child_index(step, i, false)];
    z[i] = (yu - yd) / (du - dd);
  }
  return z;
}

inline std::vector<double> representation_coefficient(const LatticeModel& model, const MartingaleM& m,
                                                      const AdaptedProcess& y, int step) {
  return representation_coefficient(model, m, y.slice(step + 1), step);
}

}  // namespace gbsde
