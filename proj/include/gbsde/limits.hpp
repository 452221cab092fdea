#pragma once

// Penalization ladders and their limit oracles: the support-constrained
// optimal stopping value, the Snell envelope of the composite reward, the
// constrained Dynkin game value, and exhaustive stopping-rule enumeration as
// an independent ground truth.

#include <cstdint>
#include <string>
#include <vector>

#include "gbsde/reflected.hpp"
#include "gbsde/solver.hpp"

namespace gbsde {

// --- backward-induction oracles -------------------------------------------

// V_N = xi; before the terminal step, stopping for eta is admissible only on
// right-support nodes:
//   V_k = max(eta_k, E[V_{k+1}|node]) on support nodes, else E[V_{k+1}|node].
inline AdaptedProcess constrained_snell(const LatticeModel& model, const Driver& driver,
                                        const std::vector<double>& xi, const AdaptedProcess& eta) {
  check_shape(model, eta, "eta");
  if (static_cast<int>(xi.size()) != model.node_count(model.depth()))
    throw ValidationError("terminal data size does not match the terminal step");
  AdaptedProcess v(model);
  v.slice(model.depth()) = xi;
  for (int k = model.depth() - 1; k >= 0; --k) {
    const std::vector<double> c = conditional_expectation(model, v.slice(k + 1), k);
    for (int i = 0; i < model.node_count(k); ++i)
      v.at(k, i) = driver.in_right_support(k, i) ? std::max(eta.at(k, i), c[i]) : c[i];
  }
  return v;
}

// Composite reward gamma: zeta_N at the terminal step; before it,
// zeta v eta on S-bar nodes and zeta elsewhere.
inline AdaptedProcess make_gamma(const LatticeModel& model, const Driver& driver,
                                 const AdaptedProcess& zeta, const AdaptedProcess& eta) {
  check_shape(model, zeta, "zeta");
  check_shape(model, eta, "eta");
  AdaptedProcess g = zeta;
  for (int k = 0; k < model.depth(); ++k)
    for (int i = 0; i < model.node_count(k); ++i)
      if (driver.in_sbar(k, i)) g.at(k, i) = std::max(zeta.at(k, i), eta.at(k, i));
  return g;
}

// Classical (unconstrained) Snell envelope of gamma.
inline AdaptedProcess snell_of_gamma(const LatticeModel& model, const Driver& driver,
                                     const AdaptedProcess& zeta, const AdaptedProcess& eta) {
  const AdaptedProcess gamma = make_gamma(model, driver, zeta, eta);
  AdaptedProcess v(model);
  v.slice(model.depth()) = gamma.terminal();
  for (int k = model.depth() - 1; k >= 0; --k) {
    const std::vector<double> c = conditional_expectation(model, v.slice(k + 1), k);
    for (int i = 0; i < model.node_count(k); ++i) v.at(k, i) = std::max(gamma.at(k, i), c[i]);
  }
  return v;
}

// --- the constrained Dynkin game -------------------------------------------

// Payoff convention: the maximizer stops at sigma (unconstrained), the
// minimizer at tau (restricted to S-bar); a simultaneous stop pays the
// minimizer's (zeta v eta). The value at t = T is ambiguous between the
// backward equation's zeta_T and the literal simultaneous payoff
// (zeta v eta)_T, so both terminal modes are exposed.
enum class TerminalMode { ZetaT, ZetaOrEtaT };

inline std::string terminal_mode_name(TerminalMode mode) {
  return mode == TerminalMode::ZetaT ? "zeta_t" : "zeta_or_eta_t";
}

struct GameSpec {
  AdaptedProcess zeta;
  AdaptedProcess eta;
  std::vector<double> xi;  // terminal data of the lower process
};

inline GameSpec make_game_spec(const LatticeModel& model, AdaptedProcess zeta, AdaptedProcess eta) {
  check_shape(model, zeta, "zeta");
  check_shape(model, eta, "eta");
  GameSpec s;
  s.xi = zeta.terminal();
  s.zeta = std::move(zeta);
  s.eta = std::move(eta);
  return s;
}

inline void check_game_hypothesis(const LatticeModel& model, const Driver& driver,
                                  const GameSpec& spec) {
  // S-bar contains every terminal node, so the hypothesis is checked there too.
  for (int k = 0; k <= model.depth(); ++k)
    for (int i = 0; i < model.node_count(k); ++i)
      if (driver.in_sbar(k, i) && spec.zeta.at(k, i) > spec.eta.at(k, i))
        throw HypothesisError("game hypothesis zeta <= eta fails on support node " + node_str(k, i));
}

inline std::vector<double> dynkin_terminal(const GameSpec& spec, TerminalMode mode) {
  std::vector<double> t = spec.xi;
  if (mode == TerminalMode::ZetaOrEtaT)
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = std::max(t[i], spec.eta.terminal()[i]);
  return t;
}

// Median recursion, valid because zeta <= eta on S-bar makes the two iterated
// stopping orders coincide:
//   V_k = median(zeta_k, E[V_{k+1}], eta_k) on support nodes,
//   V_k = max(zeta_k, E[V_{k+1}]) elsewhere.
inline AdaptedProcess dynkin_value(const LatticeModel& model, const Driver& driver,
                                   const GameSpec& spec, TerminalMode mode) {
  check_game_hypothesis(model, driver, spec);
  AdaptedProcess v(model);
  v.slice(model.depth()) = dynkin_terminal(spec, mode);
  for (int k = model.depth() - 1; k >= 0; --k) {
    const std::vector<double> c = conditional_expectation(model, v.slice(k + 1), k);
    for (int i = 0; i < model.node_count(k); ++i) {
      const double lo = spec.zeta.at(k, i);
      if (driver.in_right_support(k, i)) {
        v.at(k, i) = std::min(std::max(lo, c[i]), spec.eta.at(k, i));
      } else {
        v.at(k, i) = std::max(lo, c[i]);
      }
    }
  }
  return v;
}

// --- penalization ladders ---------------------------------------------------

struct PenalizationReport {
  std::vector<double> n_values;
  std::vector<AdaptedProcess> y_by_n;
  AdaptedProcess oracle;
  std::vector<double> sup_errors;
  bool monotone_ok = true;
  // Down ladder only: which Dynkin terminal mode the levels converge to.
  std::string terminal_mode_matched;
};

inline std::vector<double> default_penalty_levels(int pow2_max = 14) {
  std::vector<double> n;
  for (int j = 0; j <= pow2_max; ++j) n.push_back(static_cast<double>(std::uint64_t{1} << j));
  return n;
}

namespace detail {

inline void check_ladder_levels(const std::vector<double>& n_values) {
  if (n_values.empty()) throw ValidationError("penalty ladder needs at least one level");
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    if (n_values[i] < 0.0) throw ValidationError("penalty levels must be >= 0");
    if (i > 0 && n_values[i] <= n_values[i - 1])
      throw ValidationError("penalty levels must be strictly increasing");
  }
}

inline double sup_distance(const AdaptedProcess& a, const AdaptedProcess& b) {
  double d = 0.0;
  for (int k = 0; k <= a.depth(); ++k)
    for (int i = 0; i < a.count(k); ++i) d = std::max(d, std::abs(a.at(k, i) - b.at(k, i)));
  return d;
}

// a >= b - tol nodewise.
inline bool dominates(const AdaptedProcess& a, const AdaptedProcess& b, double tol) {
  for (int k = 0; k <= a.depth(); ++k)
    for (int i = 0; i < a.count(k); ++i)
      if (a.at(k, i) < b.at(k, i) - tol) return false;
  return true;
}

}  // namespace detail

// Unreflected up ladder: levels solve the penalty-up equation with terminal
// xi; the oracle is the constrained optimal stopping value.
inline PenalizationReport ladder_gbsde(const LatticeModel& model, const MartingaleM& m,
                                       const Driver& driver, const std::vector<double>& xi,
                                       const AdaptedProcess& eta,
                                       const std::vector<double>& n_values) {
  detail::check_ladder_levels(n_values);
  PenalizationReport rep;
  rep.n_values = n_values;
  rep.oracle = constrained_snell(model, driver, xi, eta);
  for (double n : n_values) {
    GbsdeSolution sol = solve_backward(model, m, driver, Generator::penalty_up(n, eta), xi);
    rep.sup_errors.push_back(detail::sup_distance(sol.y, rep.oracle));
    if (!rep.y_by_n.empty() && !detail::dominates(sol.y, rep.y_by_n.back(), 1e-12))
      rep.monotone_ok = false;
    rep.y_by_n.push_back(std::move(sol.y));
  }
  return rep;
}

// Reflected up ladder with lower obstacle zeta; oracle: Snell envelope of the
// composite reward gamma.
inline PenalizationReport ladder_reflected_up(const LatticeModel& model, const MartingaleM& m,
                                              const Driver& driver, const AdaptedProcess& zeta,
                                              const AdaptedProcess& eta,
                                              const std::vector<double>& n_values) {
  detail::check_ladder_levels(n_values);
  PenalizationReport rep;
  rep.n_values = n_values;
  rep.oracle = snell_of_gamma(model, driver, zeta, eta);
  for (double n : n_values) {
    RgbsdeSolution sol = solve_reflected(model, m, driver, Generator::penalty_up(n, eta), zeta);
    rep.sup_errors.push_back(detail::sup_distance(sol.y, rep.oracle));
    if (!rep.y_by_n.empty() && !detail::dominates(sol.y, rep.y_by_n.back(), 1e-12))
      rep.monotone_ok = false;
    rep.y_by_n.push_back(std::move(sol.y));
  }
  return rep;
}

// Reflected down ladder; levels decrease towards the Dynkin value. Both
// terminal modes are compared and the empirically matching one is reported.
inline PenalizationReport ladder_reflected_down(const LatticeModel& model, const MartingaleM& m,
                                                const Driver& driver, const GameSpec& spec,
                                                const std::vector<double>& n_values) {
  detail::check_ladder_levels(n_values);
  check_game_hypothesis(model, driver, spec);
  PenalizationReport rep;
  rep.n_values = n_values;
  for (double n : n_values) {
    RgbsdeSolution sol =
        solve_reflected(model, m, driver, Generator::penalty_down(n, spec.eta), spec.zeta);
    if (!rep.y_by_n.empty() && !detail::dominates(rep.y_by_n.back(), sol.y, 1e-12))
      rep.monotone_ok = false;
    rep.y_by_n.push_back(std::move(sol.y));
  }
  const AdaptedProcess v_zeta = dynkin_value(model, driver, spec, TerminalMode::ZetaT);
  const AdaptedProcess v_mix = dynkin_value(model, driver, spec, TerminalMode::ZetaOrEtaT);
  const double final_zeta = detail::sup_distance(rep.y_by_n.back(), v_zeta);
  const double final_mix = detail::sup_distance(rep.y_by_n.back(), v_mix);
  const bool zeta_wins = final_zeta <= final_mix;
  rep.oracle = zeta_wins ? v_zeta : v_mix;
  rep.terminal_mode_matched =
      terminal_mode_name(zeta_wins ? TerminalMode::ZetaT : TerminalMode::ZetaOrEtaT);
  for (const AdaptedProcess& y : rep.y_by_n)
    rep.sup_errors.push_back(detail::sup_distance(y, rep.oracle));
  return rep;
}

// --- exhaustive enumeration -------------------------------------------------

namespace detail {

constexpr int kEnumerationNodeGuard = 24;

inline void check_enumeration_guard(const LatticeModel& model) {
  const long long nonterminal = (1LL << model.depth()) - 1;
  if (nonterminal > kEnumerationNodeGuard)
    throw EnumerationLimitError("enumeration guard exceeded: " + std::to_string(nonterminal) +
                                " non-terminal nodes > " + std::to_string(kEnumerationNodeGuard));
}

// All adapted first-stop rules on the subtree rooted at expansion node
// (step, prefix), each returned as the realized stop step per path suffix
// (2^(N-step) suffixes in move order, most significant suffix bit first).
inline std::vector<std::vector<std::uint8_t>> enumerate_stop_steps(const LatticeModel& model,
                                                                   const Driver& driver,
                                                                   bool constrained, int step,
                                                                   std::uint64_t prefix) {
  const int remaining = model.depth() - step;
  const int node = model.structure() == TreeStructure::FullBinary ? static_cast<int>(prefix)
                                                                  : std::popcount(prefix);
  const bool may_stop = !constrained || driver.in_sbar(step, node);
  if (remaining == 0) return {std::vector<std::uint8_t>{static_cast<std::uint8_t>(step)}};

  std::vector<std::vector<std::uint8_t>> rules;
  if (may_stop)
    rules.emplace_back(std::size_t{1} << remaining, static_cast<std::uint8_t>(step));
  const auto down = enumerate_stop_steps(model, driver, constrained, step + 1, prefix << 1);
  const auto up = enumerate_stop_steps(model, driver, constrained, step + 1, (prefix << 1) | 1);
  for (const auto& rd : down) {
    for (const auto& ru : up) {
      std::vector<std::uint8_t> combined;
      combined.reserve(std::size_t{1} << remaining);
      combined.insert(combined.end(), rd.begin(), rd.end());
      combined.insert(combined.end(), ru.begin(), ru.end());
      rules.push_back(std::move(combined));
    }
  }
  return rules;
}

}  // namespace detail

// Materialized first-stop rules for the whole tree.
inline std::vector<StoppingRule> enumerate_stopping_rules(const LatticeModel& model, bool constrained,
                                                          const Driver& driver) {
  detail::check_enumeration_guard(model);
  const auto stop_steps = detail::enumerate_stop_steps(model, driver, constrained, 0, 0);
  std::vector<StoppingRule> rules;
  rules.reserve(stop_steps.size());
  for (const auto& steps : stop_steps) {
    StoppingRule r = make_stopping_rule(model, constrained);
    for (std::uint64_t path = 0; path < model.path_count(); ++path) {
      const int s = steps[path];
      if (s < model.depth()) r.stop[s][model.expansion_index(path, s)] = 1;
    }
    rules.push_back(std::move(r));
  }
  return rules;
}

// Ground truth for optimal stopping by exhaustion over adapted rules. The
// reward map assigns the payoff collected when stopping at a lattice node
// (terminal included). Values are returned on the full binary expansion.
inline AdaptedProcess brute_force_optimal_stop(const LatticeModel& model, const Driver& driver,
                                               const AdaptedProcess& reward, bool constrained) {
  detail::check_enumeration_guard(model);
  check_shape(model, reward, "reward");
  const double p = model.up_prob();
  std::vector<std::vector<double>> values(model.depth() + 1);
  for (int k = 0; k <= model.depth(); ++k) {
    const int suffix_len = model.depth() - k;
    values[k].resize(std::size_t{1} << k);
    for (std::uint64_t prefix = 0; prefix < (std::uint64_t{1} << k); ++prefix) {
      const auto rules = detail::enumerate_stop_steps(model, driver, constrained, k, prefix);
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& rule : rules) {
        double value = 0.0;
        for (std::uint64_t suffix = 0; suffix < (std::uint64_t{1} << suffix_len); ++suffix) {
          const std::uint64_t path = (prefix << suffix_len) | suffix;
          const int ups = std::popcount(suffix);
          const double prob = std::pow(p, ups) * std::pow(1.0 - p, suffix_len - ups);
          const int s = rule[suffix];
          value += prob * reward.at(s, model.node_on_path(path, s));
        }
        best = std::max(best, value);
      }
      values[k][prefix] = best;
    }
  }
  return AdaptedProcess::from_slices(std::move(values));
}

struct DynkinBruteForce {
  AdaptedProcess infsup;  // expansion indexed
  AdaptedProcess supinf;
  double max_gap = 0.0;   // worst |infsup - supinf| over nodes
};

// Both iterated game values by exhaustion over rule pairs: the maximizer's
// sigma ranges over unconstrained rules, the minimizer's tau over rules
// supported on S-bar. Theta pays zeta_sigma when tau > sigma and
// (zeta v eta)_tau when tau <= sigma; a simultaneous forced stop at the
// terminal step pays per the terminal mode.
inline DynkinBruteForce brute_force_dynkin(const LatticeModel& model, const Driver& driver,
                                           const GameSpec& spec, TerminalMode mode) {
  detail::check_enumeration_guard(model);
  check_game_hypothesis(model, driver, spec);
  const double p = model.up_prob();
  const std::vector<double> terminal = dynkin_terminal(spec, mode);

  std::vector<std::vector<double>> infsup(model.depth() + 1), supinf(model.depth() + 1);
  DynkinBruteForce out;
  for (int k = 0; k <= model.depth(); ++k) {
    const int suffix_len = model.depth() - k;
    infsup[k].resize(std::size_t{1} << k);
    supinf[k].resize(std::size_t{1} << k);
    for (std::uint64_t prefix = 0; prefix < (std::uint64_t{1} << k); ++prefix) {
      const auto sigma_rules = detail::enumerate_stop_steps(model, driver, /*constrained=*/false, k, prefix);
      const auto tau_rules = detail::enumerate_stop_steps(model, driver, /*constrained=*/true, k, prefix);

      // payoff[s][t] = E[Theta(sigma_s, tau_t) | node]
      std::vector<std::vector<double>> payoff(sigma_rules.size(),
                                              std::vector<double>(tau_rules.size(), 0.0));
      for (std::uint64_t suffix = 0; suffix < (std::uint64_t{1} << suffix_len); ++suffix) {
        const std::uint64_t path = (prefix << suffix_len) | suffix;
        const int ups = std::popcount(suffix);
        const double prob = std::pow(p, ups) * std::pow(1.0 - p, suffix_len - ups);
        for (std::size_t s = 0; s < sigma_rules.size(); ++s) {
          const int ss = sigma_rules[s][suffix];
          for (std::size_t t = 0; t < tau_rules.size(); ++t) {
            const int ts = tau_rules[t][suffix];
            double theta;
            if (ts > ss) {
              theta = spec.zeta.at(ss, model.node_on_path(path, ss));
            } else if (ts == model.depth()) {
              theta = terminal[model.node_on_path(path, model.depth())];
            } else {
              const int node = model.node_on_path(path, ts);
              theta = std::max(spec.zeta.at(ts, node), spec.eta.at(ts, node));
            }
            payoff[s][t] += prob * theta;
          }
        }
      }

      double v_infsup = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < tau_rules.size(); ++t) {
        double best_sigma = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < sigma_rules.size(); ++s)
          best_sigma = std::max(best_sigma, payoff[s][t]);
        v_infsup = std::min(v_infsup, best_sigma);
      }
      double v_supinf = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < sigma_rules.size(); ++s) {
        double worst_tau = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < tau_rules.size(); ++t)
          worst_tau = std::min(worst_tau, payoff[s][t]);
        v_supinf = std::max(v_supinf, worst_tau);
      }
      infsup[k][prefix] = v_infsup;
      supinf[k][prefix] = v_supinf;
      out.max_gap = std::max(out.max_gap, std::abs(v_infsup - v_supinf));
    }
  }
  out.infsup = AdaptedProcess::from_slices(std::move(infsup));
  out.supinf = AdaptedProcess::from_slices(std::move(supinf));
  return out;
}

// Lattice process mapped onto the full binary expansion (identity for
// FullBinary models); used to compare backward values with brute force.
inline AdaptedProcess expand_to_full_binary(const LatticeModel& model, const AdaptedProcess& x) {
  check_shape(model, x, "expand");
  if (model.structure() == TreeStructure::FullBinary) return x;
  std::vector<std::vector<double>> slices(model.depth() + 1);
  for (int k = 0; k <= model.depth(); ++k) {
    slices[k].resize(std::size_t{1} << k);
    for (std::uint64_t q = 0; q < (std::uint64_t{1} << k); ++q)
      slices[k][q] = x.at(k, std::popcount(q));
  }
  return AdaptedProcess::from_slices(std::move(slices));
}

}  // namespace gbsde
