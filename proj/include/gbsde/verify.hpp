#pragma once

// Randomized property suite: comparison, weighted stability, the Dirac
// quadrature limit, and path-identity / Skorokhod residuals, driven by a
// seeded configuration so every report is reproducible.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gbsde/limits.hpp"
#include "gbsde/reflected.hpp"
#include "gbsde/solver.hpp"

namespace gbsde {

struct PropertyConfig {
  int trials = 100;
  int depth_min = 2;
  int depth_max = 6;
  double da_min = 0.0;        // low end of nonzero increment draws
  double da_max = 0.02;       // high end; stability requires <= 0.02
  double zero_da_prob = 0.25; // chance a node increment is exactly zero
  double lipschitz_max = 0.5;
  double beta = 3.0;
  double alpha = 1.0;
  std::uint64_t seed = 42;
  double tol_comparison = 1e-12;
  double tol_identity = 1e-10;
  double skorokhod_activity = 1e-12;
  double skorokhod_contact = 1e-9;
  double stability_slack = 1.05;
  double dirac_tol = 1e-6;
  double value_scale = 1.0;   // process draws land in [-scale, scale]
};

inline void validate_property_config(const PropertyConfig& cfg) {
  if (cfg.trials < 1) throw ValidationError("trials must be >= 1");
  if (cfg.depth_min < 1 || cfg.depth_max < cfg.depth_min)
    throw ValidationError("bad depth range");
  if (cfg.da_min < 0.0 || cfg.da_max < cfg.da_min) throw ValidationError("bad increment range");
  if (cfg.zero_da_prob < 0.0 || cfg.zero_da_prob > 1.0)
    throw ValidationError("zero increment probability outside [0,1]");
  if (cfg.lipschitz_max < 0.0) throw ValidationError("Lipschitz range must be >= 0");
  if (cfg.alpha <= 0.0) throw ValidationError("alpha must be positive");
  if (!(cfg.beta > 2.0 * cfg.lipschitz_max + 1.0 / cfg.alpha))
    throw ValidationError("stability precondition needs beta > 2L + 1/alpha");
}

struct PropertyReport {
  std::string check;
  int trials = 0;
  int skipped = 0;
  int failures = 0;
  double worst_violation = 0.0;
  std::uint64_t worst_seed = 0;
  std::string worst_digest;
};

// --- random instances -------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_process(std::uint64_t h, const AdaptedProcess& x) {
  for (int k = 0; k <= x.depth(); ++k)
    h = fnv1a(h, x.slice(k).data(), x.slice(k).size() * sizeof(double));
  return h;
}

inline std::string hex64(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[i] = digits[h & 0xf];
  return s;
}

}  // namespace detail

// One randomized test case on a full binary tree: a predictable driver with
// optional flat stretches, bounded node-valued processes, and a pair of
// nonincreasing generators g >= h with exact Lipschitz constant.
struct RandomInstance {
  LatticeModel model{1, 0.5, TreeStructure::FullBinary};
  MartingaleM m;
  Driver driver;
  AdaptedProcess xi;    // terminal slice is the terminal condition
  AdaptedProcess zeta;
  AdaptedProcess eta;
  Generator g = Generator::zero();
  Generator h = Generator::zero();
  double lipschitz = 0.0;
  std::uint64_t sub_seed = 0;
  bool contraction_ok = true;
  bool zeta_le_eta_on_sbar = true;
};

inline RandomInstance make_random_instance(const PropertyConfig& cfg, std::uint64_t sub_seed,
                                           bool force_game_hypothesis = false,
                                           bool nonnegative_values = false) {
  std::mt19937_64 rng(sub_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  RandomInstance inst;
  inst.sub_seed = sub_seed;
  const int depth = cfg.depth_min +
                    static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.depth_max - cfg.depth_min + 1));
  const double p = 0.2 + 0.6 * unit(rng);
  inst.model = LatticeModel(depth, p, TreeStructure::FullBinary);
  inst.m = standard_walk_martingale(inst.model);

  AdaptedProcess a(inst.model);
  for (int k = 0; k < depth; ++k) {
    for (int i = 0; i < inst.model.node_count(k); ++i) {
      double da = 0.0;
      if (unit(rng) >= cfg.zero_da_prob)
        da = cfg.da_min + (cfg.da_max - cfg.da_min) * unit(rng);
      const double next = a.at(k, i) + da;
      a.at(k + 1, inst.model.child_index(k, i, true)) = next;
      a.at(k + 1, inst.model.child_index(k, i, false)) = next;
    }
  }
  inst.driver = make_driver(inst.model, a);

  const double lo = nonnegative_values ? 0.0 : -cfg.value_scale;
  const double hi = nonnegative_values ? cfg.value_scale : cfg.value_scale;
  auto draw_process = [&]() {
    AdaptedProcess x(inst.model);
    for (int k = 0; k <= depth; ++k)
      for (int i = 0; i < inst.model.node_count(k); ++i) x.at(k, i) = lo + (hi - lo) * unit(rng);
    return x;
  };
  inst.xi = draw_process();
  inst.zeta = draw_process();
  inst.eta = draw_process();
  if (force_game_hypothesis) {
    for (int k = 0; k <= depth; ++k)
      for (int i = 0; i < inst.model.node_count(k); ++i)
        if (inst.driver.in_sbar(k, i) && inst.eta.at(k, i) < inst.zeta.at(k, i))
          inst.eta.at(k, i) = inst.zeta.at(k, i) + cfg.value_scale * unit(rng);
  }

  // g(k, i, y) = base(k, i) - slope(k, i) * clamp(y, -ylim, ylim): nonincreasing
  // in y with exact Lipschitz constant max(slope); h = g - drop with drop >= 0.
  auto base = std::make_shared<AdaptedProcess>(draw_process());
  auto drop = std::make_shared<AdaptedProcess>(inst.model);
  for (int k = 0; k <= depth; ++k)
    for (int i = 0; i < inst.model.node_count(k); ++i) drop->at(k, i) = cfg.value_scale * unit(rng);
  auto slope = std::make_shared<AdaptedProcess>(inst.model);
  double max_slope = 0.0;
  for (int k = 0; k <= depth; ++k)
    for (int i = 0; i < inst.model.node_count(k); ++i) {
      slope->at(k, i) = cfg.lipschitz_max * unit(rng);
      max_slope = std::max(max_slope, slope->at(k, i));
    }
  const double ylim = 8.0 * cfg.value_scale;
  auto clamp = [ylim](double y) { return std::min(std::max(y, -ylim), ylim); };
  inst.g = Generator::from_function(
      [base, slope, clamp](int k, int i, double y) {
        return base->at(k, i) - slope->at(k, i) * clamp(y);
      },
      max_slope, GenMonotone::NonIncreasingInY);
  inst.h = Generator::from_function(
      [base, slope, drop, clamp](int k, int i, double y) {
        return base->at(k, i) - drop->at(k, i) - slope->at(k, i) * clamp(y);
      },
      max_slope, GenMonotone::NonIncreasingInY);
  inst.lipschitz = max_slope;
  inst.contraction_ok = max_slope * inst.driver.max_delta() < 1.0;
  inst.zeta_le_eta_on_sbar = true;
  for (int k = 0; k <= depth && inst.zeta_le_eta_on_sbar; ++k)
    for (int i = 0; i < inst.model.node_count(k); ++i)
      if (inst.driver.in_sbar(k, i) && inst.zeta.at(k, i) > inst.eta.at(k, i)) {
        inst.zeta_le_eta_on_sbar = false;
        break;
      }
  return inst;
}

inline std::string instance_digest(const RandomInstance& inst) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = detail::fnv1a(h, &inst.sub_seed, sizeof inst.sub_seed);
  h = detail::hash_process(h, inst.driver.a());
  h = detail::hash_process(h, inst.xi);
  h = detail::hash_process(h, inst.zeta);
  h = detail::hash_process(h, inst.eta);
  return detail::hex64(h);
}

namespace detail {

inline void record_violation(PropertyReport& rep, double magnitude, const RandomInstance& inst) {
  rep.failures += 1;
  if (magnitude > rep.worst_violation) {
    rep.worst_violation = magnitude;
    rep.worst_seed = inst.sub_seed;
    rep.worst_digest = instance_digest(inst);
  }
}

// Offset a process downward by a fresh nonnegative amount.
inline AdaptedProcess lowered_copy(const AdaptedProcess& x, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AdaptedProcess out = x;
  for (int k = 0; k <= out.depth(); ++k)
    for (int i = 0; i < out.count(k); ++i) out.at(k, i) -= scale * unit(rng);
  return out;
}

}  // namespace detail

// Comparison property: g >= h pointwise, g nonincreasing, xi >= xi', and for
// the reflected variant zeta >= zeta'; the solutions must be ordered nodewise
// up to tol_comparison. Failures are report entries, never exceptions.
inline PropertyReport check_comparison(const PropertyConfig& cfg) {
  validate_property_config(cfg);
  PropertyReport rep;
  rep.check = "comparison";
  std::mt19937_64 master(cfg.seed);
  for (int t = 0; t < cfg.trials; ++t) {
    const std::uint64_t sub_seed = master();
    RandomInstance inst = make_random_instance(cfg, sub_seed);
    if (!inst.contraction_ok) {
      rep.skipped += 1;
      continue;
    }
    rep.trials += 1;
    std::mt19937_64 aux(sub_seed ^ 0x9e3779b97f4a7c15ULL);
    const AdaptedProcess xi_low = detail::lowered_copy(inst.xi, cfg.value_scale, aux);
    const AdaptedProcess zeta_low = detail::lowered_copy(inst.zeta, cfg.value_scale, aux);

    const GbsdeSolution upper =
        solve_backward(inst.model, inst.m, inst.driver, inst.g, inst.xi.terminal());
    const GbsdeSolution lower =
        solve_backward(inst.model, inst.m, inst.driver, inst.h, xi_low.terminal());
    const RgbsdeSolution upper_r =
        solve_reflected(inst.model, inst.m, inst.driver, inst.g, inst.zeta);
    const RgbsdeSolution lower_r =
        solve_reflected(inst.model, inst.m, inst.driver, inst.h, zeta_low);

    double worst = 0.0;
    for (int k = 0; k <= inst.model.depth(); ++k)
      for (int i = 0; i < inst.model.node_count(k); ++i) {
        worst = std::max(worst, lower.y.at(k, i) - upper.y.at(k, i));
        worst = std::max(worst, lower_r.y.at(k, i) - upper_r.y.at(k, i));
      }
    if (worst > cfg.tol_comparison) detail::record_violation(rep, worst, inst);
  }
  return rep;
}

// Weighted stability estimate: with e = exp(beta A) and beta > 2L + 1/alpha,
//   e_k |Y1_k - Y2_k|^2 <= E[e_N |xi1 - xi2|^2
//                            + alpha sum_{j>=k} e_j |g1(j,Y2_j)-g2(j,Y2_j)|^2 dA_j | F_k]
// must hold at every node with the configured multiplicative slack; the
// estimate is continuous-time, so small increments are required.
inline PropertyReport check_stability(const PropertyConfig& cfg) {
  validate_property_config(cfg);
  if (cfg.da_max > 0.02)
    throw ValidationError("stability check requires increment range <= 0.02");
  PropertyReport rep;
  rep.check = "stability";
  std::mt19937_64 master(cfg.seed);
  for (int t = 0; t < cfg.trials; ++t) {
    const std::uint64_t sub_seed = master();
    RandomInstance inst = make_random_instance(cfg, sub_seed);
    if (!inst.contraction_ok) {
      rep.skipped += 1;
      continue;
    }
    rep.trials += 1;
    std::mt19937_64 aux(sub_seed ^ 0xda3e39cb94b95bdbULL);
    const AdaptedProcess xi2 = detail::lowered_copy(inst.xi, cfg.value_scale, aux);

    const GbsdeSolution s1 =
        solve_backward(inst.model, inst.m, inst.driver, inst.g, inst.xi.terminal());
    const GbsdeSolution s2 =
        solve_backward(inst.model, inst.m, inst.driver, inst.h, xi2.terminal());

    const AdaptedProcess e = exp_weight(inst.driver, cfg.beta);
    const int depth = inst.model.depth();
    // rhs_k = E[e_N |xi_hat|^2 + alpha sum e_j |g_hat_j|^2 dA_j | F_k]
    AdaptedProcess rhs(inst.model);
    for (int i = 0; i < inst.model.node_count(depth); ++i) {
      const double d = inst.xi.terminal()[i] - xi2.terminal()[i];
      rhs.at(depth, i) = e.at(depth, i) * d * d;
    }
    for (int k = depth - 1; k >= 0; --k) {
      const std::vector<double> c = conditional_expectation(inst.model, rhs.slice(k + 1), k);
      for (int i = 0; i < inst.model.node_count(k); ++i) {
        const double y2 = s2.y.at(k, i);
        const double ghat = inst.g(k, i, y2) - inst.h(k, i, y2);
        rhs.at(k, i) = c[i] + cfg.alpha * e.at(k, i) * ghat * ghat * inst.driver.delta(k, i);
      }
    }
    double worst = 0.0;
    for (int k = 0; k <= depth; ++k)
      for (int i = 0; i < inst.model.node_count(k); ++i) {
        const double yhat = s1.y.at(k, i) - s2.y.at(k, i);
        const double lhs = e.at(k, i) * yhat * yhat;
        const double excess = lhs - cfg.stability_slack * rhs.at(k, i);
        worst = std::max(worst, excess);
      }
    if (worst > 1e-15) detail::record_violation(rep, worst, inst);
  }
  return rep;
}

// Dirac limit of the exponential quadrature: along every path, the weighted
// average of eta plus the terminal mass applied to xi converges to the value
// picked at the stop, with error bounded by max|values| * exp(-n dA_nu).
inline PropertyReport check_dirac(const PropertyConfig& cfg) {
  validate_property_config(cfg);
  PropertyReport rep;
  rep.check = "dirac";
  std::mt19937_64 master(cfg.seed);
  for (int t = 0; t < cfg.trials; ++t) {
    const std::uint64_t sub_seed = master();
    RandomInstance inst = make_random_instance(cfg, sub_seed, false, /*nonnegative_values=*/true);
    rep.trials += 1;

    // Random constrained stop: mark support nodes with probability 1/2.
    std::mt19937_64 aux(sub_seed ^ 0xc2b2ae3d27d4eb4fULL);
    StoppingRule nu = make_stopping_rule(inst.model, /*constrained=*/true);
    for (int k = 0; k < inst.model.depth(); ++k)
      for (std::uint64_t q = 0; q < (std::uint64_t{1} << k); ++q) {
        const int node = static_cast<int>(q);
        if (inst.driver.in_sbar(k, node) && (aux() & 1)) nu.stop[k][q] = 1;
      }
    validate_stopping_rule(inst.model, inst.driver, nu);

    const double min_da = inst.driver.min_delta_on_support();
    const bool has_support = std::isfinite(min_da);
    std::vector<double> errors;
    std::vector<double> levels;
    int j_max = 4;
    if (has_support) {
      j_max = 0;
      while ((double)(std::uint64_t{1} << j_max) * min_da < 40.0 && j_max < 26) ++j_max;
    }
    for (int j = 0; j <= j_max; ++j) {
      const double n = static_cast<double>(std::uint64_t{1} << j);
      double err = 0.0;
      for (std::uint64_t path = 0; path < inst.model.path_count(); ++path) {
        const int s = realized_stop(inst.model, nu, path);
        const ExpIntegralWeights w = exp_integral_weights(inst.model, inst.driver, n, s, path);
        double d = inst.xi.terminal()[inst.model.node_on_path(path, inst.model.depth())] *
                   w.terminal_mass;
        for (int k = s; k < inst.model.depth(); ++k)
          d += inst.eta.at(k, inst.model.node_on_path(path, k)) * w.weights[k - s];
        const double target = s == inst.model.depth()
                                  ? inst.xi.terminal()[inst.model.node_on_path(path, s)]
                                  : inst.eta.at(s, inst.model.node_on_path(path, s));
        err = std::max(err, std::abs(d - target));
      }
      errors.push_back(err);
      levels.push_back(n);
      if (has_support && n * min_da >= 20.0 && err > cfg.dirac_tol)
        detail::record_violation(rep, err, inst);
    }
    // Exponential decay between consecutive doubling levels, checked while the
    // error sits above float noise; the expected factor is exp(-n min_da).
    if (has_support) {
      for (std::size_t j = 0; j + 1 < errors.size(); ++j) {
        if (errors[j] < 1e-13 || errors[j + 1] < 1e-13) continue;
        if (levels[j] * min_da < 1.0) continue;
        const double allowed = std::exp(-0.5 * levels[j] * min_da);
        if (errors[j + 1] > errors[j] * allowed)
          detail::record_violation(rep, errors[j + 1] / errors[j] - allowed, inst);
      }
    }
  }
  return rep;
}

// Path identities and the discrete Skorokhod conditions over random
// instances, for generic generators and both penalty forms.
inline PropertyReport check_identities(const PropertyConfig& cfg) {
  validate_property_config(cfg);
  PropertyReport rep;
  rep.check = "identities";
  std::mt19937_64 master(cfg.seed);
  for (int t = 0; t < cfg.trials; ++t) {
    const std::uint64_t sub_seed = master();
    RandomInstance inst = make_random_instance(cfg, sub_seed);
    if (!inst.contraction_ok) {
      rep.skipped += 1;
      continue;
    }
    rep.trials += 1;

    const GbsdeSolution plain =
        solve_backward(inst.model, inst.m, inst.driver, inst.g, inst.xi.terminal());
    const RgbsdeSolution refl =
        solve_reflected(inst.model, inst.m, inst.driver, inst.g, inst.zeta);
    const RgbsdeSolution pen = solve_reflected(inst.model, inst.m, inst.driver,
                                               Generator::penalty_up(16.0, inst.eta), inst.zeta);

    double worst = std::max(plain.residual, std::max(refl.residual, pen.residual));
    if (worst > cfg.tol_identity) detail::record_violation(rep, worst, inst);

    for (const RgbsdeSolution* sol : {&refl, &pen}) {
      for (int k = 0; k < inst.model.depth(); ++k)
        for (int i = 0; i < inst.model.node_count(k); ++i) {
          const double dk = sol->k_inc.at(k, i);
          if (dk < 0.0) detail::record_violation(rep, -dk, inst);
          if (dk > cfg.skorokhod_activity &&
              std::abs(sol->y.at(k, i) - inst.zeta.at(k, i)) > cfg.skorokhod_contact)
            detail::record_violation(rep, std::abs(sol->y.at(k, i) - inst.zeta.at(k, i)), inst);
        }
      for (int k = 0; k <= inst.model.depth(); ++k)
        for (int i = 0; i < inst.model.node_count(k); ++i)
          if (sol->y.at(k, i) < inst.zeta.at(k, i))
            detail::record_violation(rep, inst.zeta.at(k, i) - sol->y.at(k, i), inst);
    }
  }
  return rep;
}

}  // namespace gbsde
