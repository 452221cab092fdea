#pragma once

// Batch experiment runner: a strict JSON config describes the lattice,
// driver, processes, generator and the requested command; outputs are
// deterministic CSV files (shortest round-trip decimal rendering) plus a
// short human summary. Exit codes: 0 success, 1 verification failures,
// 2 validation error, 3 solver infeasibility.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gbsde/limits.hpp"
#include "gbsde/verify.hpp"

namespace gbsde {

using nlohmann::json;

// --- strict parsing helpers -------------------------------------------------

namespace cfgdetail {

inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw ValidationError("unknown key '" + it.key() + "' in config section '" + where + "'");
  }
}

template <typename T>
T require(const json& j, const std::string& where, const char* key) {
  if (!j.contains(key))
    throw ValidationError("missing key '" + std::string(key) + "' in config section '" + where + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("key '" + std::string(key) + "' in section '" + where + "' has the wrong type");
  }
}

template <typename T>
T optional_value(const json& j, const std::string& where, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("key '" + std::string(key) + "' in section '" + where + "' has the wrong type");
  }
}

}  // namespace cfgdetail

// --- config model -------------------------------------------------------------

struct LatticeSpec {
  int depth = 1;
  double up_prob = 0.5;
  std::string structure = "recombining";  // or "full_binary"
};

struct DriverSpec {
  std::string kind;  // array | table | ramp_driver | zero
  std::vector<double> array;
  std::vector<std::vector<double>> table;
  double total = 1.0;  // ramp_driver preset
};

struct ProcessSpec {
  bool present = false;
  std::string kind;  // constant | table | walk_terminal
  double value = 0.0;
  std::vector<std::vector<double>> table;
};

struct GeneratorSpec {
  bool present = false;
  std::string kind = "zero";  // zero | constant | linear_decay | penalty_up | penalty_down
  double value = 0.0;         // constant
  double base = 0.0;          // linear_decay: g(y) = base - slope*y
  double slope = 0.0;
  double n = 0.0;  // penalty level
};

struct SolveSpec {
  bool present = false;
  double tol = 1e-12;
  bool reflected = false;
};

struct PenalizeSpec {
  bool present = false;
  std::string kind;  // gbsde_up | reflected_up | reflected_down
  std::vector<double> n_values;
};

struct OracleSpec {
  bool present = false;
  std::string kind;  // constrained_snell | snell_of_gamma | dynkin
  bool brute_force = false;
};

struct VerifySpec {
  bool present = false;
  PropertyConfig cfg;
  bool seed_given = false;
};

struct ExperimentConfig {
  LatticeSpec lattice;
  DriverSpec driver;
  ProcessSpec terminal;   // xi
  ProcessSpec obstacle;   // zeta
  ProcessSpec barrier;    // eta
  GeneratorSpec generator;
  SolveSpec solve;
  PenalizeSpec penalize;
  OracleSpec oracle;
  VerifySpec verify;
  std::uint64_t seed = 42;
  std::string out_dir = "out";
};

inline ProcessSpec parse_process(const json& j, const std::string& where) {
  cfgdetail::check_keys(j, where, {"kind", "value", "values"});
  ProcessSpec p;
  p.present = true;
  p.kind = cfgdetail::require<std::string>(j, where, "kind");
  if (p.kind == "constant") {
    p.value = cfgdetail::require<double>(j, where, "value");
  } else if (p.kind == "table") {
    p.table = cfgdetail::require<std::vector<std::vector<double>>>(j, where, "values");
  } else if (p.kind == "walk_terminal") {
    // no parameters
  } else {
    throw ValidationError("unknown process kind '" + p.kind + "' in section '" + where + "'");
  }
  return p;
}

inline json process_to_json(const ProcessSpec& p) {
  json j;
  j["kind"] = p.kind;
  if (p.kind == "constant") j["value"] = p.value;
  if (p.kind == "table") j["values"] = p.table;
  return j;
}

inline ExperimentConfig parse_config(const json& root) {
  cfgdetail::check_keys(root, "(root)",
                        {"lattice", "driver", "terminal", "obstacle", "barrier", "generator",
                         "solve", "penalize", "oracle", "verify", "seed", "output"});
  ExperimentConfig cfg;

  {
    const json& j = root.contains("lattice") ? root.at("lattice") : json::object();
    if (!root.contains("lattice")) throw ValidationError("config needs a 'lattice' section");
    cfgdetail::check_keys(j, "lattice", {"depth", "up_prob", "structure"});
    cfg.lattice.depth = cfgdetail::require<int>(j, "lattice", "depth");
    cfg.lattice.up_prob = cfgdetail::require<double>(j, "lattice", "up_prob");
    cfg.lattice.structure = cfgdetail::optional_value<std::string>(j, "lattice", "structure", "recombining");
    if (cfg.lattice.structure != "recombining" && cfg.lattice.structure != "full_binary")
      throw ValidationError("lattice structure must be 'recombining' or 'full_binary'");
  }

  if (root.contains("driver")) {
    const json& j = root.at("driver");
    cfgdetail::check_keys(j, "driver", {"kind", "values", "total"});
    cfg.driver.kind = cfgdetail::require<std::string>(j, "driver", "kind");
    if (cfg.driver.kind == "array") {
      cfg.driver.array = cfgdetail::require<std::vector<double>>(j, "driver", "values");
    } else if (cfg.driver.kind == "table") {
      cfg.driver.table = cfgdetail::require<std::vector<std::vector<double>>>(j, "driver", "values");
    } else if (cfg.driver.kind == "ramp_driver") {
      cfg.driver.total = cfgdetail::optional_value<double>(j, "driver", "total", 1.0);
    } else if (cfg.driver.kind == "zero") {
      // no parameters
    } else {
      throw ValidationError("unknown driver kind '" + cfg.driver.kind + "'");
    }
  } else {
    cfg.driver.kind = "zero";
  }

  if (root.contains("terminal")) cfg.terminal = parse_process(root.at("terminal"), "terminal");
  if (root.contains("obstacle")) cfg.obstacle = parse_process(root.at("obstacle"), "obstacle");
  if (root.contains("barrier")) cfg.barrier = parse_process(root.at("barrier"), "barrier");

  if (root.contains("generator")) {
    const json& j = root.at("generator");
    cfgdetail::check_keys(j, "generator", {"kind", "value", "base", "slope", "n"});
    cfg.generator.present = true;
    cfg.generator.kind = cfgdetail::require<std::string>(j, "generator", "kind");
    if (cfg.generator.kind == "constant") {
      cfg.generator.value = cfgdetail::require<double>(j, "generator", "value");
    } else if (cfg.generator.kind == "linear_decay") {
      cfg.generator.base = cfgdetail::optional_value<double>(j, "generator", "base", 0.0);
      cfg.generator.slope = cfgdetail::require<double>(j, "generator", "slope");
      if (cfg.generator.slope < 0.0) throw ValidationError("linear_decay slope must be >= 0");
    } else if (cfg.generator.kind == "penalty_up" || cfg.generator.kind == "penalty_down") {
      cfg.generator.n = cfgdetail::require<double>(j, "generator", "n");
    } else if (cfg.generator.kind != "zero") {
      throw ValidationError("unknown generator kind '" + cfg.generator.kind + "'");
    }
  }

  if (root.contains("solve")) {
    const json& j = root.at("solve");
    cfgdetail::check_keys(j, "solve", {"tol", "reflected"});
    cfg.solve.present = true;
    cfg.solve.tol = cfgdetail::optional_value<double>(j, "solve", "tol", 1e-12);
    cfg.solve.reflected = cfgdetail::optional_value<bool>(j, "solve", "reflected", false);
  }

  if (root.contains("penalize")) {
    const json& j = root.at("penalize");
    cfgdetail::check_keys(j, "penalize", {"kind", "n_values", "n_pow2_max"});
    cfg.penalize.present = true;
    cfg.penalize.kind = cfgdetail::require<std::string>(j, "penalize", "kind");
    if (cfg.penalize.kind != "gbsde_up" && cfg.penalize.kind != "reflected_up" &&
        cfg.penalize.kind != "reflected_down")
      throw ValidationError("penalize kind must be gbsde_up, reflected_up or reflected_down");
    if (j.contains("n_values")) {
      cfg.penalize.n_values = cfgdetail::require<std::vector<double>>(j, "penalize", "n_values");
    } else {
      cfg.penalize.n_values =
          default_penalty_levels(cfgdetail::optional_value<int>(j, "penalize", "n_pow2_max", 14));
    }
  }

  if (root.contains("oracle")) {
    const json& j = root.at("oracle");
    cfgdetail::check_keys(j, "oracle", {"kind", "brute_force"});
    cfg.oracle.present = true;
    cfg.oracle.kind = cfgdetail::require<std::string>(j, "oracle", "kind");
    if (cfg.oracle.kind != "constrained_snell" && cfg.oracle.kind != "snell_of_gamma" &&
        cfg.oracle.kind != "dynkin")
      throw ValidationError("oracle kind must be constrained_snell, snell_of_gamma or dynkin");
    cfg.oracle.brute_force = cfgdetail::optional_value<bool>(j, "oracle", "brute_force", false);
  }

  cfg.seed = cfgdetail::optional_value<std::uint64_t>(root, "(root)", "seed", 42);

  if (root.contains("verify")) {
    const json& j = root.at("verify");
    cfgdetail::check_keys(j, "verify",
                          {"trials", "depth_min", "depth_max", "da_min", "da_max", "zero_da_prob",
                           "lipschitz_max", "beta", "alpha", "seed", "tol_comparison", "tol_identity",
                           "skorokhod_activity", "skorokhod_contact", "stability_slack", "dirac_tol",
                           "value_scale"});
    cfg.verify.present = true;
    PropertyConfig& p = cfg.verify.cfg;
    p.trials = cfgdetail::optional_value<int>(j, "verify", "trials", p.trials);
    p.depth_min = cfgdetail::optional_value<int>(j, "verify", "depth_min", p.depth_min);
    p.depth_max = cfgdetail::optional_value<int>(j, "verify", "depth_max", p.depth_max);
    p.da_min = cfgdetail::optional_value<double>(j, "verify", "da_min", p.da_min);
    p.da_max = cfgdetail::optional_value<double>(j, "verify", "da_max", p.da_max);
    p.zero_da_prob = cfgdetail::optional_value<double>(j, "verify", "zero_da_prob", p.zero_da_prob);
    p.lipschitz_max = cfgdetail::optional_value<double>(j, "verify", "lipschitz_max", p.lipschitz_max);
    p.beta = cfgdetail::optional_value<double>(j, "verify", "beta", p.beta);
    p.alpha = cfgdetail::optional_value<double>(j, "verify", "alpha", p.alpha);
    cfg.verify.seed_given = j.contains("seed");
    p.seed = cfgdetail::optional_value<std::uint64_t>(j, "verify", "seed", cfg.seed);
    p.tol_comparison = cfgdetail::optional_value<double>(j, "verify", "tol_comparison", p.tol_comparison);
    p.tol_identity = cfgdetail::optional_value<double>(j, "verify", "tol_identity", p.tol_identity);
    p.skorokhod_activity =
        cfgdetail::optional_value<double>(j, "verify", "skorokhod_activity", p.skorokhod_activity);
    p.skorokhod_contact =
        cfgdetail::optional_value<double>(j, "verify", "skorokhod_contact", p.skorokhod_contact);
    p.stability_slack = cfgdetail::optional_value<double>(j, "verify", "stability_slack", p.stability_slack);
    p.dirac_tol = cfgdetail::optional_value<double>(j, "verify", "dirac_tol", p.dirac_tol);
    p.value_scale = cfgdetail::optional_value<double>(j, "verify", "value_scale", p.value_scale);
    if (!cfg.verify.seed_given) p.seed = cfg.seed;
  }

  if (root.contains("output")) {
    const json& j = root.at("output");
    cfgdetail::check_keys(j, "output", {"dir"});
    cfg.out_dir = cfgdetail::optional_value<std::string>(j, "output", "dir", "out");
  }

  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(root);
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json root;
  root["lattice"] = {{"depth", cfg.lattice.depth},
                     {"up_prob", cfg.lattice.up_prob},
                     {"structure", cfg.lattice.structure}};
  {
    json d;
    d["kind"] = cfg.driver.kind;
    if (cfg.driver.kind == "array") d["values"] = cfg.driver.array;
    if (cfg.driver.kind == "table") d["values"] = cfg.driver.table;
    if (cfg.driver.kind == "ramp_driver") d["total"] = cfg.driver.total;
    root["driver"] = d;
  }
  if (cfg.terminal.present) root["terminal"] = process_to_json(cfg.terminal);
  if (cfg.obstacle.present) root["obstacle"] = process_to_json(cfg.obstacle);
  if (cfg.barrier.present) root["barrier"] = process_to_json(cfg.barrier);
  if (cfg.generator.present) {
    json g;
    g["kind"] = cfg.generator.kind;
    if (cfg.generator.kind == "constant") g["value"] = cfg.generator.value;
    if (cfg.generator.kind == "linear_decay") {
      g["base"] = cfg.generator.base;
      g["slope"] = cfg.generator.slope;
    }
    if (cfg.generator.kind == "penalty_up" || cfg.generator.kind == "penalty_down")
      g["n"] = cfg.generator.n;
    root["generator"] = g;
  }
  if (cfg.solve.present) root["solve"] = {{"tol", cfg.solve.tol}, {"reflected", cfg.solve.reflected}};
  if (cfg.penalize.present)
    root["penalize"] = {{"kind", cfg.penalize.kind}, {"n_values", cfg.penalize.n_values}};
  if (cfg.oracle.present)
    root["oracle"] = {{"kind", cfg.oracle.kind}, {"brute_force", cfg.oracle.brute_force}};
  if (cfg.verify.present) {
    const PropertyConfig& p = cfg.verify.cfg;
    root["verify"] = {{"trials", p.trials},
                      {"depth_min", p.depth_min},
                      {"depth_max", p.depth_max},
                      {"da_min", p.da_min},
                      {"da_max", p.da_max},
                      {"zero_da_prob", p.zero_da_prob},
                      {"lipschitz_max", p.lipschitz_max},
                      {"beta", p.beta},
                      {"alpha", p.alpha},
                      {"seed", p.seed},
                      {"tol_comparison", p.tol_comparison},
                      {"tol_identity", p.tol_identity},
                      {"skorokhod_activity", p.skorokhod_activity},
                      {"skorokhod_contact", p.skorokhod_contact},
                      {"stability_slack", p.stability_slack},
                      {"dirac_tol", p.dirac_tol},
                      {"value_scale", p.value_scale}};
  }
  root["seed"] = cfg.seed;
  root["output"] = {{"dir", cfg.out_dir}};
  return root;
}

// --- realization -------------------------------------------------------------

inline LatticeModel realize_lattice(const ExperimentConfig& cfg) {
  return LatticeModel(cfg.lattice.depth, cfg.lattice.up_prob,
                      cfg.lattice.structure == "full_binary" ? TreeStructure::FullBinary
                                                             : TreeStructure::Recombining);
}

inline AdaptedProcess table_process(const LatticeModel& model,
                                    const std::vector<std::vector<double>>& table,
                                    const std::string& what) {
  if (static_cast<int>(table.size()) != model.depth() + 1)
    throw ValidationError(what + " table must have depth+1 rows");
  AdaptedProcess x(model);
  for (int k = 0; k <= model.depth(); ++k) {
    if (static_cast<int>(table[k].size()) != model.node_count(k))
      throw ValidationError(what + " table row " + std::to_string(k) + " has wrong width");
    x.slice(k) = table[k];
  }
  return x;
}

inline Driver realize_driver(const ExperimentConfig& cfg, const LatticeModel& model) {
  AdaptedProcess a(model);
  if (cfg.driver.kind == "zero") {
    // all zeros
  } else if (cfg.driver.kind == "array") {
    if (static_cast<int>(cfg.driver.array.size()) != model.depth() + 1)
      throw ValidationError("driver array must have depth+1 entries");
    for (int k = 0; k <= model.depth(); ++k)
      for (int i = 0; i < model.node_count(k); ++i) a.at(k, i) = cfg.driver.array[k];
  } else if (cfg.driver.kind == "ramp_driver") {
    for (int k = 0; k <= model.depth(); ++k)
      for (int i = 0; i < model.node_count(k); ++i)
        a.at(k, i) = cfg.driver.total * static_cast<double>(k) / model.depth();
  } else if (cfg.driver.kind == "table") {
    a = table_process(model, cfg.driver.table, "driver");
  }
  return make_driver(model, a);
}

inline AdaptedProcess realize_process(const ProcessSpec& spec, const LatticeModel& model,
                                      const MartingaleM& m, const std::string& what) {
  if (!spec.present) throw ValidationError("config needs a '" + what + "' section");
  if (spec.kind == "constant") return AdaptedProcess::constant(model, spec.value);
  if (spec.kind == "walk_terminal") return m.values;
  return table_process(model, spec.table, what);
}

inline Generator realize_generator(const ExperimentConfig& cfg, const LatticeModel& model,
                                   const MartingaleM& m) {
  const GeneratorSpec& g = cfg.generator;
  if (!g.present || g.kind == "zero") return Generator::zero();
  if (g.kind == "constant") return Generator::constant_rate(g.value);
  if (g.kind == "linear_decay") {
    const double base = g.base, slope = g.slope;
    return Generator::from_function([base, slope](int, int, double y) { return base - slope * y; },
                                    slope, GenMonotone::NonIncreasingInY);
  }
  AdaptedProcess eta = realize_process(cfg.barrier, model, m, "barrier");
  if (g.kind == "penalty_up") return Generator::penalty_up(g.n, std::move(eta));
  return Generator::penalty_down(g.n, std::move(eta));
}

// --- CSV rendering -----------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_bool(bool b) { return b ? "true" : "false"; }

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open output file " + path.string());
  out << content;
  if (!out) throw ValidationError("failed writing output file " + path.string());
}

// --- commands ---------------------------------------------------------------

struct CommandOutput {
  int exit_code = 0;
  std::vector<std::filesystem::path> files;
};

template <typename Fn>
int run_guarded(std::ostream& diag, const char* cmd, Fn&& fn) {
  try {
    return fn();
  } catch (const SchemeInfeasibleError& e) {
    diag << "gbsdelab: exit=3 cmd=" << cmd << " reason=" << e.what() << "\n";
    return 3;
  } catch (const NonConvergenceError& e) {
    diag << "gbsdelab: exit=3 cmd=" << cmd << " reason=" << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    diag << "gbsdelab: exit=2 cmd=" << cmd << " reason=" << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    diag << "gbsdelab: exit=2 cmd=" << cmd << " reason=" << e.what() << "\n";
    return 2;
  }
}

// solve | reflect: per-node CSV (step, node_index, Y, Z, dK, dA, in_right_support).
// Z, dK, dA and the support flag are empty on terminal rows; dK is empty for
// unreflected solves.
inline int cmd_solve(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                     bool force_reflected, std::ostream& diag, std::ostream* info) {
  return run_guarded(diag, force_reflected ? "reflect" : "solve", [&]() {
    const LatticeModel model = realize_lattice(cfg);
    const MartingaleM m = standard_walk_martingale(model);
    const Driver driver = realize_driver(cfg, model);
    const Generator gen = realize_generator(cfg, model, m);
    const double tol = cfg.solve.present ? cfg.solve.tol : 1e-12;
    const bool reflected = force_reflected || (cfg.solve.present && cfg.solve.reflected);

    AdaptedProcess y, z, k_inc;
    double residual = 0.0;
    if (reflected) {
      const AdaptedProcess zeta = realize_process(cfg.obstacle, model, m, "obstacle");
      RgbsdeSolution sol = solve_reflected(model, m, driver, gen, zeta, tol);
      y = std::move(sol.y);
      z = std::move(sol.z);
      k_inc = std::move(sol.k_inc);
      residual = sol.residual;
    } else {
      const AdaptedProcess xi = realize_process(cfg.terminal, model, m, "terminal");
      GbsdeSolution sol = solve_backward(model, m, driver, gen, xi.terminal(), tol);
      y = std::move(sol.y);
      z = std::move(sol.z);
      residual = sol.residual;
    }

    std::string csv = "step,node_index,Y,Z,dK,dA,in_right_support\n";
    for (int k = 0; k <= model.depth(); ++k) {
      for (int i = 0; i < model.node_count(k); ++i) {
        csv += std::to_string(k) + "," + std::to_string(i) + "," + format_double(y.at(k, i)) + ",";
        if (k < model.depth()) {
          csv += format_double(z.at(k, i));
          csv += ",";
          if (reflected) csv += format_double(k_inc.at(k, i));
          csv += "," + format_double(driver.delta(k, i)) + "," +
                 format_bool(driver.in_right_support(k, i));
        } else {
          csv += ",,,";
        }
        csv += "\n";
      }
    }
    const auto path = out_dir / (force_reflected || reflected ? "reflect.csv" : "solve.csv");
    std::filesystem::create_directories(out_dir);
    write_text_file(path, csv);
    if (info)
      *info << (reflected ? "reflect" : "solve") << ": wrote " << path.string() << " (root Y = "
            << format_double(y.at(0, 0)) << ", residual = " << format_double(residual) << ")\n";
    return 0;
  });
}

// penalize: per-level CSV (n, sup_error, monotone_ok, root_value,
// oracle_root_value[, terminal_mode_matched]).
inline int cmd_penalize(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                        std::ostream& diag, std::ostream* info) {
  return run_guarded(diag, "penalize", [&]() {
    if (!cfg.penalize.present) throw ValidationError("config needs a 'penalize' section");
    const LatticeModel model = realize_lattice(cfg);
    const MartingaleM m = standard_walk_martingale(model);
    const Driver driver = realize_driver(cfg, model);
    const AdaptedProcess eta = realize_process(cfg.barrier, model, m, "barrier");

    PenalizationReport rep;
    const std::string& kind = cfg.penalize.kind;
    if (kind == "gbsde_up") {
      const AdaptedProcess xi = realize_process(cfg.terminal, model, m, "terminal");
      rep = ladder_gbsde(model, m, driver, xi.terminal(), eta, cfg.penalize.n_values);
    } else if (kind == "reflected_up") {
      const AdaptedProcess zeta = realize_process(cfg.obstacle, model, m, "obstacle");
      rep = ladder_reflected_up(model, m, driver, zeta, eta, cfg.penalize.n_values);
    } else {
      const AdaptedProcess zeta = realize_process(cfg.obstacle, model, m, "obstacle");
      rep = ladder_reflected_down(model, m, driver, make_game_spec(model, zeta, eta),
                                  cfg.penalize.n_values);
    }

    const bool down = kind == "reflected_down";
    std::string csv = "n,sup_error,monotone_ok,root_value,oracle_root_value";
    if (down) csv += ",terminal_mode_matched";
    csv += "\n";
    for (std::size_t i = 0; i < rep.n_values.size(); ++i) {
      bool row_monotone = true;
      if (i > 0) {
        row_monotone = down ? detail::dominates(rep.y_by_n[i - 1], rep.y_by_n[i], 1e-12)
                            : detail::dominates(rep.y_by_n[i], rep.y_by_n[i - 1], 1e-12);
      }
      csv += format_double(rep.n_values[i]) + "," + format_double(rep.sup_errors[i]) + "," +
             format_bool(row_monotone) + "," + format_double(rep.y_by_n[i].at(0, 0)) + "," +
             format_double(rep.oracle.at(0, 0));
      if (down) csv += "," + rep.terminal_mode_matched;
      csv += "\n";
    }
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / "penalize.csv";
    write_text_file(path, csv);
    if (info) {
      *info << "penalize(" << kind << "): wrote " << path.string() << " (final sup_error = "
            << format_double(rep.sup_errors.back()) << ", monotone_ok = "
            << format_bool(rep.monotone_ok);
      if (down) *info << ", terminal_mode = " << rep.terminal_mode_matched;
      *info << ")\n";
    }
    return 0;
  });
}

// oracle: per-node CSV (step, node_index, value_backward, value_bruteforce,
// equal_flag); for the dynkin kind one CSV per terminal mode, with the
// brute-force column holding the inf-sup value and equal_flag also requiring
// inf-sup = sup-inf. Brute-force columns stay empty when not requested.
inline int cmd_oracle(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                      std::ostream& diag, std::ostream* info) {
  return run_guarded(diag, "oracle", [&]() {
    if (!cfg.oracle.present) throw ValidationError("config needs an 'oracle' section");
    const LatticeModel model = realize_lattice(cfg);
    const MartingaleM m = standard_walk_martingale(model);
    const Driver driver = realize_driver(cfg, model);

    struct Sheet {
      std::string name;
      AdaptedProcess backward;                  // lattice indexed
      std::optional<AdaptedProcess> brute;      // expansion indexed
      std::optional<AdaptedProcess> brute_alt;  // dynkin sup-inf
    };
    std::vector<Sheet> sheets;

    if (cfg.oracle.kind == "constrained_snell") {
      const AdaptedProcess xi = realize_process(cfg.terminal, model, m, "terminal");
      const AdaptedProcess eta = realize_process(cfg.barrier, model, m, "barrier");
      Sheet s;
      s.name = "oracle_constrained_snell";
      s.backward = constrained_snell(model, driver, xi.terminal(), eta);
      if (cfg.oracle.brute_force) {
        AdaptedProcess reward = eta;
        reward.slice(model.depth()) = xi.terminal();
        s.brute = brute_force_optimal_stop(model, driver, reward, /*constrained=*/true);
      }
      sheets.push_back(std::move(s));
    } else if (cfg.oracle.kind == "snell_of_gamma") {
      const AdaptedProcess zeta = realize_process(cfg.obstacle, model, m, "obstacle");
      const AdaptedProcess eta = realize_process(cfg.barrier, model, m, "barrier");
      Sheet s;
      s.name = "oracle_snell_of_gamma";
      s.backward = snell_of_gamma(model, driver, zeta, eta);
      if (cfg.oracle.brute_force)
        s.brute = brute_force_optimal_stop(model, driver, make_gamma(model, driver, zeta, eta),
                                           /*constrained=*/false);
      sheets.push_back(std::move(s));
    } else {
      const AdaptedProcess zeta = realize_process(cfg.obstacle, model, m, "obstacle");
      const AdaptedProcess eta = realize_process(cfg.barrier, model, m, "barrier");
      const GameSpec spec = make_game_spec(model, zeta, eta);
      for (TerminalMode mode : {TerminalMode::ZetaT, TerminalMode::ZetaOrEtaT}) {
        Sheet s;
        s.name = "oracle_dynkin_" + terminal_mode_name(mode);
        s.backward = dynkin_value(model, driver, spec, mode);
        if (cfg.oracle.brute_force) {
          DynkinBruteForce bf = brute_force_dynkin(model, driver, spec, mode);
          s.brute = std::move(bf.infsup);
          s.brute_alt = std::move(bf.supinf);
        }
        sheets.push_back(std::move(s));
      }
    }

    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;
    for (const Sheet& s : sheets) {
      std::string csv = "step,node_index,value_backward,value_bruteforce,equal_flag\n";
      for (int k = 0; k <= model.depth(); ++k) {
        for (int i = 0; i < model.node_count(k); ++i) {
          csv += std::to_string(k) + "," + std::to_string(i) + "," +
                 format_double(s.backward.at(k, i)) + ",";
          if (s.brute) {
            // All expansion nodes mapping onto this lattice node must agree.
            double bf = 0.0;
            bool equal = true;
            bool first = true;
            for (std::uint64_t q = 0; q < (std::uint64_t{1} << k); ++q) {
              const int node = model.structure() == TreeStructure::FullBinary
                                   ? static_cast<int>(q)
                                   : std::popcount(q);
              if (node != i) continue;
              const double v = s.brute->at(k, static_cast<int>(q));
              if (first) bf = v;
              first = false;
              if (std::abs(v - s.backward.at(k, i)) > 1e-12) equal = false;
              if (s.brute_alt && std::abs(s.brute_alt->at(k, static_cast<int>(q)) - v) > 1e-12)
                equal = false;
            }
            csv += format_double(bf) + "," + format_bool(equal);
          } else {
            csv += ",";
          }
          csv += "\n";
        }
      }
      const auto path = out_dir / (s.name + ".csv");
      write_text_file(path, csv);
      written.push_back(path.string());
    }
    if (info) {
      *info << "oracle(" << cfg.oracle.kind << "): wrote";
      for (const auto& w : written) *info << " " << w;
      *info << "\n";
    }
    return 0;
  });
}

// verify: runs the four property checks; CSV (name, trials, failures,
// worst_violation, seed); exit 0 iff no failures, 1 otherwise.
inline int cmd_verify(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                      std::ostream& diag, std::ostream* info) {
  return run_guarded(diag, "verify", [&]() {
    if (!cfg.verify.present) throw ValidationError("config needs a 'verify' section");
    const PropertyConfig& p = cfg.verify.cfg;
    validate_property_config(p);

    std::vector<PropertyReport> reports;
    reports.push_back(check_comparison(p));
    reports.push_back(check_stability(p));
    reports.push_back(check_dirac(p));
    reports.push_back(check_identities(p));

    std::string csv = "name,trials,failures,worst_violation,seed\n";
    int total_failures = 0;
    for (const PropertyReport& r : reports) {
      csv += r.check + "," + std::to_string(r.trials) + "," + std::to_string(r.failures) + "," +
             format_double(r.worst_violation) + "," + std::to_string(p.seed) + "\n";
      total_failures += r.failures;
    }
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / "verify_checks.csv";
    write_text_file(path, csv);
    if (info) {
      *info << "verify: wrote " << path.string() << "\n";
      for (const PropertyReport& r : reports) {
        *info << "  " << r.check << ": trials=" << r.trials << " skipped=" << r.skipped
              << " failures=" << r.failures << " worst=" << format_double(r.worst_violation);
        if (r.failures > 0) *info << " seed=" << r.worst_seed << " digest=" << r.worst_digest;
        *info << "\n";
      }
    }
    return total_failures == 0 ? 0 : 1;
  });
}

// report: run every section present in the config and write a one-page summary.
inline int cmd_report(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                      std::ostream& diag, std::ostream* info) {
  std::filesystem::create_directories(out_dir);
  std::ostringstream summary;
  int worst = 0;
  auto note = [&](const char* name, int code) {
    summary << name << ": exit " << code << "\n";
    worst = std::max(worst, code);
  };
  if (cfg.solve.present || cfg.generator.present) note("solve", cmd_solve(cfg, out_dir, false, diag, info));
  if (cfg.penalize.present) note("penalize", cmd_penalize(cfg, out_dir, diag, info));
  if (cfg.oracle.present) note("oracle", cmd_oracle(cfg, out_dir, diag, info));
  if (cfg.verify.present) note("verify", cmd_verify(cfg, out_dir, diag, info));
  write_text_file(out_dir / "report_summary.txt", summary.str());
  if (info) *info << "report: wrote " << (out_dir / "report_summary.txt").string() << "\n";
  return worst;
}

}  // namespace gbsde
