// Command line runner around the experiment module.
//
//   gbsdelab <solve|reflect|penalize|oracle|verify|report> --config cfg.json
//            [--out DIR] [--seed INT] [--quiet]

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "gbsde/experiment.hpp"

namespace {

struct Options {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  bool seed_given = false;
  bool quiet = false;
};

int load_and_run(const Options& opt, const std::string& command) {
  std::ifstream in(opt.config_path);
  if (!in) {
    std::cerr << "gbsdelab: exit=2 cmd=" << command << " reason=cannot read config file "
              << opt.config_path << "\n";
    return 2;
  }
  std::stringstream buffer;
  buffer << in.rdbuf();

  gbsde::ExperimentConfig cfg;
  try {
    cfg = gbsde::parse_config_text(buffer.str());
  } catch (const gbsde::ValidationError& e) {
    std::cerr << "gbsdelab: exit=2 cmd=" << command << " reason=" << e.what() << "\n";
    return 2;
  }
  if (opt.seed_given) {
    cfg.seed = static_cast<std::uint64_t>(opt.seed);
    cfg.verify.cfg.seed = cfg.seed;
  }
  const std::filesystem::path out_dir = opt.out_dir.empty() ? cfg.out_dir : opt.out_dir;
  std::ostream* info = opt.quiet ? nullptr : &std::cout;

  if (command == "solve") return gbsde::cmd_solve(cfg, out_dir, false, std::cerr, info);
  if (command == "reflect") return gbsde::cmd_solve(cfg, out_dir, true, std::cerr, info);
  if (command == "penalize") return gbsde::cmd_penalize(cfg, out_dir, std::cerr, info);
  if (command == "oracle") return gbsde::cmd_oracle(cfg, out_dir, std::cerr, info);
  if (command == "verify") return gbsde::cmd_verify(cfg, out_dir, std::cerr, info);
  return gbsde::cmd_report(cfg, out_dir, std::cerr, info);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lattice laboratory for driver-weighted backward equations"};
  app.require_subcommand(1);

  Options opt;
  for (const char* name : {"solve", "reflect", "penalize", "oracle", "verify", "report"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", opt.out_dir, "output directory (overrides config)");
    sub->add_option("--seed", opt.seed, "seed override")->each([&opt](const std::string&) {
      opt.seed_given = true;
    });
    sub->add_flag("--quiet", opt.quiet, "suppress the stdout summary");
  }

  CLI11_PARSE(app, argc, argv);
  return load_and_run(opt, app.get_subcommands().front()->get_name());
}
