// paritylink: simulate | scan | tomo | budget
//
// Output directory: --out, else $PARITYLINK_OUT_DIR, else the working directory.
// Exit codes: 0 ok, 2 config or schema error, 1 any other failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "paritylink/commands.hpp"

namespace pl = paritylink;

int main(int argc, char** argv) {
  CLI::App app{"Parity-check qubit transmission simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::size_t workers = 1;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "scenario file (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed, overrides the config");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--workers", workers, "worker threads for noise trials")->check(CLI::Range(1, 1024));
  };
  CLI::App* simulate = app.add_subcommand("simulate", "run the protocol, write report and histogram");
  CLI::App* scan = app.add_subcommand("scan", "delay scan of the two-photon fringe");
  CLI::App* tomo = app.add_subcommand("tomo", "state and process tomography of the output");
  CLI::App* budget = app.add_subcommand("budget", "success-probability ledger for all flag settings");
  for (CLI::App* sub : {simulate, scan, tomo, budget}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    pl::Config cfg = pl::load_config(config_path);
    if (seed) pl::apply_seed(cfg, *seed);

    pl::RunOptions opt;
    opt.workers = workers;
    if (!out_dir.empty()) {
      opt.out_dir = out_dir;
    } else if (const char* env = std::getenv("PARITYLINK_OUT_DIR"); env && *env) {
      opt.out_dir = env;
    }

    if (simulate->parsed()) {
      const auto rep = pl::cmd_simulate(cfg, opt);
      for (const auto& r : rep.inputs) {
        std::cout << r.name << "  fidelity " << pl::fmt9(r.fidelity) << "  accepted "
                  << pl::fmt9(r.accepted_probability) << "\n";
      }
      if (rep.process) std::cout << "average fidelity " << pl::fmt9(rep.process->average_fidelity) << "\n";
      if (rep.visibility) std::cout << "visibility " << pl::fmt9(*rep.visibility) << "\n";
    } else if (scan->parsed()) {
      const auto res = pl::cmd_scan(cfg, opt);
      if (res.fit.ok) {
        std::cout << "fitted FWHM " << pl::fmt9(res.fit.fwhm_um) << " um\n";
      } else {
        std::cout << "no fit (" << res.fit.note << ")\n";
      }
    } else if (tomo->parsed()) {
      const auto rep = pl::cmd_tomo(cfg, opt);
      for (const auto& p : rep.probes) {
        std::cout << p.name << "  fidelity " << pl::fmt9(p.fidelity_to_input) << "\n";
      }
      std::cout << "F_e " << pl::fmt9(rep.entanglement_fidelity) << "  F_avg "
                << pl::fmt9(rep.average_fidelity) << "  Haar " << pl::fmt9(rep.haar.mean)
                << " +- " << pl::fmt9(rep.haar.standard_error) << "\n";
    } else if (budget->parsed()) {
      for (const auto& row : pl::cmd_budget(cfg, opt)) {
        std::cout << "switches=" << row.flags.fast_switches << " feed_forward=" << row.flags.feed_forward
                  << "  p_total " << pl::fmt9(row.ledger.p_total) << "  (lossless "
                  << row.ledger.exact_lossless_total.str() << ")\n";
      }
    }
  } catch (const pl::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const pl::ConfigurationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
