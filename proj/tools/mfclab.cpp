// mfclab: config-driven experiment runner for the mean-field control lab.
//
//   mfclab run <config.json> [--seed N]
//   mfclab suite <manifest.json> [--out DIR]
//   mfclab oracle riccati --lambda L --T T [--t t] [--qf q] [--qT q]
//                         [--sigma s] [--dim n] [--x-norm2 v]
//   mfclab report diff <a.json> <b.json>

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>

#include "mfc/config.hpp"
#include "mfc/riccati.hpp"
#include "mfc/runner.hpp"
#include "mfc/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mean field type control laboratory"};
  app.set_version_flag("--version", mfc::kVersion);
  app.require_subcommand(1);

  // run
  auto* run_cmd = app.add_subcommand("run", "execute one experiment config");
  std::string run_config_path;
  std::optional<std::uint64_t> seed_override;
  run_cmd->add_option("config", run_config_path, "config JSON path")->required();
  run_cmd->add_option("--seed", seed_override, "override discretization.seed");

  // suite
  auto* suite_cmd = app.add_subcommand("suite", "run every config in a manifest");
  std::string manifest_path, suite_out = "out";
  suite_cmd->add_option("manifest", manifest_path, "manifest JSON path")->required();
  suite_cmd->add_option("--out", suite_out, "summary output directory");

  // oracle riccati
  auto* oracle_cmd = app.add_subcommand("oracle", "closed-form oracles");
  auto* riccati_cmd = oracle_cmd->add_subcommand("riccati", "scalar LQ closed form");
  double o_lambda = 1.0, o_T = 1.0, o_t = 0.0, o_qf = 0.0, o_qT = 1.0, o_sigma = 0.0,
         o_xnorm2 = 1.0;
  std::size_t o_dim = 1;
  riccati_cmd->add_option("--lambda", o_lambda, "control weight");
  riccati_cmd->add_option("--T", o_T, "terminal time");
  riccati_cmd->add_option("--t", o_t, "initial time");
  riccati_cmd->add_option("--qf", o_qf, "running quadratic weight");
  riccati_cmd->add_option("--qT", o_qT, "terminal quadratic weight");
  riccati_cmd->add_option("--sigma", o_sigma, "isotropic noise level");
  riccati_cmd->add_option("--dim", o_dim, "state dimension");
  riccati_cmd->add_option("--x-norm2", o_xnorm2, "||X||^2 of the initial condition");

  // report diff
  auto* report_cmd = app.add_subcommand("report", "report utilities");
  auto* diff_cmd = report_cmd->add_subcommand("diff", "compare two run reports");
  std::string diff_a, diff_b;
  diff_cmd->add_option("a", diff_a, "first report")->required();
  diff_cmd->add_option("b", diff_b, "second report")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      mfc::json j = mfc::load_json(run_config_path);
      if (seed_override) j["discretization"]["seed"] = *seed_override;
      mfc::RunConfig cfg;
      try {
        cfg = mfc::parse_run_config(j);
      } catch (const mfc::Error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
      }
      const mfc::RunOutcome out = mfc::run_config(cfg);
      std::printf("report: %s\n", out.report_path.c_str());
      if (out.report.contains("results")) {
        const auto& res = out.report["results"];
        if (res.contains("solver_failure"))
          std::printf("solver failure: %s\n",
                      res["solver_failure"]["kind"].get<std::string>().c_str());
        else if (res.contains("checks"))
          for (const auto& c : res["checks"])
            std::printf("check %-18s %s\n", c["name"].get<std::string>().c_str(),
                        c["pass"].get<bool>() ? "PASS" : "FAIL");
      }
      return out.exit_code;
    }
    if (*suite_cmd) return mfc::run_suite(manifest_path, suite_out);
    if (*riccati_cmd) {
      mfc::RiccatiOracle oracle{o_lambda, o_qf, o_qT, o_T};
      std::printf("P(t)        = %.17g\n", oracle.p(o_t));
      std::printf("int_t^T P   = %.17g\n", oracle.p_integral(o_t));
      std::printf("V(X,t)      = %.17g\n", oracle.value(o_t, o_xnorm2, o_sigma, o_dim));
      std::printf("dV/dt       = %.17g\n",
                  oracle.value_time_derivative(o_t, o_xnorm2, o_sigma, o_dim));
      return 0;
    }
    if (*diff_cmd) return mfc::report_diff(diff_a, diff_b);
  } catch (const mfc::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return (e.kind() == mfc::ErrorKind::config_invalid || e.kind() == mfc::ErrorKind::io_error)
               ? 2
               : 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
