// hesspcl: run, sweep and verify from the command line.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hesspcl/experiment.hpp"
#include "hesspcl/verify.hpp"
#include "hesspcl/version.hpp"

namespace {

struct Overrides {
  std::string config_file;
  std::optional<std::string> problem, optimizer, out, noise_distribution;
  std::optional<std::uint64_t> seed, noise_seed;
  std::optional<hesspcl::Index> grid, depth, width, max_iters, steps, track_every;
  std::optional<double> dt, noise;
  bool record_timing = false;
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "flat JSON configuration file");
  cmd->add_option("--problem", o.problem, "poisson-fd | heat | poisson-fem | toy-one-layer");
  cmd->add_option("--optimizer", o.optimizer, "adam | bfgs | lbfgs | trust-region");
  cmd->add_option("--seed", o.seed, "network initialization seed");
  cmd->add_option("--grid", o.grid, "cells per side of the grid or mesh");
  cmd->add_option("--depth", o.depth, "number of hidden layers");
  cmd->add_option("--width", o.width, "neurons per hidden layer");
  cmd->add_option("--max-iters", o.max_iters, "iteration cap");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--dt", o.dt, "heat time step");
  cmd->add_option("--steps", o.steps, "heat time steps");
  cmd->add_option("--noise", o.noise, "observation noise level");
  cmd->add_option("--noise-distribution", o.noise_distribution, "uniform01 | uniform11");
  cmd->add_option("--noise-seed", o.noise_seed, "seed for the observation noise");
  cmd->add_option("--track-every", o.track_every, "write angle diagnostics every N iterations (0: off)");
  cmd->add_flag("--record-timing", o.record_timing, "fill the wall_ms history column");
}

hesspcl::experiment::ExperimentConfig resolve(const Overrides& o) {
  using nlohmann::json;
  hesspcl::experiment::ExperimentConfig c;
  if (!o.config_file.empty()) c = hesspcl::experiment::load_config_file(o.config_file);
  json j = json::object();
  if (o.problem) j["problem"] = *o.problem;
  if (o.optimizer) j["optimizer"] = *o.optimizer;
  if (o.seed) j["seed"] = *o.seed;
  if (o.grid) j["grid"] = *o.grid;
  if (o.depth) j["depth"] = *o.depth;
  if (o.width) j["width"] = *o.width;
  if (o.max_iters) j["max_iters"] = *o.max_iters;
  if (o.out) j["out"] = *o.out;
  if (o.dt) j["dt"] = *o.dt;
  if (o.steps) j["steps"] = *o.steps;
  if (o.noise) j["noise"] = *o.noise;
  if (o.noise_distribution) j["noise_distribution"] = *o.noise_distribution;
  if (o.noise_seed) j["noise_seed"] = *o.noise_seed;
  if (o.track_every) j["track_every"] = *o.track_every;
  if (o.record_timing) j["record_timing"] = true;
  hesspcl::experiment::apply_json(c, j);
  c.validate();
  return c;
}

void print_outcome(const hesspcl::experiment::RunOutcome& r) {
  std::printf("stop_reason: %s\n", std::string(hesspcl::optim::to_string(r.result.stop)).c_str());
  std::printf("final_loss: %.17g\n", r.result.loss);
  std::printf("iterations: %lld\n", static_cast<long long>(r.result.iterations()));
  if (r.spectrum) {
    std::printf("spectrum: %lld positive, %lld zero, %lld negative\n", static_cast<long long>(r.spectrum->positive),
                static_cast<long long>(r.spectrum->zero), static_cast<long long>(r.spectrum->negative));
  } else if (!r.spectrum_error.empty()) {
    std::printf("spectrum: unavailable (%s)\n", r.spectrum_error.c_str());
  }
  std::printf("output: %s\n", r.config.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Second-order physics-constrained learning"};
  app.set_version_flag("--version", std::string(hesspcl::kVersion));
  app.require_subcommand(1);

  Overrides run_flags, sweep_flags;
  auto* run_cmd = app.add_subcommand("run", "train one configuration and export its diagnostics");
  add_config_flags(run_cmd, run_flags);

  auto* sweep_cmd = app.add_subcommand("sweep", "run one configuration per axis value and write summary.csv");
  add_config_flags(sweep_cmd, sweep_flags);
  std::string axis;
  std::vector<std::string> values;
  sweep_cmd->add_option("--axis", axis, "seed | depth | width | optimizer")->required();
  sweep_cmd->add_option("--values", values, "axis values (comma separated)")->required()->delimiter(',');

  auto* verify_cmd = app.add_subcommand("verify", "check derivatives and the subproblem solver against oracles");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const auto outcome = hesspcl::experiment::run(resolve(run_flags));
      print_outcome(outcome);
      return 0;
    }
    if (*sweep_cmd) {
      const auto base = resolve(sweep_flags);
      const auto rows = hesspcl::experiment::sweep(base, axis, values);
      int failed = 0;
      for (const auto& r : rows) {
        if (r.outcome) {
          std::printf("%s=%s  loss %.6g  stop %s\n", axis.c_str(), r.value.c_str(), r.outcome->result.loss,
                      std::string(hesspcl::optim::to_string(r.outcome->result.stop)).c_str());
        } else {
          ++failed;
          std::printf("%s=%s  error: %s\n", axis.c_str(), r.value.c_str(), r.error.c_str());
        }
      }
      std::printf("summary: %s/summary.csv\n", base.out.c_str());
      return failed ? 1 : 0;
    }
    if (*verify_cmd) {
      bool ok = true;
      for (const auto& s : hesspcl::verify::verify_all()) {
        std::printf("%s %-14s cases %4d  worst %.3g%s%s\n", s.passed ? "PASS" : "FAIL", s.name.c_str(), s.cases,
                    s.worst, s.detail.empty() ? "" : "  ", s.detail.c_str());
        ok = ok && s.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const hesspcl::ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
