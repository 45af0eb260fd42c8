// Copyright 2026 The romtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <omp.h>

#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "romtune/harness.hpp"

namespace romtune {

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct GlobalOptions {
  std::uint64_t seed = 7;
  std::optional<std::string> out;
  std::optional<std::string> config;
  std::optional<int> iterations;
  std::optional<int> seeds;
  int jobs = 1;
  bool timing = false;
  bool quiet = false;
};

// Thrown for flag combinations CLI11 cannot express; reported as usage errors.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Preset resolve_preset(const std::string& spec) {
  if (fs::exists(spec)) return load_config(spec);
  if (spec == "p1" || spec == "p2" || spec == "p3") return builtin_preset(spec);
  throw ConfigError("cannot open config " + spec + " (not a file or a builtin preset)");
}

Preset preset_from(const GlobalOptions& g) {
  if (!g.config) throw UsageError("--config is required for this subcommand");
  Preset p = resolve_preset(*g.config);
  if (g.iterations) p.train.iterations = *g.iterations;
  if (g.seeds) p.seeds = *g.seeds;
  p.validate();
  return p;
}

fs::path out_dir(const GlobalOptions& g, const std::string& fallback) {
  const fs::path dir = g.out ? fs::path(*g.out) : fs::path("runs") / fallback;
  fs::create_directories(dir);
  return dir;
}

Execution execution(const GlobalOptions& g) {
  if (g.jobs > 1) {
    omp_set_num_threads(g.jobs);
    return Execution::kParallel;
  }
  return Execution::kSerial;
}

Rom obtain_rom(const Preset& p, const GlobalOptions& g, const std::optional<std::string>& rom_dir) {
  if (rom_dir) return load_rom(*rom_dir);
  const SnapshotSet snaps =
      collect_excited_trajectory(p.env, p.dmdc.snapshots, p.dmdc.excitation_stddev(),
                                 stage_seed(g.seed, "rom"));
  return dmdc_fit(snaps, p.dmdc.rank, p.dmdc.reduced_dim);
}

Policy read_policy(const std::string& path, const Preset& p, const Rom& rom) {
  Policy policy{read_matrix_csv(path)};
  if (policy.gains.rows() != p.env.n_a() || policy.gains.cols() != 2 * rom.n_s()) {
    throw ConfigError(path + ": gains must be n_a x 2 n_s for the given ROM");
  }
  return policy;
}

void write_stream(const fs::path& path, const std::function<void(std::ostream&)>& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  writer(out);
  if (!out) throw ConfigError("failed writing " + path.string());
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Reduce-then-design-then-adapt control of 1-D PDEs", "romtune"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory (default runs/<subcommand or preset>)");
  app.add_option("--config", g.config, "Preset config file, or p1/p2/p3");
  app.add_option("--iterations", g.iterations, "Override the PO iteration count")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seeds", g.seeds, "Override the number of training seeds")
      ->check(CLI::PositiveNumber);
  app.add_option("--jobs", g.jobs, "Worker threads; 1 runs the serial reference schedule")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--timing", g.timing, "Record wall-clock time in train.csv (otherwise 0)");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  std::vector<int> steps;
  std::optional<std::string> rom_dir;
  std::optional<std::string> gains_path;
  bool from_zero = false;
  std::string preset_name;
  std::vector<std::string> strategy_names;

  auto* simulate = app.add_subcommand("simulate", "Roll out from the mean initial field");
  simulate->add_option("--steps", steps, "Control steps to record (default 0, T/4, T/2, 3T/4, T)");
  simulate->add_option("--rom", rom_dir, "ROM directory with A.csv, B.csv, U.csv");
  simulate->add_option("--gains", gains_path, "Gains CSV [K_a | K_b]; omit for no control");

  auto* fit = app.add_subcommand("fit-rom", "Collect an excited trajectory and fit a DMDc model");

  auto* design = app.add_subcommand("design", "Fit (or load) a ROM and design the LQ tracker");
  design->add_option("--rom", rom_dir, "Use this ROM instead of fitting one");

  auto* train_cmd = app.add_subcommand("train", "Fine-tune gains with zeroth-order PO");
  train_cmd->add_option("--rom", rom_dir, "Use this ROM instead of fitting one");
  auto* init_opt =
      train_cmd->add_option("--init", gains_path, "Initial gains CSV (default: LQ design)");
  train_cmd->add_flag("--from-zero", from_zero, "Start from the zero policy")->excludes(init_opt);

  auto* evaluate = app.add_subcommand("evaluate", "Average cost over random initial fields");
  evaluate->add_option("--rom", rom_dir, "ROM directory");
  evaluate->add_option("--gains", gains_path, "Gains CSV; omit for no control");

  auto* preset_cmd = app.add_subcommand("preset", "Run the full four-way comparison");
  preset_cmd->add_option("name", preset_name, "p1, p2 or p3")
      ->check(CLI::IsMember({"p1", "p2", "p3"}));
  preset_cmd->add_option("--strategies", strategy_names,
                         "Subset of none, lqt, lqt_po, pure_po (default all)")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  std::ostream* log = g.quiet ? nullptr : &std::cerr;
  auto say = [&](const std::string& text) {
    if (log) *log << text << std::endl;
  };

  try {
    if (*simulate) {
      const Preset p = preset_from(g);
      const fs::path dir = out_dir(g, "simulate");
      std::optional<Rom> rom;
      std::optional<Policy> policy;
      if (gains_path) {
        if (!rom_dir) throw UsageError("--gains needs --rom");
        rom = load_rom(*rom_dir);
        policy = read_policy(*gains_path, p, *rom);
      }
      if (steps.empty()) {
        const int T = p.env.horizon;
        steps = {0, T / 4, T / 2, (3 * T) / 4, T};
      }
      emit_field_snapshots(p, policy, rom, steps, dir / "fields.csv");
      say("wrote " + (dir / "fields.csv").string());
      return kExitOk;
    }

    if (*fit) {
      const Preset p = preset_from(g);
      const fs::path dir = out_dir(g, "fit-rom");
      const SnapshotSet snaps =
          collect_excited_trajectory(p.env, p.dmdc.snapshots, p.dmdc.excitation_stddev(),
                                     stage_seed(g.seed, "rom"));
      const Rom rom = dmdc_fit(snaps, p.dmdc.rank, p.dmdc.reduced_dim);
      save_rom(dir / "rom", rom);
      std::ostringstream msg;
      msg << "fitted n_s = " << rom.n_s() << " (p = " << rom.p
          << "), one-step RMS error " << rom_one_step_error(rom, snaps);
      say(msg.str());
      return kExitOk;
    }

    if (*design) {
      const Preset p = preset_from(g);
      const fs::path dir = out_dir(g, "design");
      const Rom rom = obtain_rom(p, g, rom_dir);
      if (!rom_dir) save_rom(dir / "rom", rom);
      const LqtDesign d = design_lqt(p.env, rom);
      fs::create_directories(dir / "lqt");
      write_matrix_csv(dir / "lqt" / "gains.csv", Policy::from(d.gains).gains);
      write_matrix_csv(dir / "lqt" / "P.csv", d.dare.P);
      std::ostringstream msg;
      msg << "DARE residual " << d.dare.residual << " after " << d.dare.iterations
          << " iterations; closed-loop spectral radius " << d.closed_loop_radius;
      say(msg.str());
      return kExitOk;
    }

    if (*train_cmd) {
      const Preset p = preset_from(g);
      const fs::path dir = out_dir(g, "train");
      const Rom rom = obtain_rom(p, g, rom_dir);
      if (!rom_dir) save_rom(dir / "rom", rom);
      Policy initial;
      std::string label = "lqt_po";
      if (from_zero) {
        initial = Policy::zero(p.env.n_a(), rom.n_s());
        label = "pure_po";
      } else if (gains_path) {
        initial = read_policy(*gains_path, p, rom);
      } else {
        initial = Policy::from(design_lqt(p.env, rom).gains);
      }
      TrainConfig cfg = p.train;
      if (from_zero) cfg.learning_rate = p.learning_rate_pure;
      cfg.rng_seed = stage_seed(g.seed, "train", label, 0);
      cfg.eval_seed = stage_seed(g.seed, "curve", "", 0);
      cfg.execution = execution(g);
      const TrainResult result = train(p.env, rom, initial, cfg);
      write_stream(dir / "train.csv",
                   [&](std::ostream& os) { result.record.write_csv(os, g.timing); });
      write_matrix_csv(dir / "gains.csv", result.policy.gains);
      std::ostringstream msg;
      msg << "cost " << result.record.rows.front().mean_cost << " -> "
          << result.record.rows.back().mean_cost << " over " << cfg.iterations << " iterations";
      say(msg.str());
      return kExitOk;
    }

    if (*evaluate) {
      const Preset p = preset_from(g);
      const fs::path dir = out_dir(g, "evaluate");
      std::optional<FeedbackLaw> law;
      if (gains_path) {
        if (!rom_dir) throw UsageError("--gains needs --rom");
        const Rom rom = load_rom(*rom_dir);
        law = read_policy(*gains_path, p, rom).law(rom);
      }
      const CostEstimate est =
          evaluate_law_cost(p.env, law, p.n_eval, stage_seed(g.seed, "eval"),
                            p.train.divergence_cost_cap, execution(g));
      write_stream(dir / "evaluation.csv", [&](std::ostream& os) {
        os.precision(std::numeric_limits<double>::max_digits10);
        os << "rollout,cost,diverged\n";
        for (size_t i = 0; i < est.costs.size(); ++i) {
          os << i << ',' << est.costs[i] << ',' << int(est.rollout_diverged[i]) << '\n';
        }
      });
      std::cout << "mean_cost " << est.mean << " std_cost " << est.stddev << " diverged "
                << est.diverged << '\n';
      return kExitOk;
    }

    // preset
    if (preset_name.empty() == !g.config.has_value()) {
      throw UsageError("preset takes either a name (p1, p2, p3) or --config, not both");
    }
    Preset p = preset_name.empty() ? resolve_preset(*g.config) : builtin_preset(preset_name);
    if (g.iterations) p.train.iterations = *g.iterations;
    if (g.seeds) p.seeds = *g.seeds;
    p.validate();
    std::set<Strategy> strategies;
    for (const std::string& s : strategy_names) strategies.insert(parse_strategy(s));
    if (strategies.empty()) strategies = kAllStrategies;

    RunOptions options;
    options.execution = execution(g);
    options.include_timing = g.timing;
    options.log = log;
    const fs::path dir = out_dir(g, p.name);
    const ComparisonReport report = run_preset(p, strategies, g.seed, dir, options);
    report.write_csv(std::cout);
    for (const auto& [s, r] : report.results) {
      if (!r.ok) return kExitNumerical;
    }
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
}

}  // namespace romtune
