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

#ifndef ROMTUNE_HARNESS_HPP_
#define ROMTUNE_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "romtune/lq_control.hpp"
#include "romtune/pde_env.hpp"
#include "romtune/po.hpp"
#include "romtune/rom.hpp"

namespace romtune {

struct DmdcSettings {
  int snapshots = 600;
  int rank = 8;          // joint truncation p
  int reduced_dim = 4;   // n_s
  double excitation_variance = 0.1;

  double excitation_stddev() const;
};

/// One benchmark experiment: environment, identification settings and the
/// policy-optimization budget.
struct Preset {
  std::string name;
  EnvConfig env;
  // Q = q_weight I, R = r_weight I
  double q_weight = 1.0;
  double r_weight = 1.0;
  DmdcSettings dmdc;
  TrainConfig train;  // learning_rate is the warm-start rate
  double learning_rate_pure = 1e-5;
  int n_eval = 10;
  int seeds = 3;

  void validate() const;
};

bool operator==(const Preset& a, const Preset& b);

/// Shipped settings for "p1", "p2", "p3" (or their long names).
Preset builtin_preset(const std::string& name);

/// Flat `key = value` format, one key per line, `#` starts a comment.
Preset parse_config(std::istream& in, const std::string& source = "<config>");
Preset load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const Preset& preset);
void save_config(const std::filesystem::path& path, const Preset& preset);

enum class Strategy { kNone, kLqt, kLqtPo, kPurePo };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);
inline const std::set<Strategy> kAllStrategies = {Strategy::kNone, Strategy::kLqt,
                                                  Strategy::kLqtPo, Strategy::kPurePo};

struct StrategyResult {
  Strategy strategy = Strategy::kNone;
  bool ok = true;
  std::string status = "ok";
  double mean_cost = 0.0;
  double std_cost = 0.0;
  int diverged = 0;
  std::vector<double> costs;  // pooled over seeds x evaluation rollouts
  std::vector<TrainRecord> curves;  // one per seed, PO strategies only
  std::vector<Policy> policies;     // final policy per seed
};

struct ComparisonReport {
  std::string preset;
  std::map<Strategy, StrategyResult> results;
  std::optional<Rom> rom;
  std::optional<LqtDesign> design;

  /// mean / LQT mean; requires a successful LQT result.
  double normalized(Strategy s) const;
  /// 1 - normalized(LQT-PO)
  double reduction() const;
  /// Seed-averaged training curve (mean_cost per recorded iteration).
  std::vector<double> mean_curve(Strategy s) const;

  void write_csv(std::ostream& out) const;
};

struct RunOptions {
  Execution execution = Execution::kSerial;
  bool include_timing = false;
  bool emit_fields = true;
  std::ostream* log = nullptr;  // progress lines, when set
};

/// Seed for a (stage, strategy, seed index, rollout index) tuple.
std::uint64_t stage_seed(std::uint64_t master_seed, const std::string& stage,
                         const std::string& strategy = "", std::uint64_t seed_index = 0,
                         std::uint64_t rollout_index = 0);

/// Full pipeline: identify, design, fine-tune, evaluate. Writes
///   <out>/rom/{A,B,U}.csv, <out>/lqt/gains.csv,
///   <out>/<strategy>/seed_<i>/{train,gains}.csv, <out>/curves.csv,
///   <out>/evaluation.csv, <out>/report.csv and optionally fields_<strategy>.csv.
/// A strategy that fails is reported and the others still run.
ComparisonReport run_preset(const Preset& preset, const std::set<Strategy>& strategies,
                            std::uint64_t master_seed,
                            const std::optional<std::filesystem::path>& output_dir,
                            const RunOptions& options = {});

/// CSV of the field at the requested step indices from the mean initial
/// condition, plus grid and target rows. Divergence truncates the output and
/// is marked in the status column.
void emit_field_snapshots(const Preset& preset, const std::optional<Policy>& policy,
                          const std::optional<Rom>& rom, const std::vector<int>& steps,
                          std::ostream& out);
void emit_field_snapshots(const Preset& preset, const std::optional<Policy>& policy,
                          const std::optional<Rom>& rom, const std::vector<int>& steps,
                          const std::filesystem::path& output_path);

/// Command-line entry point. Exit codes: 0 success, 1 usage or validation
/// error, 2 numerical failure.
int cli_main(int argc, const char* const* argv);

}  // namespace romtune

#endif  // ROMTUNE_HARNESS_HPP_
