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

#include "romtune/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "romtune/seed.hpp"

namespace romtune {

namespace fs = std::filesystem;

double DmdcSettings::excitation_stddev() const { return std::sqrt(excitation_variance); }

// ---------------------------------------------------------------------------
// Presets

void Preset::validate() const {
  if (name.empty() || name.find_first_of(" \t\r\n#=") != std::string::npos) {
    throw ConfigError("name must be a non-empty word");
  }
  if (!(q_weight >= 0.0)) throw ConfigError("q_weight must be nonnegative");
  if (!(r_weight > 0.0)) throw ConfigError("r_weight must be positive");
  EnvConfig check = env;
  check.finalize();
  if (env.Q.rows() != env.n_z() || !env.Q.isApprox(q_weight * Matrix::Identity(env.n_z(), env.n_z())) ||
      env.R.rows() != env.n_a() || !env.R.isApprox(r_weight * Matrix::Identity(env.n_a(), env.n_a()))) {
    throw ConfigError("Q and R must equal q_weight I and r_weight I");
  }
  if (dmdc.snapshots < 1) throw ConfigError("dmdc_snapshots must be at least 1");
  if (dmdc.reduced_dim < 1) throw ConfigError("dmdc_reduced_dim must be at least 1");
  if (dmdc.rank < dmdc.reduced_dim) throw ConfigError("dmdc_rank must be >= dmdc_reduced_dim");
  if (dmdc.rank > std::min(env.n_z() + env.n_a(), dmdc.snapshots)) {
    throw ConfigError("dmdc_rank must not exceed min(n_z + n_a, dmdc_snapshots)");
  }
  if (dmdc.reduced_dim > env.n_z()) throw ConfigError("dmdc_reduced_dim must not exceed n_z");
  if (!(dmdc.excitation_variance > 0.0)) throw ConfigError("excitation_variance must be positive");
  try {
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(learning_rate_pure > 0.0)) throw ConfigError("learning_rate_pure must be positive");
  if (n_eval < 1) throw ConfigError("n_eval must be at least 1");
  if (seeds < 1) throw ConfigError("seeds must be at least 1");
}

bool operator==(const Preset& a, const Preset& b) {
  const EnvConfig& x = a.env;
  const EnvConfig& y = b.env;
  const TrainConfig& s = a.train;
  const TrainConfig& t = b.train;
  return a.name == b.name && x.grid == y.grid && x.physics == y.physics &&
         x.forcing == y.forcing && x.sampling_time == y.sampling_time &&
         x.integration_substep == y.integration_substep && x.horizon == y.horizon &&
         x.target == y.target && x.sampler == y.sampler && x.dealias == y.dealias &&
         x.max_cfl == y.max_cfl && a.q_weight == b.q_weight && a.r_weight == b.r_weight &&
         a.dmdc.snapshots == b.dmdc.snapshots && a.dmdc.rank == b.dmdc.rank &&
         a.dmdc.reduced_dim == b.dmdc.reduced_dim &&
         a.dmdc.excitation_variance == b.dmdc.excitation_variance &&
         s.learning_rate == t.learning_rate && s.cost_scale == t.cost_scale &&
         s.smoothing_radius == t.smoothing_radius && s.iterations == t.iterations &&
         s.oracle_samples == t.oracle_samples && s.eval_rollouts == t.eval_rollouts &&
         s.divergence_cost_cap == t.divergence_cost_cap &&
         a.learning_rate_pure == b.learning_rate_pure && a.n_eval == b.n_eval &&
         a.seeds == b.seeds;
}

namespace {

Preset assemble(std::string name, GridSpec grid, PdePhysics physics, ForcingLayout forcing,
                double sampling_time, double substep, int horizon, double q, double r,
                TargetField target, InitialSampler sampler, bool dealias, double max_cfl,
                DmdcSettings dmdc, double lr_warm, double lr_pure, double cost_scale) {
  Preset p;
  p.name = std::move(name);
  p.env = make_env_config(grid, physics, forcing, sampling_time, substep, horizon, q, r, target,
                          sampler, dealias, max_cfl);
  p.q_weight = q;
  p.r_weight = r;
  p.dmdc = dmdc;
  p.train.learning_rate = lr_warm;
  p.train.cost_scale = cost_scale;
  p.train.smoothing_radius = 0.1;
  p.train.iterations = 40;
  p.train.oracle_samples = 8;
  p.train.eval_rollouts = 4;
  p.train.divergence_cost_cap = 1e8;
  p.learning_rate_pure = lr_pure;
  p.n_eval = 10;
  p.seeds = 3;
  return p;
}

}  // namespace

Preset builtin_preset(const std::string& name) {
  using Shape = TargetField::Shape;
  if (name == "p1" || name == "p1_burgers") {
    return assemble("p1_burgers", {1.0, 128}, Burgers{1e-4}, {6, 0.15}, 0.05, 0.01, 300, 1.0,
                    1.0, {Shape::kCosine, 0.1}, SechPulse{}, true, 2.0, {600, 8, 4, 0.1}, 1e-4,
                    1e-5, 0.15);
  }
  if (name == "p2" || name == "p2_allen_cahn") {
    return assemble("p2_allen_cahn", {2.0, 256}, AllenCahn{5e-2, 5.0}, {12, 0.05}, 0.01, 0.01,
                    80, 1.0, 0.1, {Shape::kCosine, -1.0}, QuadraticCosine{}, true, 0.0,
                    {160, 16, 8, 0.1}, 1e-4, 1e-4, 0.02);
  }
  if (name == "p3" || name == "p3_kdv") {
    return assemble("p3_kdv", {20.0, 256}, KortewegDeVries{}, {10, 0.05}, 0.01, 0.001, 200, 1.0,
                    1.0, {Shape::kSine, 1.0}, NegativeSech{}, true, 2.0, {200, 16, 8, 0.01},
                    5e-5, 5e-5, 0.02);
  }
  throw ConfigError("unknown preset '" + name + "' (expected p1, p2 or p3)");
}

// ---------------------------------------------------------------------------
// Config files

namespace {

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class KeyValues {
 public:
  KeyValues(std::istream& in, std::string source) : source_(std::move(source)) {
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const std::string text = trim(raw.substr(0, raw.find('#')));
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) fail(line, "expected 'key = value'");
      const std::string key = trim(text.substr(0, eq));
      const std::string value = trim(text.substr(eq + 1));
      if (key.empty()) fail(line, "missing key");
      if (value.empty()) fail(line, "missing value for '" + key + "'");
      if (entries_.count(key)) fail(line, "duplicate key '" + key + "'");
      entries_[key] = {value, line, false};
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string text(const std::string& key, const std::optional<std::string>& fallback = {}) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      if (fallback) return *fallback;
      throw ConfigError(source_ + ": missing required key '" + key + "'");
    }
    it->second.used = true;
    return it->second.value;
  }

  double number(const std::string& key, std::optional<double> fallback = {}) {
    if (!has(key) && fallback) return *fallback;
    const std::string v = text(key);
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
      fail(entries_.at(key).line, "'" + key + "' expects a finite number, got '" + v + "'");
    }
    return out;
  }

  int integer(const std::string& key, std::optional<int> fallback = {}) {
    if (!has(key) && fallback) return *fallback;
    const std::string v = text(key);
    int out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
      fail(entries_.at(key).line, "'" + key + "' expects an integer, got '" + v + "'");
    }
    return out;
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const std::string v = text(key);
    if (v == "true") return true;
    if (v == "false") return false;
    fail(entries_.at(key).line, "'" + key + "' expects true or false, got '" + v + "'");
  }

  [[noreturn]] void reject(const std::string& key, const std::string& why) {
    fail(entries_.at(key).line, why);
  }

  // Every key must have been consumed by the parser.
  void finish() const {
    const Entry* first = nullptr;
    std::string key;
    for (const auto& [k, e] : entries_) {
      if (!e.used && (!first || e.line < first->line)) {
        first = &e;
        key = k;
      }
    }
    if (first) fail(first->line, "unknown or inapplicable key '" + key + "'");
  }

 private:
  struct Entry {
    std::string value;
    int line = 0;
    bool used = false;
  };

  [[noreturn]] void fail(int line, const std::string& what) const {
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + what);
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
};

Range read_range(KeyValues& kv, const std::string& prefix, Range fallback) {
  return {kv.number(prefix + "_min", fallback.min), kv.number(prefix + "_max", fallback.max)};
}

}  // namespace

Preset parse_config(std::istream& in, const std::string& source) {
  KeyValues kv(in, source);
  Preset p;
  p.name = kv.text("name");

  GridSpec grid{kv.number("domain_length"), kv.integer("n_z")};
  PdePhysics physics;
  const std::string physics_key = kv.text("physics");
  if (physics_key == "burgers") {
    physics = Burgers{kv.number("viscosity")};
  } else if (physics_key == "allen_cahn") {
    physics = AllenCahn{kv.number("diffusivity"), kv.number("potential")};
  } else if (physics_key == "kdv") {
    physics = KortewegDeVries{};
  } else {
    kv.reject("physics", "physics must be burgers, allen_cahn or kdv");
  }

  ForcingLayout forcing{kv.integer("n_a"), kv.number("forcing_width")};

  InitialSampler sampler;
  const std::string ic = kv.text("initial_condition");
  if (ic == "sech_pulse") {
    SechPulse s;
    s.alpha = read_range(kv, "alpha", s.alpha);
    s.beta = read_range(kv, "beta", s.beta);
    sampler = s;
  } else if (ic == "quadratic_cosine") {
    QuadraticCosine s;
    s.alpha = read_range(kv, "alpha", s.alpha);
    sampler = s;
  } else if (ic == "negative_sech") {
    NegativeSech s;
    s.alpha = read_range(kv, "alpha", s.alpha);
    sampler = s;
  } else {
    kv.reject("initial_condition",
              "initial_condition must be sech_pulse, quadratic_cosine or negative_sech");
  }

  TargetField target;
  const std::string shape = kv.text("target_shape");
  if (shape == "cos") {
    target.shape = TargetField::Shape::kCosine;
  } else if (shape == "sin") {
    target.shape = TargetField::Shape::kSine;
  } else {
    kv.reject("target_shape", "target_shape must be cos or sin");
  }
  target.amplitude = kv.number("target_amplitude");

  const double sampling_time = kv.number("sampling_time");
  const double substep = kv.number("integration_substep");
  const int horizon = kv.integer("horizon");
  p.q_weight = kv.number("q_weight");
  p.r_weight = kv.number("r_weight");
  const bool dealias = kv.boolean("dealias", false);
  const double max_cfl = kv.number("max_cfl", 0.0);

  p.dmdc.snapshots = kv.integer("dmdc_snapshots");
  p.dmdc.rank = kv.integer("dmdc_rank");
  p.dmdc.reduced_dim = kv.integer("dmdc_reduced_dim");
  p.dmdc.excitation_variance = kv.number("excitation_variance");

  const TrainConfig defaults;
  p.train.learning_rate = kv.number("learning_rate_warm");
  p.learning_rate_pure = kv.number("learning_rate_pure");
  p.train.cost_scale = kv.number("cost_scale", defaults.cost_scale);
  p.train.smoothing_radius = kv.number("smoothing_radius", defaults.smoothing_radius);
  p.train.iterations = kv.integer("iterations", defaults.iterations);
  p.train.oracle_samples = kv.integer("oracle_samples", defaults.oracle_samples);
  p.train.eval_rollouts = kv.integer("eval_rollouts", defaults.eval_rollouts);
  p.train.divergence_cost_cap = kv.number("divergence_cost_cap", defaults.divergence_cost_cap);
  p.n_eval = kv.integer("n_eval", 10);
  p.seeds = kv.integer("seeds", 3);
  kv.finish();

  if (!(p.q_weight >= 0.0)) throw ConfigError("q_weight must be nonnegative");
  if (!(p.r_weight > 0.0)) throw ConfigError("r_weight must be positive");
  p.env = make_env_config(grid, physics, forcing, sampling_time, substep, horizon, p.q_weight,
                          p.r_weight, target, sampler, dealias, max_cfl);
  p.validate();
  return p;
}

Preset load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

void write_config(std::ostream& out, const Preset& p) {
  const EnvConfig& env = p.env;
  auto line = [&out](const std::string& key, const std::string& value) {
    out << key << " = " << value << '\n';
  };
  auto num = [&](const std::string& key, double v) { line(key, format_number(v)); };

  out << "# romtune preset\n";
  line("name", p.name);
  out << "\n# equation\n";
  line("physics", physics_name(env.physics));
  if (const auto* b = std::get_if<Burgers>(&env.physics)) num("viscosity", b->viscosity);
  if (const auto* a = std::get_if<AllenCahn>(&env.physics)) {
    num("diffusivity", a->diffusivity);
    num("potential", a->potential);
  }
  num("domain_length", env.grid.domain_length);
  line("n_z", std::to_string(env.grid.n_z));
  line("n_a", std::to_string(env.forcing.n_a));
  num("forcing_width", env.forcing.width_fraction);
  num("sampling_time", env.sampling_time);
  num("integration_substep", env.integration_substep);
  line("horizon", std::to_string(env.horizon));
  line("dealias", env.dealias ? "true" : "false");
  num("max_cfl", env.max_cfl);

  out << "\n# cost and target\n";
  num("q_weight", p.q_weight);
  num("r_weight", p.r_weight);
  line("target_shape", env.target.shape == TargetField::Shape::kCosine ? "cos" : "sin");
  num("target_amplitude", env.target.amplitude);

  out << "\n# initial field distribution\n";
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SechPulse>) line("initial_condition", "sech_pulse");
        else if constexpr (std::is_same_v<T, QuadraticCosine>)
          line("initial_condition", "quadratic_cosine");
        else line("initial_condition", "negative_sech");
        num("alpha_min", s.alpha.min);
        num("alpha_max", s.alpha.max);
        if constexpr (std::is_same_v<T, SechPulse>) {
          num("beta_min", s.beta.min);
          num("beta_max", s.beta.max);
        }
      },
      env.sampler);

  out << "\n# identification\n";
  line("dmdc_snapshots", std::to_string(p.dmdc.snapshots));
  line("dmdc_rank", std::to_string(p.dmdc.rank));
  line("dmdc_reduced_dim", std::to_string(p.dmdc.reduced_dim));
  num("excitation_variance", p.dmdc.excitation_variance);

  out << "\n# policy optimization\n";
  num("learning_rate_warm", p.train.learning_rate);
  num("learning_rate_pure", p.learning_rate_pure);
  num("cost_scale", p.train.cost_scale);
  num("smoothing_radius", p.train.smoothing_radius);
  line("iterations", std::to_string(p.train.iterations));
  line("oracle_samples", std::to_string(p.train.oracle_samples));
  line("eval_rollouts", std::to_string(p.train.eval_rollouts));
  num("divergence_cost_cap", p.train.divergence_cost_cap);
  line("n_eval", std::to_string(p.n_eval));
  line("seeds", std::to_string(p.seeds));
}

void save_config(const fs::path& path, const Preset& preset) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  write_config(out, preset);
  if (!out) throw ConfigError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Comparison

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kLqt: return "lqt";
    case Strategy::kLqtPo: return "lqt_po";
    case Strategy::kPurePo: return "pure_po";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  for (Strategy k : kAllStrategies) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown strategy '" + s + "' (expected none, lqt, lqt_po or pure_po)");
}

double ComparisonReport::normalized(Strategy s) const {
  const auto lqt = results.find(Strategy::kLqt);
  const auto it = results.find(s);
  if (lqt == results.end() || !lqt->second.ok) {
    throw std::logic_error("normalization needs a successful LQT result");
  }
  if (it == results.end() || !it->second.ok) {
    throw std::logic_error("no successful result for " + to_string(s));
  }
  return it->second.mean_cost / lqt->second.mean_cost;
}

double ComparisonReport::reduction() const { return 1.0 - normalized(Strategy::kLqtPo); }

std::vector<double> ComparisonReport::mean_curve(Strategy s) const {
  const auto it = results.find(s);
  if (it == results.end() || it->second.curves.empty()) return {};
  const auto& curves = it->second.curves;
  std::vector<double> mean(curves.front().rows.size(), 0.0);
  for (const TrainRecord& rec : curves) {
    for (size_t k = 0; k < mean.size(); ++k) mean[k] += rec.rows.at(k).mean_cost;
  }
  for (double& v : mean) v /= static_cast<double>(curves.size());
  return mean;
}

namespace {

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  }
  return s;
}

}  // namespace

void ComparisonReport::write_csv(std::ostream& out) const {
  const auto precision = out.precision(std::numeric_limits<double>::max_digits10);
  const auto lqt = results.find(Strategy::kLqt);
  const bool have_lqt = lqt != results.end() && lqt->second.ok;
  out << "strategy,mean_cost,std_cost,normalized_cost,reduction_vs_lqt,diverged,status\n";
  for (const auto& [strategy, r] : results) {
    out << to_string(strategy) << ',';
    if (r.ok) {
      out << r.mean_cost << ',' << r.std_cost << ',';
      if (have_lqt) {
        const double n = normalized(strategy);
        out << n << ',' << 1.0 - n;
      } else {
        out << ',';
      }
      out << ',' << r.diverged << ',';
    } else {
      out << ",,,,,";
    }
    out << csv_safe(r.status) << '\n';
  }
  out.precision(precision);
}

std::uint64_t stage_seed(std::uint64_t master_seed, const std::string& stage,
                         const std::string& strategy, std::uint64_t seed_index,
                         std::uint64_t rollout_index) {
  return derive_seed(master_seed,
                     {hash_label(stage), hash_label(strategy), seed_index, rollout_index});
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
  std::ostringstream buf;
  writer(buf);
  write_text(path, buf.str());
}

void summarize(StrategyResult& r) {
  const double n = static_cast<double>(r.costs.size());
  double sum = 0.0;
  for (double c : r.costs) sum += c;
  r.mean_cost = sum / n;
  double ss = 0.0;
  for (double c : r.costs) ss += (c - r.mean_cost) * (c - r.mean_cost);
  r.std_cost = r.costs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

struct StageFailure {
  std::string stage;
  std::string message;
};

// Per-rollout evaluation rows: strategy, seed index, rollout index, cost, diverged.
struct EvalRow {
  Strategy strategy;
  int seed_index;
  int rollout;
  double cost;
  bool diverged;
};

class Progress {
 public:
  explicit Progress(std::ostream* log) : log_(log) {}
  template <typename... Args>
  void operator()(const Args&... args) const {
    if (!log_) return;
    (*log_ << ... << args) << std::endl;
  }

 private:
  std::ostream* log_;
};

}  // namespace

ComparisonReport run_preset(const Preset& preset, const std::set<Strategy>& strategies,
                            std::uint64_t master_seed,
                            const std::optional<fs::path>& output_dir,
                            const RunOptions& options) {
  preset.validate();
  if (strategies.empty()) throw ConfigError("at least one strategy is required");
  const EnvConfig& env = preset.env;
  const Progress log(options.log);
  const std::optional<fs::path>& out = output_dir;
  if (out) fs::create_directories(*out);

  ComparisonReport report;
  report.preset = preset.name;
  std::vector<EvalRow> eval_rows;

  auto fail = [&](Strategy s, const StageFailure& f) {
    StrategyResult& r = report.results[s];
    r.strategy = s;
    r.ok = false;
    r.status = "failed in " + f.stage + ": " + f.message;
    log("  ", to_string(s), ' ', r.status);
  };
  auto guarded = [&](const std::string& stage, auto&& body) -> std::optional<StageFailure> {
    try {
      body();
      return std::nullopt;
    } catch (const std::exception& e) {
      return StageFailure{stage, e.what()};
    }
  };

  const bool need_rom = strategies.count(Strategy::kLqt) || strategies.count(Strategy::kLqtPo) ||
                        strategies.count(Strategy::kPurePo);
  const bool need_design = strategies.count(Strategy::kLqt) || strategies.count(Strategy::kLqtPo);
  const std::uint64_t eval_seed = stage_seed(master_seed, "eval");

  std::optional<StageFailure> rom_failure;
  if (need_rom) {
    log(preset.name, ": identifying reduced model (N = ", preset.dmdc.snapshots, ")");
    rom_failure = guarded("fit-rom", [&] {
      const SnapshotSet snaps =
          collect_excited_trajectory(env, preset.dmdc.snapshots, preset.dmdc.excitation_stddev(),
                                     stage_seed(master_seed, "rom"));
      report.rom = dmdc_fit(snaps, preset.dmdc.rank, preset.dmdc.reduced_dim);
      if (out) save_rom(*out / "rom", *report.rom);
    });
  }

  std::optional<StageFailure> design_failure = rom_failure;
  if (need_design && !rom_failure) {
    log(preset.name, ": designing LQ tracking controller");
    design_failure = guarded("design", [&] {
      report.design = design_lqt(env, *report.rom);
      if (out) {
        fs::create_directories(*out / "lqt");
        write_matrix_csv(*out / "lqt" / "gains.csv", Policy::from(report.design->gains).gains);
        write_matrix_csv(*out / "lqt" / "P.csv", report.design->dare.P);
      }
    });
  }

  auto evaluate = [&](Strategy s, const std::optional<FeedbackLaw>& law, int seed_index,
                      StrategyResult& r) {
    const CostEstimate est = evaluate_law_cost(env, law, preset.n_eval, eval_seed,
                                               preset.train.divergence_cost_cap, options.execution);
    for (int i = 0; i < preset.n_eval; ++i) {
      r.costs.push_back(est.costs[i]);
      eval_rows.push_back({s, seed_index, i, est.costs[i], est.rollout_diverged[i] != 0});
    }
    r.diverged += est.diverged;
    return est;
  };

  // Rewritten after every strategy so an interrupted run keeps what finished.
  auto flush_summary = [&] {
    if (!out) return;
    write_file(*out / "evaluation.csv", [&](std::ostream& os) {
      os.precision(std::numeric_limits<double>::max_digits10);
      os << "strategy,seed_index,rollout,cost,diverged\n";
      for (const EvalRow& row : eval_rows) {
        os << to_string(row.strategy) << ',' << row.seed_index << ',' << row.rollout << ','
           << row.cost << ',' << (row.diverged ? 1 : 0) << '\n';
      }
    });
    write_file(*out / "report.csv", [&](std::ostream& os) { report.write_csv(os); });
  };

  for (Strategy s : strategies) {
    flush_summary();
    const std::string name = to_string(s);
    StrategyResult r;
    r.strategy = s;
    std::optional<StageFailure> failure;
    if (s == Strategy::kNone) {
      log(preset.name, ": evaluating ", name);
      failure = guarded("evaluate", [&] { evaluate(s, std::nullopt, 0, r); });
    } else if (s == Strategy::kLqt) {
      if (design_failure) {
        fail(s, *design_failure);
        continue;
      }
      log(preset.name, ": evaluating ", name);
      failure = guarded("evaluate", [&] {
        const Policy policy = Policy::from(report.design->gains);
        r.policies.push_back(policy);
        evaluate(s, policy.law(*report.rom), 0, r);
      });
    } else {
      const bool warm = s == Strategy::kLqtPo;
      if (warm ? design_failure.has_value() : rom_failure.has_value()) {
        fail(s, warm ? *design_failure : *rom_failure);
        continue;
      }
      const Rom& rom = *report.rom;
      const Policy initial = warm ? Policy::from(report.design->gains)
                                  : Policy::zero(env.n_a(), rom.n_s());
      for (int i = 0; i < preset.seeds && !failure; ++i) {
        log(preset.name, ": training ", name, " seed ", i + 1, "/", preset.seeds);
        failure = guarded("train", [&] {
          TrainConfig cfg = preset.train;
          cfg.learning_rate = warm ? preset.train.learning_rate : preset.learning_rate_pure;
          cfg.rng_seed = stage_seed(master_seed, "train", name, i);
          cfg.eval_seed = stage_seed(master_seed, "curve", "", i);
          cfg.execution = options.execution;
          TrainResult trained = train(env, rom, initial, cfg);
          if (out) {
            const fs::path dir = *out / name / ("seed_" + std::to_string(i));
            fs::create_directories(dir);
            write_file(dir / "train.csv", [&](std::ostream& os) {
              trained.record.write_csv(os, options.include_timing);
            });
            write_matrix_csv(dir / "gains.csv", trained.policy.gains);
          }
          r.curves.push_back(std::move(trained.record));
          r.policies.push_back(trained.policy);
        });
        if (failure) break;
        failure = guarded("evaluate", [&] { evaluate(s, r.policies.back().law(rom), i, r); });
      }
    }
    if (failure) {
      fail(s, *failure);
      continue;
    }
    summarize(r);
    log("  ", name, " mean cost ", r.mean_cost, " (", r.diverged, " diverged)");
    report.results[s] = std::move(r);
  }

  flush_summary();
  if (!out) return report;

  // Seed-averaged curves; normalized by the LQT policy's cost on the same
  // per-seed initial fields, which is exactly row 0 of each warm-start curve.
  std::optional<double> curve_reference;
  if (report.design && report.rom) {
    double sum = 0.0;
    for (int i = 0; i < preset.seeds; ++i) {
      sum += evaluate_policy_cost(env, *report.rom, Policy::from(report.design->gains),
                                  preset.train.eval_rollouts,
                                  stage_seed(master_seed, "curve", "", i),
                                  preset.train.divergence_cost_cap, options.execution)
                 .mean;
    }
    curve_reference = sum / preset.seeds;
  }
  write_file(*out / "curves.csv", [&](std::ostream& os) {
    os.precision(std::numeric_limits<double>::max_digits10);
    os << "strategy,iteration,mean_cost,std_cost,normalized_cost\n";
    for (Strategy s : {Strategy::kLqtPo, Strategy::kPurePo}) {
      const auto it = report.results.find(s);
      if (it == report.results.end() || !it->second.ok) continue;
      const auto& curves = it->second.curves;
      const std::vector<double> mean = report.mean_curve(s);
      for (size_t k = 0; k < mean.size(); ++k) {
        double ss = 0.0;
        for (const TrainRecord& rec : curves) {
          const double d = rec.rows[k].mean_cost - mean[k];
          ss += d * d;
        }
        const double sd = curves.size() > 1 ? std::sqrt(ss / (curves.size() - 1.0)) : 0.0;
        os << to_string(s) << ',' << curves.front().rows[k].iteration << ',' << mean[k] << ','
           << sd << ',';
        if (curve_reference) os << mean[k] / *curve_reference;
        os << '\n';
      }
    }
  });

  if (options.emit_fields) {
    const int T = env.horizon;
    const std::vector<int> steps = {0, T / 4, T / 2, (3 * T) / 4, T};
    fs::create_directories(*out / "fields");
    for (const auto& [s, r] : report.results) {
      if (!r.ok) continue;
      std::optional<Policy> policy;
      if (!r.policies.empty()) policy = r.policies.front();
      emit_field_snapshots(preset, policy, report.rom, steps,
                           *out / "fields" / (to_string(s) + ".csv"));
    }
  }

  return report;
}

// ---------------------------------------------------------------------------
// Field snapshots

void emit_field_snapshots(const Preset& preset, const std::optional<Policy>& policy,
                          const std::optional<Rom>& rom, const std::vector<int>& steps,
                          std::ostream& out) {
  const EnvConfig& env = preset.env;
  if (policy && !rom) throw ConfigError("a policy needs the ROM it was designed for");
  std::optional<FeedbackLaw> law;
  if (policy) {
    if (policy->n_a() != env.n_a() || policy->n_s() != rom->n_s() || rom->U.rows() != env.n_z()) {
      throw ConfigError("policy and ROM do not match the preset dimensions");
    }
    law = policy->law(*rom);
  }
  std::vector<int> wanted = steps;
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
  if (!wanted.empty() && (wanted.front() < 0 || wanted.back() > env.horizon)) {
    throw ConfigError("snapshot steps must lie in [0, horizon]");
  }

  const auto precision = out.precision(std::numeric_limits<double>::max_digits10);
  auto row = [&](const std::string& kind, const std::string& step, const std::string& time,
                 const std::string& status, const Vector* values) {
    out << kind << ',' << step << ',' << time << ',' << status;
    if (values) {
      for (Eigen::Index i = 0; i < values->size(); ++i) out << ',' << (*values)(i);
    }
    out << '\n';
  };
  out << "kind,step,time,status";
  for (int i = 0; i < env.n_z(); ++i) out << ",v" << i;
  out << '\n';
  const Vector grid = env.grid.points();
  row("grid", "", "", "ok", &grid);
  row("target", "", "", "ok", &env.target_state);

  // Same control law as rollout(), stepped by hand so the states before a
  // blow-up are still emitted.
  Matrix feedback;
  Vector feedforward;
  if (law) {
    const Eigen::Index n_s = law->projection.cols();
    feedback = law->policy.leftCols(n_s) * law->projection.transpose();
    feedforward = law->policy.rightCols(n_s) * (law->projection.transpose() * env.target_state);
  }
  SpectralStepper stepper(env);
  Vector z = mean_initial_state(env);
  const long substeps = env.substeps_per_step();
  size_t next = 0;
  for (int k = 0; next < wanted.size(); ++k) {
    if (wanted[next] == k) {
      std::ostringstream t;
      t.precision(std::numeric_limits<double>::max_digits10);
      t << k * env.sampling_time;
      row("field", std::to_string(k), t.str(), "ok", &z);
      ++next;
    }
    if (next == wanted.size()) break;
    const Vector a = law ? Vector(feedback * z + feedforward) : Vector::Zero(env.n_a());
    try {
      z = stepper.step(z, a, k * substeps);
    } catch (const DivergenceError& e) {
      const long at = e.substep() / substeps;
      std::ostringstream t;
      t.precision(std::numeric_limits<double>::max_digits10);
      t << (at + 1) * env.sampling_time;
      row("field", std::to_string(at + 1), t.str(), "diverged", nullptr);
      break;
    }
  }
  out.precision(precision);
}

void emit_field_snapshots(const Preset& preset, const std::optional<Policy>& policy,
                          const std::optional<Rom>& rom, const std::vector<int>& steps,
                          const fs::path& output_path) {
  std::ostringstream buf;
  emit_field_snapshots(preset, policy, rom, steps, buf);
  write_text(output_path, buf.str());
}

}  // namespace romtune
