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

#ifndef ROMTUNE_PO_HPP_
#define ROMTUNE_PO_HPP_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "romtune/lq_control.hpp"
#include "romtune/pde_env.hpp"
#include "romtune/rom.hpp"

namespace romtune {

/// Concatenated reduced-order gains [K_a | K_b], n_a x 2 n_s.
struct Policy {
  Matrix gains;

  static Policy zero(int n_a, int n_s) { return {Matrix::Zero(n_a, 2 * n_s)}; }
  static Policy from(const TrackingGains& g);

  int n_a() const { return static_cast<int>(gains.rows()); }
  int n_s() const { return static_cast<int>(gains.cols() / 2); }
  Matrix K_a() const { return gains.leftCols(n_s()); }
  Matrix K_b() const { return gains.rightCols(n_s()); }

  FeedbackLaw law(const Rom& rom) const { return {gains, rom.U}; }
};

/// Serial is the reference schedule; kParallel spreads independent rollouts
/// over OpenMP threads and must give bit-identical results.
enum class Execution { kSerial, kParallel };

struct TrainConfig {
  double learning_rate = 1e-4;
  // The update is pi -= learning_rate * cost_scale * g, i.e. descent on
  // cost_scale * J. Rescales the rollout cost to the range the learning rate
  // was chosen for without touching Q and R.
  double cost_scale = 1.0;
  double smoothing_radius = 0.1;
  int iterations = 40;
  int oracle_samples = 8;
  int eval_rollouts = 4;
  std::uint64_t rng_seed = 0;
  // Initial conditions of the per-iteration cost estimate are drawn from this
  // seed, so curves started from different policies see the same fields.
  std::uint64_t eval_seed = 0;
  double divergence_cost_cap = 1e8;
  Execution execution = Execution::kSerial;

  void validate() const;
};

struct TrainRow {
  int iteration = 0;
  double mean_cost = 0.0;
  double grad_norm = 0.0;
  int discarded = 0;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
};

/// Row 0 is the initial policy (no update); row i > 0 follows the i-th update.
struct TrainRecord {
  std::vector<TrainRow> rows;

  /// iteration,mean_cost,grad_norm,discarded,wall_time_s,seed
  void write_csv(std::ostream& out, bool include_timing = true) const;
};

struct CostEstimate {
  double mean = 0.0;
  double stddev = 0.0;
  int diverged = 0;
  std::vector<double> costs;
  std::vector<char> rollout_diverged;  // per rollout, 1 when capped
};

/// Average closed-loop (or uncontrolled, when `law` is empty) cost over
/// `n_rollouts` initial fields drawn from seeds derive_seed(rng_seed, {i}).
/// Diverged rollouts count as `divergence_cost_cap`.
CostEstimate evaluate_law_cost(const EnvConfig& config, const std::optional<FeedbackLaw>& law,
                               int n_rollouts, std::uint64_t rng_seed,
                               double divergence_cost_cap = 1e8,
                               Execution execution = Execution::kSerial);

CostEstimate evaluate_policy_cost(const EnvConfig& config, const Rom& rom, const Policy& policy,
                                  int n_rollouts, std::uint64_t rng_seed,
                                  double divergence_cost_cap = 1e8,
                                  Execution execution = Execution::kSerial);

/// Scalar objective over policy matrices; std::nullopt marks a diverged rollout.
using PolicyObjective = std::function<std::optional<double>(const Matrix&)>;

struct GradientSample {
  Matrix gradient;
  bool diverged = false;
  double cost_plus = 0.0;
  double cost_minus = 0.0;
};

/// Unit-Frobenius Gaussian direction of the given shape.
Matrix sample_direction(Eigen::Index rows, Eigen::Index cols, std::uint64_t rng_seed);

/// Two-point estimate (n_a n_s / r) [J(pi + r Theta) - J(pi - r Theta)] Theta
/// along `direction`, which must have unit Frobenius norm.
GradientSample two_point_estimate(const PolicyObjective& objective, const Matrix& policy,
                                  const Matrix& direction, double radius);

/// Same, with the direction drawn from `rng_seed`.
GradientSample zeroth_order_gradient(const PolicyObjective& objective, const Policy& policy,
                                     double radius, std::uint64_t rng_seed);

/// Environment oracle: one initial field per call, shared by both rollouts.
GradientSample zeroth_order_gradient(const EnvConfig& config, const Rom& rom,
                                     const Policy& policy, double radius,
                                     std::uint64_t rng_seed);

Policy pg_update(const Policy& policy, const Matrix& gradient, double learning_rate);

struct TrainResult {
  Policy policy;
  TrainRecord record;
};

/// Builds one oracle objective for sample seed `seed`.
using ObjectiveFactory = std::function<PolicyObjective(std::uint64_t seed)>;
/// Cost estimate of the current policy, recorded once per iteration.
using CostProbe = std::function<double(const Policy&)>;

/// Vanilla policy-gradient descent with averaged two-point estimates. Diverged
/// samples are dropped; an iteration whose samples all diverged makes no update.
TrainResult train(const ObjectiveFactory& make_objective, const CostProbe& probe,
                  const Policy& initial_policy, const TrainConfig& train_config);

/// train() on the nonlinear environment.
TrainResult train(const EnvConfig& config, const Rom& rom, const Policy& initial_policy,
                  const TrainConfig& train_config);

/// Seed of oracle sample `sample` in iteration `iteration`.
std::uint64_t oracle_seed(std::uint64_t rng_seed, int iteration, int sample);

}  // namespace romtune

#endif  // ROMTUNE_PO_HPP_
