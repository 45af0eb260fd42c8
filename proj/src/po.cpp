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

#include "romtune/po.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <ostream>
#include <random>

#include "romtune/seed.hpp"

namespace romtune {

namespace {

// Runs body(i) for i in [0, n). Exceptions escaping an OpenMP region are
// fatal, so the first one is captured and rethrown after the loop.
template <typename Body>
void for_each_index(int n, Execution execution, Body&& body) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1) if (execution == Execution::kParallel)
  for (int i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(romtune_for_each_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

Policy Policy::from(const TrackingGains& g) {
  if (g.K_a.rows() != g.K_b.rows() || g.K_a.cols() != g.K_b.cols()) {
    throw std::invalid_argument("K_a and K_b must have the same shape");
  }
  Policy p;
  p.gains.resize(g.K_a.rows(), 2 * g.K_a.cols());
  p.gains << g.K_a, g.K_b;
  return p;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(cost_scale > 0.0)) throw std::invalid_argument("cost_scale must be positive");
  if (!(smoothing_radius > 0.0)) throw std::invalid_argument("smoothing_radius must be positive");
  if (iterations < 0) throw std::invalid_argument("iterations must be nonnegative");
  if (oracle_samples < 1) throw std::invalid_argument("oracle_samples must be at least 1");
  if (eval_rollouts < 1) throw std::invalid_argument("eval_rollouts must be at least 1");
  if (!(divergence_cost_cap > 0.0)) {
    throw std::invalid_argument("divergence_cost_cap must be positive");
  }
}

void TrainRecord::write_csv(std::ostream& out, bool include_timing) const {
  const auto precision = out.precision(std::numeric_limits<double>::max_digits10);
  out << "iteration,mean_cost,grad_norm,discarded,wall_time_s,seed\n";
  for (const TrainRow& row : rows) {
    out << row.iteration << ',' << row.mean_cost << ',' << row.grad_norm << ','
        << row.discarded << ',' << (include_timing ? row.wall_time_s : 0.0) << ',' << row.seed
        << '\n';
  }
  out.precision(precision);
}

CostEstimate evaluate_law_cost(const EnvConfig& config, const std::optional<FeedbackLaw>& law,
                               int n_rollouts, std::uint64_t rng_seed,
                               double divergence_cost_cap, Execution execution) {
  if (n_rollouts < 1) throw std::invalid_argument("n_rollouts must be at least 1");
  CostEstimate est;
  est.costs.assign(n_rollouts, 0.0);
  est.rollout_diverged.assign(n_rollouts, 0);
  std::vector<char>& diverged = est.rollout_diverged;
  for_each_index(n_rollouts, execution, [&](int i) {
    const Vector z0 = sample_initial_state(config, derive_seed(rng_seed, {std::uint64_t(i)}));
    try {
      est.costs[i] = rollout_cost(config, law, z0);
    } catch (const DivergenceError&) {
      est.costs[i] = divergence_cost_cap;
      diverged[i] = 1;
    }
  });

  double sum = 0.0;
  for (int i = 0; i < n_rollouts; ++i) {
    sum += est.costs[i];
    est.diverged += diverged[i];
  }
  est.mean = sum / n_rollouts;
  if (n_rollouts > 1) {
    double ss = 0.0;
    for (double c : est.costs) ss += (c - est.mean) * (c - est.mean);
    est.stddev = std::sqrt(ss / (n_rollouts - 1));
  }
  return est;
}

CostEstimate evaluate_policy_cost(const EnvConfig& config, const Rom& rom, const Policy& policy,
                                  int n_rollouts, std::uint64_t rng_seed,
                                  double divergence_cost_cap, Execution execution) {
  return evaluate_law_cost(config, policy.law(rom), n_rollouts, rng_seed, divergence_cost_cap,
                           execution);
}

Matrix sample_direction(Eigen::Index rows, Eigen::Index cols, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix theta(rows, cols);
  // Column-major fill order is part of the reproducibility contract.
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) theta(i, j) = normal(rng);
  }
  return theta / theta.norm();
}

GradientSample two_point_estimate(const PolicyObjective& objective, const Matrix& policy,
                                  const Matrix& direction, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("smoothing radius must be positive");
  if (direction.rows() != policy.rows() || direction.cols() != policy.cols()) {
    throw std::invalid_argument("direction shape does not match the policy");
  }
  GradientSample out;
  const std::optional<double> plus = objective(policy + radius * direction);
  const std::optional<double> minus = objective(policy - radius * direction);
  if (!plus || !minus) {
    out.diverged = true;
    out.gradient = Matrix::Zero(policy.rows(), policy.cols());
    return out;
  }
  out.cost_plus = *plus;
  out.cost_minus = *minus;
  const double n_a = static_cast<double>(policy.rows());
  const double n_s = static_cast<double>(policy.cols()) / 2.0;
  out.gradient = (n_a * n_s / radius) * (out.cost_plus - out.cost_minus) * direction;
  return out;
}

GradientSample zeroth_order_gradient(const PolicyObjective& objective, const Policy& policy,
                                     double radius, std::uint64_t rng_seed) {
  const Matrix direction = sample_direction(policy.gains.rows(), policy.gains.cols(),
                                            derive_seed(rng_seed, {hash_label("direction")}));
  return two_point_estimate(objective, policy.gains, direction, radius);
}

namespace {

PolicyObjective rollout_objective(const EnvConfig& config, const Rom& rom, std::uint64_t seed) {
  Vector z0 = sample_initial_state(config, derive_seed(seed, {hash_label("initial")}));
  return [&config, &rom, z0 = std::move(z0)](const Matrix& gains) -> std::optional<double> {
    try {
      return rollout_cost(config, FeedbackLaw{gains, rom.U}, z0);
    } catch (const DivergenceError&) {
      return std::nullopt;
    }
  };
}

}  // namespace

GradientSample zeroth_order_gradient(const EnvConfig& config, const Rom& rom,
                                     const Policy& policy, double radius,
                                     std::uint64_t rng_seed) {
  return zeroth_order_gradient(rollout_objective(config, rom, rng_seed), policy, radius,
                               rng_seed);
}

Policy pg_update(const Policy& policy, const Matrix& gradient, double learning_rate) {
  if (gradient.rows() != policy.gains.rows() || gradient.cols() != policy.gains.cols()) {
    throw std::invalid_argument("gradient shape does not match the policy");
  }
  return {policy.gains - learning_rate * gradient};
}

std::uint64_t oracle_seed(std::uint64_t rng_seed, int iteration, int sample) {
  return derive_seed(rng_seed, {std::uint64_t(iteration), std::uint64_t(sample)});
}

TrainResult train(const ObjectiveFactory& make_objective, const CostProbe& probe,
                  const Policy& initial_policy, const TrainConfig& train_config) {
  train_config.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

  TrainResult result{initial_policy, {}};
  result.record.rows.push_back(
      {0, probe(result.policy), 0.0, 0, elapsed(), derive_seed(train_config.rng_seed, {0})});

  const int m = train_config.oracle_samples;
  std::vector<GradientSample> samples(m);
  for (int it = 1; it <= train_config.iterations; ++it) {
    for_each_index(m, train_config.execution, [&](int j) {
      const std::uint64_t seed = oracle_seed(train_config.rng_seed, it, j);
      samples[j] = zeroth_order_gradient(make_objective(seed), result.policy,
                                         train_config.smoothing_radius, seed);
    });

    // Summed in sample order so every schedule rounds identically.
    Matrix sum = Matrix::Zero(result.policy.gains.rows(), result.policy.gains.cols());
    int kept = 0;
    for (const GradientSample& s : samples) {
      if (s.diverged) continue;
      sum += s.gradient;
      ++kept;
    }
    TrainRow row;
    row.iteration = it;
    row.discarded = m - kept;
    row.seed = derive_seed(train_config.rng_seed, {std::uint64_t(it)});
    if (kept > 0) {
      const Matrix gradient = sum / kept;
      row.grad_norm = gradient.norm();
      result.policy = pg_update(result.policy, gradient,
                                train_config.learning_rate * train_config.cost_scale);
    }
    row.mean_cost = probe(result.policy);
    row.wall_time_s = elapsed();
    result.record.rows.push_back(row);
  }
  return result;
}

TrainResult train(const EnvConfig& config, const Rom& rom, const Policy& initial_policy,
                  const TrainConfig& train_config) {
  if (initial_policy.gains.rows() != config.n_a() ||
      initial_policy.gains.cols() != 2 * rom.n_s()) {
    throw std::invalid_argument("initial policy must be n_a x 2 n_s");
  }
  auto factory = [&](std::uint64_t seed) { return rollout_objective(config, rom, seed); };
  auto probe = [&](const Policy& policy) {
    return evaluate_policy_cost(config, rom, policy, train_config.eval_rollouts,
                                train_config.eval_seed, train_config.divergence_cost_cap,
                                train_config.execution)
        .mean;
  };
  return train(factory, probe, initial_policy, train_config);
}

}  // namespace romtune
