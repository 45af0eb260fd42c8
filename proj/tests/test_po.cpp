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

#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <omp.h>

#include "romtune/harness.hpp"
#include "romtune/seed.hpp"

namespace romtune {
namespace {

// J(pi) = |pi|_F^2, whose gradient is 2 pi.
const PolicyObjective kQuadratic = [](const Matrix& pi) -> std::optional<double> {
  return pi.squaredNorm();
};

EnvConfig small_env() {
  return make_env_config({1.0, 32}, Burgers{1e-2}, {2, 0.25}, 0.05, 0.01, 20, 1.0, 1.0,
                         {TargetField::Shape::kCosine, 0.1}, SechPulse{});
}

TEST(Direction, IsUnitAndDeterministic) {
  const Matrix a = sample_direction(3, 8, 42);
  EXPECT_NEAR(a.norm(), 1.0, 1e-15);
  EXPECT_EQ(a, sample_direction(3, 8, 42));
  EXPECT_NE(a, sample_direction(3, 8, 43));
}

TEST(Estimator, QuadraticStubIsExact) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> radius(0.05, 1.0);
  std::uniform_int_distribution<int> dim(1, 4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_a = dim(rng);
    const int n_s = dim(rng);
    const Matrix pi = Matrix::Random(n_a, 2 * n_s);
    const Matrix theta = sample_direction(n_a, 2 * n_s, rng());
    const double r = radius(rng);
    const GradientSample g = two_point_estimate(kQuadratic, pi, theta, r);
    const Matrix expected = 4.0 * n_a * n_s * (pi.cwiseProduct(theta).sum()) * theta;
    ASSERT_FALSE(g.diverged);
    EXPECT_LE((g.gradient - expected).norm(), 1e-12 * std::max(1.0, expected.norm()))
        << "trial " << trial;
  }
}

TEST(Estimator, ConstantObjectiveGivesZero) {
  const PolicyObjective flat = [](const Matrix&) -> std::optional<double> { return 3.5; };
  const GradientSample g = two_point_estimate(flat, Matrix::Ones(2, 4),
                                              sample_direction(2, 4, 1), 0.1);
  EXPECT_EQ(g.gradient, Matrix::Zero(2, 4));
}

TEST(Estimator, DivergedSideDiscardsTheSample) {
  const PolicyObjective half = [](const Matrix& pi) -> std::optional<double> {
    if (pi.sum() > 0.0) return std::nullopt;
    return 1.0;
  };
  const Matrix theta = Matrix::Constant(1, 2, std::sqrt(0.5));
  const GradientSample g = two_point_estimate(half, Matrix::Zero(1, 2), theta, 0.1);
  EXPECT_TRUE(g.diverged);
  EXPECT_EQ(g.gradient, Matrix::Zero(1, 2));
}

TEST(Estimator, RejectsBadArguments) {
  EXPECT_THROW(two_point_estimate(kQuadratic, Matrix::Zero(1, 2), Matrix::Zero(1, 2), 0.0),
               std::invalid_argument);
  EXPECT_THROW(two_point_estimate(kQuadratic, Matrix::Zero(1, 2), Matrix::Zero(2, 2), 0.1),
               std::invalid_argument);
}

class Unbiasedness : public ::testing::TestWithParam<int> {};

TEST_P(Unbiasedness, MeanMatchesTheTrueGradient) {
  const int n_a = GetParam() == 16 ? 4 : GetParam() == 4 ? 2 : 1;
  const int n_s = GetParam() / n_a;
  const int d = 2 * n_a * n_s;
  // Equal-magnitude entries keep the relative error comparable across entries.
  std::mt19937_64 rng(5);
  Matrix pi(n_a, 2 * n_s);
  for (Eigen::Index k = 0; k < pi.size(); ++k) pi(k) = (rng() & 1) ? 0.5 : -0.5;
  const Policy policy{pi};
  // The per-sample relative spread is sqrt(d - 1); 12500 d samples put 5% beyond 5 sigma.
  const int n = std::max(10000, 12500 * d);
  Matrix sum = Matrix::Zero(n_a, 2 * n_s);
  for (int k = 0; k < n; ++k) {
    sum += zeroth_order_gradient(kQuadratic, policy, 0.1, derive_seed(77, {std::uint64_t(k)}))
               .gradient;
  }
  const Matrix mean = sum / n;
  const Matrix truth = 2.0 * pi;
  for (Eigen::Index k = 0; k < pi.size(); ++k) {
    EXPECT_NEAR(mean(k), truth(k), 0.05 * std::abs(truth(k))) << "entry " << k;
  }
}

INSTANTIATE_TEST_SUITE_P(Sizes, Unbiasedness, ::testing::Values(1, 4, 16));

TEST(Update, Examples) {
  const Policy p{Matrix{{1.0, 2.0}}};
  EXPECT_EQ(pg_update(p, Matrix{{1.0, -1.0}}, 0.5).gains, (Matrix{{0.5, 2.5}}));
  EXPECT_EQ(pg_update(p, Matrix::Zero(1, 2), 0.5).gains, p.gains);
  EXPECT_THROW(pg_update(p, Matrix::Zero(2, 2), 0.5), std::invalid_argument);
}

TEST(Policy, SplitsIntoFeedbackAndFeedforward) {
  const TrackingGains g{Matrix{{1.0, 2.0}}, Matrix{{3.0, 4.0}}};
  const Policy p = Policy::from(g);
  EXPECT_EQ(p.gains, (Matrix{{1.0, 2.0, 3.0, 4.0}}));
  EXPECT_EQ(p.K_a(), g.K_a);
  EXPECT_EQ(p.K_b(), g.K_b);
  EXPECT_EQ(p.n_s(), 2);
  EXPECT_THROW(Policy::from({Matrix::Zero(1, 2), Matrix::Zero(1, 3)}), std::invalid_argument);
}

TrainResult train_quadratic(const Policy& start, const TrainConfig& tc) {
  return train([](std::uint64_t) { return kQuadratic; },
               [](const Policy& p) { return p.gains.squaredNorm(); }, start, tc);
}

TEST(Train, ZeroIterationsReturnsTheInitialPolicy) {
  TrainConfig tc;
  tc.iterations = 0;
  const Policy start{Matrix::Constant(2, 4, 0.3)};
  const TrainResult r = train_quadratic(start, tc);
  EXPECT_EQ(r.policy.gains, start.gains);
  ASSERT_EQ(r.record.rows.size(), 1u);
  EXPECT_EQ(r.record.rows[0].iteration, 0);
  EXPECT_DOUBLE_EQ(r.record.rows[0].mean_cost, start.gains.squaredNorm());
}

TEST(Train, QuadraticStubDecreasesMonotonically) {
  TrainConfig tc;
  tc.iterations = 60;
  tc.oracle_samples = 256;
  tc.learning_rate = 0.02;
  const TrainResult r = train_quadratic(Policy{Matrix::Constant(2, 4, 1.0)}, tc);
  ASSERT_EQ(r.record.rows.size(), 61u);
  for (std::size_t k = 1; k < r.record.rows.size(); ++k) {
    EXPECT_LT(r.record.rows[k].mean_cost, r.record.rows[k - 1].mean_cost) << "iteration " << k;
  }
  EXPECT_LT(r.record.rows.back().mean_cost, 0.2 * r.record.rows.front().mean_cost);
}

TEST(Train, CostScaleMultipliesTheStep) {
  TrainConfig a;
  a.iterations = 1;
  a.learning_rate = 0.01;
  TrainConfig b = a;
  b.learning_rate = 0.02;
  b.cost_scale = 0.5;
  const Policy start{Matrix::Constant(1, 2, 1.0)};
  EXPECT_EQ(train_quadratic(start, a).policy.gains, train_quadratic(start, b).policy.gains);
}

TEST(Train, AllDivergedIterationLeavesThePolicy) {
  TrainConfig tc;
  tc.iterations = 3;
  const Policy start{Matrix::Constant(1, 2, 0.7)};
  const TrainResult r =
      train([](std::uint64_t) -> PolicyObjective {
              return [](const Matrix&) -> std::optional<double> { return std::nullopt; };
            },
            [](const Policy&) { return 1.0; }, start, tc);
  EXPECT_EQ(r.policy.gains, start.gains);
  for (std::size_t k = 1; k < r.record.rows.size(); ++k) {
    EXPECT_EQ(r.record.rows[k].discarded, tc.oracle_samples);
    EXPECT_EQ(r.record.rows[k].grad_norm, 0.0);
  }
}

TEST(Train, PartialDivergenceAveragesTheKeptSamples) {
  // Samples whose seed is odd diverge; the update uses only the others.
  TrainConfig tc;
  tc.iterations = 1;
  tc.oracle_samples = 8;
  const Policy start{Matrix::Constant(1, 2, 0.7)};
  const TrainResult r = train(
      [](std::uint64_t seed) -> PolicyObjective {
        if (seed & 1) return [](const Matrix&) -> std::optional<double> { return std::nullopt; };
        return kQuadratic;
      },
      [](const Policy& p) { return p.gains.squaredNorm(); }, start, tc);
  int odd = 0;
  Matrix sum = Matrix::Zero(1, 2);
  for (int j = 0; j < tc.oracle_samples; ++j) {
    const std::uint64_t seed = oracle_seed(tc.rng_seed, 1, j);
    if (seed & 1) {
      ++odd;
      continue;
    }
    sum += zeroth_order_gradient(kQuadratic, start, tc.smoothing_radius, seed).gradient;
  }
  EXPECT_EQ(r.record.rows[1].discarded, odd);
  if (odd < tc.oracle_samples) {
    const Matrix expected =
        start.gains - tc.learning_rate * tc.cost_scale * sum / (tc.oracle_samples - odd);
    EXPECT_EQ(r.policy.gains, expected);
  }
}

TEST(Train, RejectsBadConfig) {
  TrainConfig tc;
  tc.oracle_samples = 0;
  EXPECT_THROW(train_quadratic(Policy{Matrix::Zero(1, 2)}, tc), std::invalid_argument);
  tc = {};
  tc.learning_rate = -1.0;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
}

TEST(Train, RecordCsvHidesTimingUnlessAsked) {
  TrainRecord rec;
  rec.rows.push_back({0, 1.5, 0.0, 0, 3.25, 11});
  std::ostringstream plain;
  rec.write_csv(plain, false);
  EXPECT_EQ(plain.str(), "iteration,mean_cost,grad_norm,discarded,wall_time_s,seed\n"
                         "0,1.5,0,0,0,11\n");
  std::ostringstream timed;
  rec.write_csv(timed, true);
  EXPECT_NE(timed.str().find(",3.25,"), std::string::npos);
}

class RolloutTraining : public ::testing::Test {
 protected:
  void SetUp() override {
    env_ = small_env();
    rom_ = dmdc_fit(collect_excited_trajectory(env_, 60, 0.3, 9), 4, 2);
  }
  EnvConfig env_;
  Rom rom_;
};

TEST_F(RolloutTraining, SerialAndParallelAreBitIdentical) {
  TrainConfig tc;
  tc.iterations = 3;
  tc.learning_rate = 1e-3;
  tc.rng_seed = 123;
  tc.eval_seed = 456;
  const Policy start = Policy::zero(env_.n_a(), rom_.n_s());
  const TrainResult serial = train(env_, rom_, start, tc);
  tc.execution = Execution::kParallel;
  const int before = omp_get_max_threads();
  omp_set_num_threads(4);
  const TrainResult parallel = train(env_, rom_, start, tc);
  omp_set_num_threads(before);
  EXPECT_EQ(serial.policy.gains, parallel.policy.gains);
  ASSERT_EQ(serial.record.rows.size(), parallel.record.rows.size());
  for (std::size_t k = 0; k < serial.record.rows.size(); ++k) {
    EXPECT_EQ(serial.record.rows[k].mean_cost, parallel.record.rows[k].mean_cost);
    EXPECT_EQ(serial.record.rows[k].grad_norm, parallel.record.rows[k].grad_norm);
  }
  EXPECT_NE(serial.policy.gains, start.gains);
}

TEST_F(RolloutTraining, RejectsMisshapenPolicy) {
  EXPECT_THROW(train(env_, rom_, Policy::zero(env_.n_a(), 3), TrainConfig{}),
               std::invalid_argument);
}

TEST_F(RolloutTraining, EvaluationMatchesIndividualRollouts) {
  const Policy p = Policy::zero(env_.n_a(), rom_.n_s());
  const CostEstimate est = evaluate_policy_cost(env_, rom_, p, 5, 31);
  ASSERT_EQ(est.costs.size(), 5u);
  double sum = 0.0;
  for (int i = 0; i < 5; ++i) {
    const Vector z0 = sample_initial_state(env_, derive_seed(31, {std::uint64_t(i)}));
    EXPECT_EQ(est.costs[i], rollout_cost(env_, p.law(rom_), z0));
    EXPECT_EQ(est.rollout_diverged[i], 0);
    sum += est.costs[i];
  }
  EXPECT_DOUBLE_EQ(est.mean, sum / 5);
  EXPECT_EQ(evaluate_policy_cost(env_, rom_, p, 1, 31).stddev, 0.0);
  EXPECT_THROW(evaluate_policy_cost(env_, rom_, p, 0, 31), std::invalid_argument);
}

TEST_F(RolloutTraining, DivergedRolloutsAreCapped) {
  const Policy wild{Matrix::Constant(env_.n_a(), 2 * rom_.n_s(), 1e6)};
  const CostEstimate est = evaluate_policy_cost(env_, rom_, wild, 3, 1, 5e7);
  EXPECT_EQ(est.diverged, 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(est.costs[i], 5e7);
    EXPECT_EQ(est.rollout_diverged[i], 1);
  }
}

}  // namespace
}  // namespace romtune
