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

#include <gtest/gtest.h>

#include "romtune/harness.hpp"

namespace romtune {
namespace {

// Root of p^2 - p - 1 = 0, the scalar DARE with A = B = Q = R = 1.
const double kGolden = (1.0 + std::sqrt(5.0)) / 2.0;
const Matrix kOne = Matrix::Ones(1, 1);

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

TEST(Dare, ScalarGoldenRatio) {
  const DareSolution sol = solve_dare(kOne, kOne, kOne, kOne);
  EXPECT_NEAR(sol.P(0, 0), kGolden, 1e-8);
  EXPECT_LE(sol.residual, kDareTolerance);
  EXPECT_LE(dare_residual(kOne, kOne, kOne, kOne, sol.P), 1e-10);
}

TEST(Dare, ZeroDynamicsReturnsQ) {
  std::mt19937_64 rng(1);
  const Matrix B = gaussian(3, 2, rng);
  const Matrix L = gaussian(3, 3, rng);
  const Matrix Q = L * L.transpose();
  const DareSolution sol = solve_dare(Matrix::Zero(3, 3), B, Q, Matrix::Identity(2, 2));
  EXPECT_EQ(sol.P, Q);
}

TEST(Dare, ZeroCostGivesZeroSolutionAndGains) {
  const Matrix A = Matrix{{0.5, 0.1}, {0.0, -0.3}};
  const Matrix B = Matrix{{1.0}, {0.5}};
  const Matrix Q = Matrix::Zero(2, 2);
  const DareSolution sol = solve_dare(A, B, Q, kOne);
  EXPECT_EQ(sol.P, Matrix::Zero(2, 2));
  const TrackingGains g = tracking_gains(A, B, sol.P, Q, kOne);
  EXPECT_EQ(g.K_a, Matrix::Zero(1, 2));
  EXPECT_EQ(g.K_b, Matrix::Zero(1, 2));
}

TEST(Dare, RandomSystemsSatisfyTheFixedPoint) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 7;
    const int m = 1 + trial % 3;
    const Matrix A = gaussian(n, n, rng) * (1.2 / std::sqrt(static_cast<double>(n)));
    const Matrix B = gaussian(n, m, rng);
    const Matrix L = gaussian(n, n, rng);
    const Matrix Q = L * L.transpose() + 0.1 * Matrix::Identity(n, n);
    const Matrix R = Matrix::Identity(m, m) * 0.5;
    const DareSolution sol = solve_dare(A, B, Q, R);
    EXPECT_LE(dare_residual(A, B, Q, R, sol.P), 1e-10) << "trial " << trial;
    EXPECT_LE((sol.P - sol.P.transpose()).norm(), 1e-10);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(sol.P).eigenvalues().minCoeff(), -1e-10);
    const TrackingGains g = tracking_gains(A, B, sol.P, Q, R);
    EXPECT_LT(spectral_radius(A + B * g.K_a), 1.0);
  }
}

TEST(Dare, UnstabilizableSystemFailsWithResidual) {
  // Unstable mode with no actuation.
  const Matrix A = Matrix{{2.0}};
  const Matrix B = Matrix{{0.0}};
  try {
    solve_dare(A, B, kOne, kOne, 1e-10, 200);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.residual(), 1e-10);
  }
}

TEST(Dare, RejectsBadDimensions) {
  EXPECT_THROW(solve_dare(Matrix::Identity(2, 2), kOne, kOne, kOne), std::invalid_argument);
  EXPECT_THROW(solve_dare(kOne, kOne, kOne, -kOne), std::invalid_argument);
}

TEST(Gains, ScalarTrackingGains) {
  const DareSolution sol = solve_dare(kOne, kOne, kOne, kOne);
  const TrackingGains g = tracking_gains(kOne, kOne, sol.P, kOne, kOne);
  // Quadratic-formula oracle: K_a = -p / (1 + p) = 1 - p, K_b = -K_a.
  EXPECT_NEAR(g.K_a(0, 0), 1.0 - kGolden, 1e-8);
  EXPECT_NEAR(g.K_b(0, 0), kGolden - 1.0, 1e-8);
  EXPECT_NEAR(spectral_radius(kOne + g.K_a), 0.381966, 1e-6);
}

TEST(Gains, SingularResolventIsReported) {
  // A = 1, B = 0: the closed loop keeps the unit eigenvalue.
  EXPECT_THROW(tracking_gains(kOne, Matrix::Zero(1, 1), kOne, kOne, kOne),
               SingularResolventError);
}

TEST(SpectralRadius, Examples) {
  EXPECT_NEAR(spectral_radius(Matrix::Identity(3, 3)), 1.0, 1e-15);
  const Matrix d = Vector{{0.5, -0.9}}.asDiagonal();
  EXPECT_NEAR(spectral_radius(d), 0.9, 1e-15);
  const Matrix rot = Matrix{{0.0, -0.7}, {0.7, 0.0}};
  EXPECT_NEAR(spectral_radius(rot), 0.7, 1e-14);
}

TEST(SpectralRadius, LargeMatricesAgreeWithDenseSolve) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    // Symmetric so the dominant eigenvalue is real and power iteration converges.
    const Matrix L = gaussian(30, 30, rng);
    const Matrix M = 0.5 * (L + L.transpose());
    const double dense = Eigen::EigenSolver<Matrix>(M, false).eigenvalues().cwiseAbs().maxCoeff();
    EXPECT_NEAR(spectral_radius(M), dense, 1e-8 * dense);
    // Non-symmetric: complex dominant pairs take the dense fallback.
    const Matrix N = gaussian(24, 24, rng);
    const double dn = Eigen::EigenSolver<Matrix>(N, false).eigenvalues().cwiseAbs().maxCoeff();
    EXPECT_NEAR(spectral_radius(N), dn, 1e-6 * dn);
  }
}

TEST(Controller, ScalarAffineLaw) {
  const TrackingGains g{Matrix{{-0.6}}, Matrix{{0.6}}};
  Rom rom;
  rom.U = kOne;
  EXPECT_NEAR(mb_controller_act(g, rom, Vector{{2.0}}, Vector{{0.5}})(0), -1.2 + 0.3, 1e-15);
  EXPECT_EQ(mb_controller_act(g, rom, Vector::Zero(1), Vector::Zero(1)), Vector::Zero(1));
  const TrackingGains zero{Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  EXPECT_EQ(mb_controller_act(zero, rom, Vector{{3.0}}, Vector{{1.0}}), Vector::Zero(1));
}

TEST(Controller, RegulationUsesOnlyTheFeedback) {
  std::mt19937_64 rng(12);
  Rom rom;
  rom.U = gaussian(12, 3, rng).householderQr().householderQ() * Matrix::Identity(12, 3);
  const TrackingGains g{gaussian(2, 3, rng), gaussian(2, 3, rng)};
  const Vector z = gaussian(12, 1, rng);
  EXPECT_EQ(mb_controller_act(g, rom, z, Vector::Zero(12)),
            Vector(g.K_a * (rom.U.transpose() * z)));
}

TEST(Feedforward, ScalarRecursionDecaysGeometrically) {
  const DareSolution sol = solve_dare(kOne, kOne, kOne, kOne);
  const Vector s_r = Vector::Ones(1);
  // One-term truncation: |1/(1+p) - p/(1+p)| = sqrt(5) - 2.
  EXPECT_NEAR(verify_feedforward_via_recursion(kOne, kOne, sol.P, kOne, kOne, s_r, 0),
              std::sqrt(5.0) - 2.0, 1e-9);
  EXPECT_LT(verify_feedforward_via_recursion(kOne, kOne, sol.P, kOne, kOne, s_r, 50), 1e-12);
  const double rate = 1.0 - 1.0 / kGolden;  // closed loop 1 - 0.618034
  for (int n = 1; n <= 20; ++n) {
    const double d = verify_feedforward_via_recursion(kOne, kOne, sol.P, kOne, kOne, s_r, n);
    EXPECT_NEAR(d, (1.0 / kGolden) * std::pow(rate, n + 1), 1e-10) << "n = " << n;
  }
  for (int n : {0, 5, 30}) {
    EXPECT_EQ(
        verify_feedforward_via_recursion(kOne, kOne, sol.P, kOne, kOne, Vector::Zero(1), n),
        0.0);
  }
}

TEST(Feedforward, RandomSystemsConverge) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix A = gaussian(4, 4, rng) * 0.6;
    const Matrix B = gaussian(4, 2, rng);
    const Matrix Q = Matrix::Identity(4, 4);
    const Matrix R = Matrix::Identity(2, 2);
    const Vector s_r = gaussian(4, 1, rng);
    const DareSolution sol = solve_dare(A, B, Q, R);
    EXPECT_LT(verify_feedforward_via_recursion(A, B, sol.P, Q, R, s_r, 200), 1e-10);
  }
}

TEST(Design, PresetTwoRomIsStabilized) {
  const Preset p = builtin_preset("p2");
  const SnapshotSet s = collect_excited_trajectory(p.env, p.dmdc.snapshots,
                                                   p.dmdc.excitation_stddev(), 17);
  const Rom rom = dmdc_fit(s, p.dmdc.rank, p.dmdc.reduced_dim);
  const LqtDesign d = design_lqt(p.env, rom);
  EXPECT_LT(d.closed_loop_radius, 1.0);
  EXPECT_LE(dare_residual(rom.A, rom.B, d.cost.Q, d.cost.R, d.dare.P), 1e-10);
  EXPECT_LE((d.cost.Q - d.cost.Q.transpose()).norm(), 1e-12);
  EXPECT_LT((d.cost.s_r - rom.U.transpose() * p.env.target_state).norm(), 1e-12);
}

}  // namespace
}  // namespace romtune
