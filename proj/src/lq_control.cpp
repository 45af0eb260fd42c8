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

#include "romtune/lq_control.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace romtune {

namespace {

void check_dimensions(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != B.cols() || R.cols() != B.cols()) {
    throw std::invalid_argument("inconsistent LQ problem dimensions");
  }
}

// One Riccati map evaluation: A'PA - A'PB (R + B'PB)^{-1} B'PA + Q.
Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                   const Matrix& P) {
  const Matrix PA = P * A;
  const Matrix BtPA = B.transpose() * PA;
  const Matrix S = R + B.transpose() * P * B;
  return A.transpose() * PA - BtPA.transpose() * S.ldlt().solve(BtPA) + Q;
}

}  // namespace

ReducedCostSpec reduce_cost(const EnvConfig& config, const Rom& rom) {
  if (rom.U.rows() != config.n_z()) throw std::invalid_argument("ROM does not match n_z");
  ReducedCostSpec cost;
  cost.Q = rom.U.transpose() * config.Q * rom.U;
  cost.Q = 0.5 * (cost.Q + cost.Q.transpose()).eval();
  cost.R = config.R;
  cost.s_r = rom.U.transpose() * config.target_state;
  return cost;
}

double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                     const Matrix& P) {
  check_dimensions(A, B, Q, R);
  return (riccati_map(A, B, Q, R, P) - P).norm();
}

DareSolution solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                        double tolerance, int max_iterations) {
  check_dimensions(A, B, Q, R);
  if (Eigen::LLT<Matrix>(R).info() != Eigen::Success) {
    throw std::invalid_argument("R must be positive definite");
  }

  DareSolution sol;
  sol.P = 0.5 * (Q + Q.transpose());
  for (int it = 0; it <= max_iterations; ++it) {
    Matrix next = riccati_map(A, B, Q, R, sol.P);
    sol.residual = (next - sol.P).norm();
    sol.iterations = it;
    if (!std::isfinite(sol.residual)) break;
    if (sol.residual <= tolerance) return sol;
    sol.P = 0.5 * (next + next.transpose());
  }
  std::ostringstream msg;
  msg << "Riccati iteration did not converge in " << max_iterations
      << " iterations (residual " << sol.residual << "); the ROM may be unstabilizable";
  throw ConvergenceError(msg.str(), sol.residual);
}

TrackingGains tracking_gains(const Matrix& A, const Matrix& B, const Matrix& P, const Matrix& Q,
                             const Matrix& R) {
  check_dimensions(A, B, Q, R);
  const Eigen::Index n = A.rows();
  const Eigen::LDLT<Matrix> S = (R + B.transpose() * P * B).ldlt();

  TrackingGains gains;
  gains.K_a = -S.solve(B.transpose() * P * A);
  const Matrix closed_loop = A + B * gains.K_a;
  const Matrix resolvent = Matrix::Identity(n, n) - closed_loop.transpose();
  const Eigen::PartialPivLU<Matrix> lu(resolvent);
  if (!(lu.rcond() > 1e-13)) {
    throw SingularResolventError(
        "I - (A + B K_a)^T is singular; the closed loop is marginally stable");
  }
  gains.K_b = S.solve(B.transpose() * lu.solve(Q));
  return gains;
}

double spectral_radius(const Matrix& M) {
  if (M.rows() != M.cols()) throw std::invalid_argument("spectral_radius needs a square matrix");
  if (M.rows() == 0) return 0.0;
  auto dense = [&] {
    return Eigen::EigenSolver<Matrix>(M, false).eigenvalues().cwiseAbs().maxCoeff();
  };
  if (M.rows() <= 16) return dense();

  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> normal;
  Vector x(M.rows());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
  x.normalize();
  double previous = -1.0;
  for (int it = 0; it < 2000; ++it) {
    Vector y = M * x;
    const double estimate = y.norm();
    if (estimate == 0.0) return dense();
    if (std::abs(estimate - previous) <= 1e-13 * estimate) return estimate;
    previous = estimate;
    x = y / estimate;
  }
  return dense();
}

Vector mb_controller_act(const TrackingGains& gains, const Rom& rom, const Vector& z,
                         const Vector& z_r) {
  return gains.K_a * project(rom, z) + gains.K_b * project(rom, z_r);
}

double verify_feedforward_via_recursion(const Matrix& A, const Matrix& B, const Matrix& P,
                                        const Matrix& Q, const Matrix& R, const Vector& s_r,
                                        int n_steps) {
  check_dimensions(A, B, Q, R);
  const Eigen::LDLT<Matrix> S = (R + B.transpose() * P * B).ldlt();
  const Matrix K_a = -S.solve(B.transpose() * P * A);
  const Matrix closed_loop_t = (A + B * K_a).transpose();
  const Vector drive = Q * s_r;

  Vector q = drive;
  for (int k = 0; k < n_steps; ++k) q = closed_loop_t * q + drive;

  const TrackingGains gains = tracking_gains(A, B, P, Q, R);
  return (S.solve(B.transpose() * q) - gains.K_b * s_r).norm();
}

LqtDesign design_lqt(const EnvConfig& config, const Rom& rom) {
  LqtDesign design;
  design.cost = reduce_cost(config, rom);
  design.dare = solve_dare(rom.A, rom.B, design.cost.Q, design.cost.R);
  design.gains = tracking_gains(rom.A, rom.B, design.dare.P, design.cost.Q, design.cost.R);
  design.closed_loop_radius = spectral_radius(rom.A + rom.B * design.gains.K_a);
  if (!(design.closed_loop_radius < 1.0)) {
    std::ostringstream msg;
    msg << "model-based closed loop is not stable (spectral radius "
        << design.closed_loop_radius << "); the ROM fit is unusable";
    throw std::runtime_error(msg.str());
  }
  return design;
}

}  // namespace romtune
