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

#ifndef ROMTUNE_LQ_CONTROL_HPP_
#define ROMTUNE_LQ_CONTROL_HPP_

#include <stdexcept>

#include "romtune/pde_env.hpp"
#include "romtune/rom.hpp"

namespace romtune {

/// Reduced tracking weights: Q~ = U^T Q U, R, and s_r = U^T z_r.
struct ReducedCostSpec {
  Matrix Q;
  Matrix R;
  Vector s_r;
};

ReducedCostSpec reduce_cost(const EnvConfig& config, const Rom& rom);

struct DareSolution {
  Matrix P;
  double residual = 0.0;
  int iterations = 0;
};

/// Thrown when the Riccati iteration does not settle; carries the last residual.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Thrown when I - (A + B K_a)^T is numerically singular.
class SingularResolventError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDareTolerance = 1e-10;
inline constexpr int kDareMaxIterations = 100000;

/// Frobenius norm of A'PA - A'PB (R + B'PB)^{-1} B'PA + Q - P.
double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                     const Matrix& P);

/// Riccati value iteration from P_0 = Q, symmetrized every step, until the
/// substituted residual drops to `tolerance`.
DareSolution solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                        double tolerance = kDareTolerance,
                        int max_iterations = kDareMaxIterations);

struct TrackingGains {
  Matrix K_a;  // n_a x n_s feedback
  Matrix K_b;  // n_a x n_s feedforward on s_r
};

TrackingGains tracking_gains(const Matrix& A, const Matrix& B, const Matrix& P, const Matrix& Q,
                             const Matrix& R);

/// max |lambda(M)|. Dense eigensolve up to 16 x 16, power iteration above that
/// with a dense fallback when it stalls.
double spectral_radius(const Matrix& M);

/// a = K_a U^T z + K_b U^T z_r
Vector mb_controller_act(const TrackingGains& gains, const Rom& rom, const Vector& z,
                         const Vector& z_r);

/// Runs the backward feedforward recursion q <- (A + B K_a)^T q + Q s_r for
/// `n_steps` from q = Q s_r and returns || (R + B'PB)^{-1} B' q - K_b s_r ||.
double verify_feedforward_via_recursion(const Matrix& A, const Matrix& B, const Matrix& P,
                                        const Matrix& Q, const Matrix& R, const Vector& s_r,
                                        int n_steps);

/// Full model-based design on a fitted ROM: reduce weights, solve the DARE,
/// form the gains and check closed-loop stability.
struct LqtDesign {
  ReducedCostSpec cost;
  DareSolution dare;
  TrackingGains gains;
  double closed_loop_radius = 0.0;
};

/// Throws std::runtime_error when rho(A + B K_a) >= 1.
LqtDesign design_lqt(const EnvConfig& config, const Rom& rom);

}  // namespace romtune

#endif  // ROMTUNE_LQ_CONTROL_HPP_
