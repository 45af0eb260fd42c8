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

#ifndef ROMTUNE_PDE_ENV_HPP_
#define ROMTUNE_PDE_ENV_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace romtune {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Thrown by the integrator when the field leaves the representable range.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long substep, double accumulated_cost = 0.0)
      : std::runtime_error(what), substep_(substep), accumulated_cost_(accumulated_cost) {}

  /// Global substep index (counting from the start of the call or rollout).
  long substep() const { return substep_; }
  /// Cost accumulated by the rollout before the blow-up; 0 for a bare step.
  double accumulated_cost() const { return accumulated_cost_; }

 private:
  long substep_;
  double accumulated_cost_;
};

/// Thrown for malformed or inconsistent configurations.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Equally spaced periodic grid x_i = i L / n_z.
struct GridSpec {
  double domain_length = 1.0;
  int n_z = 128;

  double spacing() const { return domain_length / n_z; }
  double point(int i) const { return i * spacing(); }
  Vector points() const;

  bool operator==(const GridSpec&) const = default;
};

struct Burgers {
  double viscosity = 1e-4;

  bool operator==(const Burgers&) const = default;
};

struct AllenCahn {
  double diffusivity = 5e-2;
  double potential = 5.0;

  bool operator==(const AllenCahn&) const = default;
};

struct KortewegDeVries {
  bool operator==(const KortewegDeVries&) const = default;
};

using PdePhysics = std::variant<Burgers, AllenCahn, KortewegDeVries>;

std::string physics_name(const PdePhysics& physics);

struct ForcingLayout {
  int n_a = 1;
  double width_fraction = 1.0;

  bool operator==(const ForcingLayout&) const = default;
};

/// Randomized initial fields, one family per benchmark equation. The shape
/// parameters are drawn uniformly from [min, max].
struct Range {
  double min = 0.0;
  double max = 0.0;
  double mean() const { return 0.5 * (min + max); }

  bool operator==(const Range&) const = default;
};

/// u0 = alpha * sech((x - L/2) / beta)
struct SechPulse {
  Range alpha{0.9, 1.1};
  Range beta{0.04, 0.06};

  bool operator==(const SechPulse&) const = default;
};

/// u0 = alpha + (x - L/2)^2 cos(2 pi (x - L/2) / L)
struct QuadraticCosine {
  Range alpha{-0.1, 0.1};

  bool operator==(const QuadraticCosine&) const = default;
};

/// u0 = -(alpha / 2) sech(sqrt(alpha) / 2 * (x - L/2))
struct NegativeSech {
  Range alpha{1.0, 3.0};

  bool operator==(const NegativeSech&) const = default;
};

using InitialSampler = std::variant<SechPulse, QuadraticCosine, NegativeSech>;

/// Target profile u_r(x) = amplitude * {cos, sin}(2 pi x / L).
struct TargetField {
  enum class Shape { kCosine, kSine };
  Shape shape = Shape::kCosine;
  double amplitude = 0.0;

  bool operator==(const TargetField&) const = default;
};

/// Immutable description of one discretized control environment.
struct EnvConfig {
  GridSpec grid;
  PdePhysics physics = Burgers{};
  ForcingLayout forcing;
  double sampling_time = 0.05;
  double integration_substep = 0.01;
  int horizon = 300;
  Matrix Q;
  Matrix R;
  TargetField target;
  InitialSampler sampler = SechPulse{};
  bool dealias = false;
  // Advective Courant limit |c|max * k_max * h for the flux equations. When
  // positive, a substep whose Courant number would exceed it is split into the
  // fewest equal pieces that respect it. 0 disables the split.
  double max_cfl = 0.0;

  // Derived quantities, filled by finalize().
  Matrix forcing_matrix;
  Vector target_state;

  int n_z() const { return grid.n_z; }
  int n_a() const { return forcing.n_a; }
  int substeps_per_step() const;

  /// Validates invariants and computes the derived members. Throws ConfigError.
  void finalize();
};

/// Convenience: scaled identity weights, then finalize().
EnvConfig make_env_config(GridSpec grid, PdePhysics physics, ForcingLayout forcing,
                          double sampling_time, double integration_substep, int horizon,
                          double q_weight, double r_weight, TargetField target,
                          InitialSampler sampler, bool dealias = false,
                          double max_cfl = 0.0);

Matrix build_forcing_matrix(const GridSpec& grid, int n_a, double width_fraction);

Vector sample_initial_state(const EnvConfig& config, std::uint64_t rng_seed);

/// Initial field with every shape parameter at its distribution mean.
Vector mean_initial_state(const EnvConfig& config);

Vector target_state(const EnvConfig& config);

double stage_cost(const EnvConfig& config, const Vector& z, const Vector& a);

/// States whose magnitude exceeds this are treated as diverged.
inline constexpr double kDivergenceThreshold = 1e8;

/// Courant splitting gives up (and reports divergence) beyond this many pieces.
inline constexpr int kMaxCflPieces = 64;

/// Fourier pseudo-spectral integrating-factor RK4 integrator. Owns its FFT
/// plans and scratch buffers, so one instance must not be shared between
/// threads; construct one per rollout or per worker.
class SpectralStepper {
 public:
  explicit SpectralStepper(const EnvConfig& config);
  ~SpectralStepper();
  SpectralStepper(const SpectralStepper&) = delete;
  SpectralStepper& operator=(const SpectralStepper&) = delete;

  /// Advances z by one sampling interval with the control held constant.
  /// `substep_offset` only shifts the index reported by DivergenceError.
  Vector step(const Vector& z, const Vector& a, long substep_offset = 0);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Vector step(const EnvConfig& config, const Vector& z, const Vector& a);

/// Linear state feedback a = K_a U^T z + K_b U^T z_r acting on the full field.
struct FeedbackLaw {
  Matrix policy;      // n_a x 2 n_s, [K_a | K_b]
  Matrix projection;  // n_z x n_s
};

struct Trajectory {
  std::vector<Vector> states;    // z_0 .. z_T
  std::vector<Vector> controls;  // a_0 .. a_{T-1}
  double cost = 0.0;
};

/// Closed-loop (or open-loop zero-control when `law` is empty) simulation over
/// the configured horizon. Cost includes the terminal state term at k = T.
/// Throws DivergenceError carrying the accumulated cost on blow-up.
Trajectory rollout(const EnvConfig& config, const std::optional<FeedbackLaw>& law,
                   const Vector& z0, bool keep_trajectory = true);

/// Same as rollout(config, law, z0, false).cost without storing states.
double rollout_cost(const EnvConfig& config, const std::optional<FeedbackLaw>& law,
                    const Vector& z0);

}  // namespace romtune

#endif  // ROMTUNE_PDE_ENV_HPP_
