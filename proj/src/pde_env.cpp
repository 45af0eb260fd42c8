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

#include "romtune/pde_env.hpp"

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>

#include <fftw3.h>

namespace romtune {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// FFTW's planner is not thread-safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex mutex;
  return mutex;
}

bool is_symmetric(const Matrix& M, double tol) {
  return M.rows() == M.cols() && (M - M.transpose()).cwiseAbs().maxCoeff() <= tol;
}

double draw(std::mt19937_64& rng, const Range& range) {
  if (range.max < range.min) throw ConfigError("initial-condition range has max < min");
  if (range.max == range.min) return range.min;
  return std::uniform_real_distribution<double>(range.min, range.max)(rng);
}

// Shape parameters of the initial field. Two entries are enough for every family.
struct InitialParams {
  double alpha = 0.0;
  double beta = 0.0;
};

Vector evaluate_initial_field(const EnvConfig& config, const InitialParams& params) {
  const GridSpec& grid = config.grid;
  const double L = grid.domain_length;
  Vector z(grid.n_z);
  for (int i = 0; i < grid.n_z; ++i) {
    const double xc = grid.point(i) - 0.5 * L;
    z[i] = std::visit(
        [&](const auto& family) -> double {
          using T = std::decay_t<decltype(family)>;
          if constexpr (std::is_same_v<T, SechPulse>) {
            return params.alpha / std::cosh(xc / params.beta);
          } else if constexpr (std::is_same_v<T, QuadraticCosine>) {
            return params.alpha + xc * xc * std::cos(kTwoPi * xc / L);
          } else {
            return -0.5 * params.alpha / std::cosh(0.5 * std::sqrt(params.alpha) * xc);
          }
        },
        config.sampler);
  }
  return z;
}

}  // namespace

Vector GridSpec::points() const {
  Vector x(n_z);
  for (int i = 0; i < n_z; ++i) x[i] = point(i);
  return x;
}

std::string physics_name(const PdePhysics& physics) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Burgers>) return "burgers";
        else if constexpr (std::is_same_v<T, AllenCahn>) return "allen_cahn";
        else return "kdv";
      },
      physics);
}

int EnvConfig::substeps_per_step() const {
  if (!(sampling_time > 0.0) || !(integration_substep > 0.0)) {
    throw ConfigError("sampling_time and integration_substep must be positive");
  }
  const double ratio = sampling_time / integration_substep;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * ratio) {
    std::ostringstream msg;
    msg << "sampling_time (" << sampling_time << ") is not an integer multiple of "
        << "integration_substep (" << integration_substep << ")";
    throw ConfigError(msg.str());
  }
  return static_cast<int>(rounded);
}

void EnvConfig::finalize() {
  if (!(grid.domain_length > 0.0)) throw ConfigError("domain_length must be positive");
  if (grid.n_z < 2) throw ConfigError("n_z must be at least 2");
  if (horizon < 1) throw ConfigError("horizon must be a positive integer");
  if (!(max_cfl >= 0.0)) throw ConfigError("max_cfl must be nonnegative");
  substeps_per_step();

  std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Burgers>) {
          if (!(p.viscosity > 0.0)) throw ConfigError("viscosity must be positive");
        } else if constexpr (std::is_same_v<T, AllenCahn>) {
          if (!(p.diffusivity > 0.0)) throw ConfigError("diffusivity must be positive");
          if (!(p.potential >= 0.0)) throw ConfigError("potential must be nonnegative");
        }
      },
      physics);

  if (Q.rows() != grid.n_z || !is_symmetric(Q, 1e-12)) {
    throw ConfigError("Q must be a symmetric n_z x n_z matrix");
  }
  if (Eigen::SelfAdjointEigenSolver<Matrix>(Q, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() <
      -1e-12) {
    throw ConfigError("Q must be positive semidefinite");
  }
  if (R.rows() != forcing.n_a || !is_symmetric(R, 1e-12)) {
    throw ConfigError("R must be a symmetric n_a x n_a matrix");
  }
  if (Eigen::LLT<Matrix>(R).info() != Eigen::Success) {
    throw ConfigError("R must be positive definite");
  }

  forcing_matrix = build_forcing_matrix(grid, forcing.n_a, forcing.width_fraction);
  target_state = romtune::target_state(*this);
}

EnvConfig make_env_config(GridSpec grid, PdePhysics physics, ForcingLayout forcing,
                          double sampling_time, double integration_substep, int horizon,
                          double q_weight, double r_weight, TargetField target,
                          InitialSampler sampler, bool dealias,
                          double max_cfl) {
  EnvConfig config;
  config.grid = grid;
  config.physics = physics;
  config.forcing = forcing;
  config.sampling_time = sampling_time;
  config.integration_substep = integration_substep;
  config.horizon = horizon;
  config.Q = q_weight * Matrix::Identity(grid.n_z, grid.n_z);
  config.R = r_weight * Matrix::Identity(forcing.n_a, forcing.n_a);
  config.target = target;
  config.sampler = sampler;
  config.dealias = dealias;
  config.max_cfl = max_cfl;
  config.finalize();
  return config;
}

Matrix build_forcing_matrix(const GridSpec& grid, int n_a, double width_fraction) {
  if (!(width_fraction > 0.0) || width_fraction > 1.0) {
    throw ConfigError("forcing width_fraction must lie in (0, 1]");
  }
  if (n_a < 1) throw ConfigError("n_a must be at least 1");
  if (n_a > grid.n_z) throw ConfigError("n_a must not exceed n_z");

  const int n = grid.n_z;
  const int width = std::max(1, static_cast<int>(std::lround(width_fraction * n)));
  Matrix phi = Matrix::Zero(n, n_a);
  for (int j = 0; j < n_a; ++j) {
    // Support center in grid-index units; the first index is the nearest
    // integer to center - (width - 1) / 2, ties rounded up.
    const double center = (j + 0.5) * static_cast<double>(n) / n_a;
    const long first = static_cast<long>(std::floor(center - 0.5 * (width - 1) + 0.5));
    for (int m = 0; m < width; ++m) {
      const long idx = ((first + m) % n + n) % n;
      phi(idx, j) = 1.0;
    }
  }
  return phi;
}

Vector sample_initial_state(const EnvConfig& config, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  InitialParams params;
  std::visit(
      [&](const auto& family) {
        using T = std::decay_t<decltype(family)>;
        params.alpha = draw(rng, family.alpha);
        if constexpr (std::is_same_v<T, SechPulse>) params.beta = draw(rng, family.beta);
      },
      config.sampler);
  return evaluate_initial_field(config, params);
}

Vector mean_initial_state(const EnvConfig& config) {
  InitialParams params;
  std::visit(
      [&](const auto& family) {
        using T = std::decay_t<decltype(family)>;
        params.alpha = family.alpha.mean();
        if constexpr (std::is_same_v<T, SechPulse>) params.beta = family.beta.mean();
      },
      config.sampler);
  return evaluate_initial_field(config, params);
}

Vector target_state(const EnvConfig& config) {
  const GridSpec& grid = config.grid;
  Vector z(grid.n_z);
  for (int i = 0; i < grid.n_z; ++i) {
    const double phase = kTwoPi * grid.point(i) / grid.domain_length;
    z[i] = config.target.amplitude * (config.target.shape == TargetField::Shape::kCosine
                                          ? std::cos(phase)
                                          : std::sin(phase));
  }
  return z;
}

double stage_cost(const EnvConfig& config, const Vector& z, const Vector& a) {
  const Vector e = z - config.target_state;
  return e.dot(config.Q * e) + a.dot(config.R * a);
}

// ----- spectral integrator ----- //

struct SpectralStepper::Impl {
  using Complex = std::complex<double>;

  int n = 0;
  int nk = 0;
  int substeps = 1;
  double h = 0.0;
  PdePhysics physics;
  Matrix forcing_matrix;

  struct Exponentials {
    std::vector<Complex> half;  // exp(L dt / 2)
    std::vector<Complex> full;  // exp(L dt)
  };

  std::vector<Complex> symbol;  // linear operator in Fourier space
  std::map<int, Exponentials> factors;  // keyed by pieces per substep
  double max_cfl = 0.0;
  double advection_speed = 0.0;  // |c| = advection_speed * |u|
  double max_wavenumber = 0.0;   // largest retained wavenumber
  std::vector<double> odd_wavenumber;  // Nyquist mode zeroed
  std::vector<double> keep;            // 2/3-rule mask, or all ones

  double* real_buf = nullptr;
  fftw_complex* spec_buf = nullptr;
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;

  std::vector<Complex> uhat, forcing_hat, stage, k1, k2, k3, k4;

  explicit Impl(const EnvConfig& config)
      : n(config.grid.n_z),
        nk(config.grid.n_z / 2 + 1),
        substeps(config.substeps_per_step()),
        h(config.integration_substep),
        physics(config.physics),
        forcing_matrix(config.forcing_matrix) {
    if (forcing_matrix.rows() != n) {
      forcing_matrix = build_forcing_matrix(config.grid, config.forcing.n_a,
                                            config.forcing.width_fraction);
    }
    symbol.resize(nk);
    max_cfl = config.max_cfl;
    odd_wavenumber.resize(nk);
    keep.assign(nk, 1.0);
    const double L = config.grid.domain_length;
    for (int k = 0; k < nk; ++k) {
      const double kappa = kTwoPi * k / L;
      const bool nyquist = (n % 2 == 0) && k == n / 2;
      odd_wavenumber[k] = nyquist ? 0.0 : kappa;
      symbol[k] = std::visit(
          [&](const auto& p) -> Complex {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, Burgers>) {
              return {-p.viscosity * kappa * kappa, 0.0};
            } else if constexpr (std::is_same_v<T, AllenCahn>) {
              return {-p.diffusivity * p.diffusivity * kappa * kappa, 0.0};
            } else {
              // u_t = -u_xxx  ->  -(i kappa)^3 = i kappa^3
              const double kk = odd_wavenumber[k];
              return {0.0, kk * kk * kk};
            }
          },
          physics);
      if (config.dealias && 3 * k > n) keep[k] = 0.0;
      if (keep[k] > 0.0) max_wavenumber = std::max(max_wavenumber, odd_wavenumber[k]);
    }
    if (std::holds_alternative<Burgers>(physics)) advection_speed = 1.0;
    if (std::holds_alternative<KortewegDeVries>(physics)) advection_speed = 6.0;

    real_buf = fftw_alloc_real(n);
    spec_buf = fftw_alloc_complex(nk);
    {
      std::lock_guard<std::mutex> lock(fftw_planner_mutex());
      forward = fftw_plan_dft_r2c_1d(n, real_buf, spec_buf, FFTW_ESTIMATE);
      backward = fftw_plan_dft_c2r_1d(n, spec_buf, real_buf, FFTW_ESTIMATE);
    }
    for (auto* v : {&uhat, &forcing_hat, &stage, &k1, &k2, &k3, &k4}) v->assign(nk, Complex{});
  }

  ~Impl() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(backward);
    fftw_free(real_buf);
    fftw_free(spec_buf);
  }

  Complex* spec() { return reinterpret_cast<Complex*>(spec_buf); }

  void to_spectral(const double* u, std::vector<Complex>& out) {
    std::copy(u, u + n, real_buf);
    fftw_execute(forward);
    std::copy(spec(), spec() + nk, out.begin());
  }

  // Leaves the physical field in real_buf.
  void to_physical(const std::vector<Complex>& in) {
    std::copy(in.begin(), in.end(), spec());
    fftw_execute(backward);
    const double scale = 1.0 / n;
    for (int i = 0; i < n; ++i) real_buf[i] *= scale;
  }

  // Returns false if the physical field in real_buf is non-finite or too large.
  bool field_ok() const {
    for (int i = 0; i < n; ++i) {
      const double v = real_buf[i];
      if (!std::isfinite(v) || std::abs(v) > kDivergenceThreshold) return false;
    }
    return true;
  }

  // out = nonlinear remainder + forcing at spectral state `in`. Clobbers real_buf.
  void nonlinear(const std::vector<Complex>& in, std::vector<Complex>& out) {
    to_physical(in);
    enum class Kind { kFlux, kReaction } kind = Kind::kFlux;
    double flux_coeff = 0.0;
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, Burgers>) {
            // -u u_x = -(u^2 / 2)_x
            flux_coeff = -0.5;
            for (int i = 0; i < n; ++i) real_buf[i] *= real_buf[i];
          } else if constexpr (std::is_same_v<T, AllenCahn>) {
            kind = Kind::kReaction;
            for (int i = 0; i < n; ++i) {
              const double u = real_buf[i];
              real_buf[i] = p.potential * (u - u * u * u);
            }
          } else {
            // 6 u u_x = 3 (u^2)_x
            flux_coeff = 3.0;
            for (int i = 0; i < n; ++i) real_buf[i] *= real_buf[i];
          }
        },
        physics);
    fftw_execute(forward);
    const Complex* w = spec();
    for (int k = 0; k < nk; ++k) {
      Complex term = kind == Kind::kFlux ? Complex(0.0, flux_coeff * odd_wavenumber[k]) * w[k]
                                         : w[k];
      out[k] = keep[k] * term + forcing_hat[k];
    }
  }

  // Integrating-factor RK4 over one interval of length `dt` using the
  // exponentials in `factors`.
  void rk4(double dt, const Exponentials& factors) {
    const auto& half = factors.half;
    const auto& full = factors.full;
    nonlinear(uhat, k1);
    for (int k = 0; k < nk; ++k) stage[k] = half[k] * (uhat[k] + 0.5 * dt * k1[k]);
    nonlinear(stage, k2);
    for (int k = 0; k < nk; ++k) stage[k] = half[k] * uhat[k] + 0.5 * dt * k2[k];
    nonlinear(stage, k3);
    for (int k = 0; k < nk; ++k) stage[k] = full[k] * uhat[k] + dt * half[k] * k3[k];
    nonlinear(stage, k4);
    for (int k = 0; k < nk; ++k) {
      uhat[k] = full[k] * uhat[k] +
                (dt / 6.0) * (full[k] * k1[k] + 2.0 * half[k] * (k2[k] + k3[k]) + k4[k]);
    }
  }

  const Exponentials& exponentials(int pieces) {
    auto it = factors.find(pieces);
    if (it != factors.end()) return it->second;
    const double dt = h / pieces;
    Exponentials e;
    e.half.resize(nk);
    e.full.resize(nk);
    for (int k = 0; k < nk; ++k) {
      e.half[k] = std::exp(symbol[k] * (0.5 * dt));
      e.full[k] = std::exp(symbol[k] * dt);
    }
    return factors.emplace(pieces, std::move(e)).first->second;
  }

  Vector advance(const Vector& z, const Vector& a, long substep_offset) {
    if (z.size() != n) throw std::invalid_argument("state length does not match n_z");
    if (a.size() != forcing_matrix.cols()) {
      throw std::invalid_argument("control length does not match n_a");
    }
    const Vector f = forcing_matrix * a;
    to_spectral(f.data(), forcing_hat);
    to_spectral(z.data(), uhat);

    for (int s = 0; s < substeps; ++s) {
      int pieces = 1;
      if (s > 0 || max_cfl > 0.0) {
        to_physical(uhat);
        if (!field_ok()) diverged(substep_offset + s);
        if (max_cfl > 0.0 && advection_speed > 0.0) {
          double umax = 0.0;
          for (int i = 0; i < n; ++i) umax = std::max(umax, std::abs(real_buf[i]));
          const double courant = advection_speed * umax * max_wavenumber * h;
          if (courant > kMaxCflPieces * max_cfl) {
            std::ostringstream msg;
            msg << "field speed " << umax << " needs more than " << kMaxCflPieces
                << " pieces per substep at substep " << substep_offset + s;
            throw DivergenceError(msg.str(), substep_offset + s);
          }
          pieces = std::max(1, static_cast<int>(std::ceil(courant / max_cfl)));
        }
      }
      const Exponentials& e = exponentials(pieces);
      for (int piece = 0; piece < pieces; ++piece) rk4(h / pieces, e);
    }
    to_physical(uhat);
    if (!field_ok()) diverged(substep_offset + substeps);
    return Eigen::Map<const Vector>(real_buf, n);
  }

  [[noreturn]] static void diverged(long substep) {
    std::ostringstream msg;
    msg << "field diverged at substep " << substep;
    throw DivergenceError(msg.str(), substep);
  }
};

SpectralStepper::SpectralStepper(const EnvConfig& config)
    : impl_(std::make_unique<Impl>(config)) {}

SpectralStepper::~SpectralStepper() = default;

Vector SpectralStepper::step(const Vector& z, const Vector& a, long substep_offset) {
  return impl_->advance(z, a, substep_offset);
}

Vector step(const EnvConfig& config, const Vector& z, const Vector& a) {
  if (!z.allFinite() || !a.allFinite()) throw std::invalid_argument("non-finite step input");
  SpectralStepper stepper(config);
  return stepper.step(z, a);
}

// ----- rollouts ----- //

namespace {

struct LawEvaluator {
  Matrix feedback;     // K_a U^T, n_a x n_z
  Vector feedforward;  // K_b U^T z_r

  LawEvaluator(const EnvConfig& config, const FeedbackLaw& law) {
    const Matrix& U = law.projection;
    const Eigen::Index n_s = U.cols();
    if (U.rows() != config.n_z()) {
      throw std::invalid_argument("projection rows do not match n_z");
    }
    if (law.policy.rows() != config.n_a() || law.policy.cols() != 2 * n_s) {
      throw std::invalid_argument("policy shape does not match n_a x 2 n_s");
    }
    feedback = law.policy.leftCols(n_s) * U.transpose();
    feedforward = law.policy.rightCols(n_s) * (U.transpose() * config.target_state);
  }

  Vector act(const Vector& z) const { return feedback * z + feedforward; }
};

}  // namespace

Trajectory rollout(const EnvConfig& config, const std::optional<FeedbackLaw>& law,
                   const Vector& z0, bool keep_trajectory) {
  if (z0.size() != config.n_z()) throw std::invalid_argument("z0 length does not match n_z");
  std::optional<LawEvaluator> controller;
  if (law) controller.emplace(config, *law);

  SpectralStepper stepper(config);
  const int substeps = config.substeps_per_step();
  Trajectory traj;
  if (keep_trajectory) {
    traj.states.reserve(config.horizon + 1);
    traj.controls.reserve(config.horizon);
    traj.states.push_back(z0);
  }

  Vector z = z0;
  Vector a = Vector::Zero(config.n_a());
  for (int k = 0; k < config.horizon; ++k) {
    if (controller) a = controller->act(z);
    traj.cost += stage_cost(config, z, a);
    if (!std::isfinite(traj.cost) || !a.allFinite()) {
      throw DivergenceError("control or cost became non-finite", static_cast<long>(k) * substeps,
                            traj.cost);
    }
    try {
      z = stepper.step(z, a, static_cast<long>(k) * substeps);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.what(), e.substep(), traj.cost);
    }
    if (keep_trajectory) {
      traj.controls.push_back(a);
      traj.states.push_back(z);
    }
  }
  const Vector e = z - config.target_state;
  traj.cost += e.dot(config.Q * e);
  return traj;
}

double rollout_cost(const EnvConfig& config, const std::optional<FeedbackLaw>& law,
                    const Vector& z0) {
  return rollout(config, law, z0, false).cost;
}

}  // namespace romtune
