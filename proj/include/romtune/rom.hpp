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

#ifndef ROMTUNE_ROM_HPP_
#define ROMTUNE_ROM_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "romtune/pde_env.hpp"

namespace romtune {

/// Snapshot triple of one trajectory: Z = [z_0..z_{N-1}], Z' = [z_1..z_N],
/// and the inputs [a_0..a_{N-1}] that produced them.
struct SnapshotSet {
  Matrix Z;
  Matrix Z_next;
  Matrix inputs;

  Eigen::Index size() const { return Z.cols(); }
  void validate() const;
};

/// Linear reduced-order model s_{k+1} = A s_k + B a_k on the span of U.
struct Rom {
  Matrix A;  // n_s x n_s
  Matrix B;  // n_s x n_a
  Matrix U;  // n_z x n_s, orthonormal columns
  int p = 0;

  int n_s() const { return static_cast<int>(U.cols()); }
};

class RankDeficiencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Retained singular values must exceed this fraction of the largest one.
inline constexpr double kRankTolerance = 1e-10;

/// Thin SVD truncated to `rank`, with each singular pair's sign fixed so the
/// largest-magnitude entry of the left vector is positive.
struct TruncatedSvd {
  Matrix left;
  Vector singular_values;
  Matrix right;
};
TruncatedSvd truncated_svd(const Matrix& M, int rank);

/// Open-loop trajectory from a sampled initial field under i.i.d. Gaussian
/// inputs. Throws DivergenceError naming the step on blow-up.
SnapshotSet collect_excited_trajectory(const EnvConfig& config, int n_snapshots,
                                       double excitation_stddev, std::uint64_t rng_seed);

/// Dynamic mode decomposition with control on raw (uncentered) snapshots.
Rom dmdc_fit(const SnapshotSet& snapshots, int p, int n_s);

Vector project(const Rom& rom, const Vector& z);
Vector lift(const Rom& rom, const Vector& s);

/// RMS over snapshot columns of || U^T z_{j+1} - (A U^T z_j + B a_j) ||.
double rom_one_step_error(const Rom& rom, const SnapshotSet& snapshots);

// CSV matrices, one row per line, no header.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& M);
Matrix read_matrix_csv(const std::filesystem::path& path);

/// Writes Z.csv, Z_next.csv and inputs.csv into `dir`.
void save_snapshots(const std::filesystem::path& dir, const SnapshotSet& snapshots);
SnapshotSet load_snapshots(const std::filesystem::path& dir);

/// Writes A.csv, B.csv and U.csv into `dir`.
void save_rom(const std::filesystem::path& dir, const Rom& rom);
Rom load_rom(const std::filesystem::path& dir);

}  // namespace romtune

#endif  // ROMTUNE_ROM_HPP_
