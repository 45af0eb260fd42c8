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

#include "romtune/rom.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "romtune/seed.hpp"

namespace romtune {

void SnapshotSet::validate() const {
  if (Z.cols() == 0) throw std::invalid_argument("snapshot set is empty");
  if (Z_next.rows() != Z.rows() || Z_next.cols() != Z.cols() || inputs.cols() != Z.cols()) {
    throw std::invalid_argument("snapshot matrices have inconsistent shapes");
  }
  if (!Z.allFinite() || !Z_next.allFinite() || !inputs.allFinite()) {
    throw std::invalid_argument("snapshot matrices contain non-finite entries");
  }
}

TruncatedSvd truncated_svd(const Matrix& M, int rank) {
  if (rank < 1 || rank > std::min(M.rows(), M.cols())) {
    std::ostringstream msg;
    msg << "truncation rank " << rank << " outside [1, " << std::min(M.rows(), M.cols())
        << "]";
    throw std::invalid_argument(msg.str());
  }
  Eigen::BDCSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  const double floor = kRankTolerance * sigma[0];
  for (int i = 0; i < rank; ++i) {
    if (!(sigma[i] > floor) || sigma[i] == 0.0) {
      std::ostringstream msg;
      msg << "singular value " << i << " (" << sigma[i] << ") is below the rank tolerance "
          << floor << "; use a smaller truncation rank";
      throw RankDeficiencyError(msg.str());
    }
  }

  TruncatedSvd out{svd.matrixU().leftCols(rank), sigma.head(rank),
                   svd.matrixV().leftCols(rank)};
  for (int i = 0; i < rank; ++i) {
    Eigen::Index idx = 0;
    out.left.col(i).cwiseAbs().maxCoeff(&idx);
    if (out.left(idx, i) < 0.0) {
      out.left.col(i) *= -1.0;
      out.right.col(i) *= -1.0;
    }
  }
  return out;
}

SnapshotSet collect_excited_trajectory(const EnvConfig& config, int n_snapshots,
                                       double excitation_stddev, std::uint64_t rng_seed) {
  if (n_snapshots < 1) throw std::invalid_argument("snapshot count must be positive");
  if (!(excitation_stddev > 0.0)) throw std::invalid_argument("excitation_stddev must be > 0");

  const int n_z = config.n_z();
  const int n_a = config.n_a();
  SnapshotSet set{Matrix(n_z, n_snapshots), Matrix(n_z, n_snapshots), Matrix(n_a, n_snapshots)};

  std::mt19937_64 rng(derive_seed(rng_seed, {hash_label("excitation")}));
  std::normal_distribution<double> noise(0.0, excitation_stddev);
  Vector z = sample_initial_state(config, derive_seed(rng_seed, {hash_label("initial")}));

  SpectralStepper stepper(config);
  const int substeps = config.substeps_per_step();
  Vector a(n_a);
  for (int k = 0; k < n_snapshots; ++k) {
    for (int j = 0; j < n_a; ++j) a[j] = noise(rng);
    set.Z.col(k) = z;
    set.inputs.col(k) = a;
    try {
      z = stepper.step(z, a, static_cast<long>(k) * substeps);
    } catch (const DivergenceError& e) {
      std::ostringstream msg;
      msg << "exploratory trajectory diverged at step " << k << " (" << e.what() << ")";
      throw DivergenceError(msg.str(), e.substep());
    }
    set.Z_next.col(k) = z;
  }
  return set;
}

Rom dmdc_fit(const SnapshotSet& snapshots, int p, int n_s) {
  snapshots.validate();
  const Eigen::Index n_z = snapshots.Z.rows();
  const Eigen::Index n_a = snapshots.inputs.rows();
  const Eigen::Index N = snapshots.size();
  if (n_s < 1 || n_s > p) throw std::invalid_argument("dmdc_fit requires 1 <= n_s <= p");
  if (p > std::min(n_z + n_a, N)) {
    throw std::invalid_argument("dmdc_fit requires p <= min(n_z + n_a, N)");
  }
  if (n_s > std::min(n_z, N)) throw std::invalid_argument("dmdc_fit requires n_s <= min(n_z, N)");

  Matrix omega(n_z + n_a, N);
  omega << snapshots.Z, snapshots.inputs;
  const TruncatedSvd joint = truncated_svd(omega, p);
  const TruncatedSvd output = truncated_svd(snapshots.Z_next, n_s);

  // Z' Lambda Xi^{-1}, shared by both operators.
  const Matrix weighted =
      snapshots.Z_next * joint.right * joint.singular_values.cwiseInverse().asDiagonal();

  Rom rom;
  rom.U = output.left;
  rom.p = p;
  const Matrix UtW = rom.U.transpose() * weighted;
  rom.A = UtW * joint.left.topRows(n_z).transpose() * rom.U;
  rom.B = UtW * joint.left.bottomRows(n_a).transpose();
  return rom;
}

Vector project(const Rom& rom, const Vector& z) {
  if (z.size() != rom.U.rows()) throw std::invalid_argument("state length does not match U");
  return rom.U.transpose() * z;
}

Vector lift(const Rom& rom, const Vector& s) {
  if (s.size() != rom.U.cols()) throw std::invalid_argument("reduced length does not match U");
  return rom.U * s;
}

double rom_one_step_error(const Rom& rom, const SnapshotSet& snapshots) {
  snapshots.validate();
  const Matrix S = rom.U.transpose() * snapshots.Z;
  const Matrix S_next = rom.U.transpose() * snapshots.Z_next;
  const Matrix residual = S_next - (rom.A * S + rom.B * snapshots.inputs);
  return std::sqrt(residual.colwise().squaredNorm().mean());
}

// ----- CSV I/O ----- //

void write_matrix_csv(const std::filesystem::path& path, const Matrix& M) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      if (j) out << ',';
      out << M(i, j);
    }
    out << '\n';
  }
  if (!out) throw ConfigError("failed writing " + path.string());
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                                 ": malformed number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                               ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  Matrix M(static_cast<Eigen::Index>(rows.size()),
           rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) M(i, j) = rows[i][j];
  }
  return M;
}

void save_snapshots(const std::filesystem::path& dir, const SnapshotSet& snapshots) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(dir / "Z.csv", snapshots.Z);
  write_matrix_csv(dir / "Z_next.csv", snapshots.Z_next);
  write_matrix_csv(dir / "inputs.csv", snapshots.inputs);
}

SnapshotSet load_snapshots(const std::filesystem::path& dir) {
  SnapshotSet set{read_matrix_csv(dir / "Z.csv"), read_matrix_csv(dir / "Z_next.csv"),
                  read_matrix_csv(dir / "inputs.csv")};
  set.validate();
  return set;
}

void save_rom(const std::filesystem::path& dir, const Rom& rom) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(dir / "A.csv", rom.A);
  write_matrix_csv(dir / "B.csv", rom.B);
  write_matrix_csv(dir / "U.csv", rom.U);
}

Rom load_rom(const std::filesystem::path& dir) {
  Rom rom;
  rom.A = read_matrix_csv(dir / "A.csv");
  rom.B = read_matrix_csv(dir / "B.csv");
  rom.U = read_matrix_csv(dir / "U.csv");
  if (rom.A.rows() != rom.A.cols() || rom.A.rows() != rom.U.cols() ||
      rom.B.rows() != rom.A.rows()) {
    throw ConfigError("ROM files in " + dir.string() + " have inconsistent shapes");
  }
  return rom;
}

}  // namespace romtune
