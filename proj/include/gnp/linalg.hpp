/*
 * Copyright 2026 The GNP Lab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace gnp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class LinalgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CholeskyResult {
  Matrix lower;
  double jitter = 0.0;
};

inline constexpr double kMinJitter = 1e-12;
inline constexpr double kDefaultMaxJitter = 1e-6;

/// Cholesky of A + jitter I. Tries A itself first, then jitter 1e-12, 1e-11,
/// ... up to max_jitter. Only the lower triangle of A is read.
inline CholeskyResult cholesky_safe(const Matrix& a, double max_jitter = kDefaultMaxJitter) {
  if (a.rows() != a.cols()) {
    throw LinalgError("cholesky_safe: matrix is " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()));
  }
  const Matrix eye = Matrix::Identity(a.rows(), a.cols());
  double jitter = 0.0;
  while (true) {
    Eigen::LLT<Matrix> llt(a + jitter * eye);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite()) {
      return {llt.matrixL(), jitter};
    }
    jitter = jitter == 0.0 ? kMinJitter : jitter * 10.0;
    // Tolerate rounding in the ladder (1e-12 * 10^6 is not exactly 1e-6).
    if (jitter > max_jitter * (1.0 + 1e-9)) {
      throw LinalgError("cholesky_safe: matrix not positive definite with jitter up to " +
                        std::to_string(max_jitter));
    }
  }
}

/// log|A| from a Cholesky factor.
inline double logdet_from_cholesky(const Matrix& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Nearest symmetric PSD matrix in Frobenius norm (Higham): symmetrize,
/// clip negative eigenvalues to zero, reconstruct.
inline Matrix nearest_psd(const Matrix& a) {
  if (a.rows() != a.cols()) throw LinalgError("nearest_psd: square matrix expected");
  if (a.size() == 0) return a;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(a));
  if (eig.info() != Eigen::Success) {
    throw LinalgError("nearest_psd: eigendecomposition did not converge");
  }
  const Vector clipped = eig.eigenvalues().cwiseMax(0.0);
  Matrix out = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  return symmetrize(out);
}

inline double min_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(a), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

/// Symmetric within tol and min eigenvalue >= -tol_rel * trace.
inline bool is_psd(const Matrix& a, double sym_tol = 1e-10, double tol_rel = 1e-10) {
  if (a.rows() != a.cols()) return false;
  if (a.size() == 0) return true;
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > sym_tol) return false;
  return min_eigenvalue(a) >= -tol_rel * std::abs(a.trace());
}

}  // namespace gnp
