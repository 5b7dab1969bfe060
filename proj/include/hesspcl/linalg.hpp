#pragma once

// Dense and sparse linear-algebra kernels shared by every other header.
// Storage and factorizations are Eigen's; this header pins down the
// contracts (symmetry, pivot reporting, conditioning diagnostics) the rest
// of the library relies on.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hesspcl/errors.hpp"

namespace hesspcl {

using Index = std::ptrdiff_t;
using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;
/// Compressed sparse row matrix; column indices sorted within each row.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

/// Absolute floor for scale-relative tolerances.
inline constexpr double kScaleFloor = 1e-300;

/// Dense symmetric matrix. Every mutator writes (i, j) and (j, i) with the
/// same value, so the stored matrix is exactly symmetric at all times.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  explicit SymmetricMatrix(Index dim) : full_(DenseMatrix::Zero(dim, dim)) {}

  /// Builds from the lower triangle of `m` (the upper triangle is ignored).
  static SymmetricMatrix from_lower(const DenseMatrix& m) {
    if (m.rows() != m.cols()) {
      throw ShapeError("SymmetricMatrix::from_lower: matrix is not square");
    }
    SymmetricMatrix s;
    s.full_ = m.triangularView<Eigen::Lower>();
    s.full_.triangularView<Eigen::StrictlyUpper>() = s.full_.transpose();
    return s;
  }

  /// Builds from (m + mᵀ)/2.
  static SymmetricMatrix symmetrized(const DenseMatrix& m) {
    if (m.rows() != m.cols()) {
      throw ShapeError("SymmetricMatrix::symmetrized: matrix is not square");
    }
    return from_lower(0.5 * (m + m.transpose()));
  }

  static SymmetricMatrix identity(Index dim) {
    SymmetricMatrix s(dim);
    s.full_.diagonal().setOnes();
    return s;
  }

  static SymmetricMatrix diagonal(std::span<const double> d) {
    SymmetricMatrix s(static_cast<Index>(d.size()));
    for (Index i = 0; i < s.dim(); ++i) s.full_(i, i) = d[static_cast<std::size_t>(i)];
    return s;
  }

  Index dim() const noexcept { return full_.rows(); }
  double operator()(Index i, Index j) const { return full_(i, j); }

  void set(Index i, Index j, double v) {
    full_(i, j) = v;
    full_(j, i) = v;
  }
  void add(Index i, Index j, double v) {
    full_(i, j) += v;
    if (i != j) full_(j, i) = full_(i, j);
  }

  const DenseMatrix& dense() const noexcept { return full_; }

  double max_abs() const { return full_.size() == 0 ? 0.0 : full_.cwiseAbs().maxCoeff(); }
  bool all_finite() const { return full_.allFinite(); }

  SymmetricMatrix& operator*=(double c) {
    full_ *= c;
    return *this;
  }

 private:
  DenseMatrix full_;
};

inline Vector operator*(const SymmetricMatrix& m, const Vector& x) { return m.dense() * x; }

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors
/// stored as orthonormal columns.
struct EigenDecomposition {
  Vector eigenvalues;
  DenseMatrix eigenvectors;
};

inline EigenDecomposition sym_eigen(const SymmetricMatrix& m) {
  if (m.dim() < 1) throw ShapeError("sym_eigen: empty matrix");
  if (!m.all_finite()) throw NumericalError("sym_eigen: non-finite entry in matrix");
  Eigen::SelfAdjointEigenSolver<DenseMatrix> solver(m.dense());
  if (solver.info() != Eigen::Success) {
    throw NumericalError("sym_eigen: eigensolver did not converge for a " +
                         std::to_string(m.dim()) + "x" + std::to_string(m.dim()) + " matrix");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

/// Outcome of factoring m + shift·I. Either `factor` holds L with
/// L Lᵀ = m + shift·I, or `failed_pivot` names the first non-positive pivot.
struct CholeskyResult {
  DenseMatrix factor;
  std::optional<Index> failed_pivot;

  bool ok() const noexcept { return !failed_pivot.has_value(); }

  /// Solves (m + shift·I) x = b with the stored factor.
  Vector solve(const Vector& b) const {
    Vector y = factor.triangularView<Eigen::Lower>().solve(b);
    return factor.transpose().triangularView<Eigen::Upper>().solve(y);
  }
  /// Solves L y = b.
  Vector solve_lower(const Vector& b) const {
    return factor.triangularView<Eigen::Lower>().solve(b);
  }
};

inline CholeskyResult cholesky_shifted(const SymmetricMatrix& m, double shift) {
  if (!std::isfinite(shift)) throw NumericalError("cholesky_shifted: non-finite shift");
  CholeskyResult out;
  out.factor = m.dense();
  out.factor.diagonal().array() += shift;
  // The blocked in-place kernel reports the index of the first pivot that
  // is not strictly positive, or -1 on success.
  const Index failed =
      Eigen::internal::llt_inplace<double, Eigen::Lower>::blocked(out.factor);
  if (failed >= 0) {
    out.failed_pivot = failed;
    out.factor.resize(0, 0);
    return out;
  }
  out.factor.triangularView<Eigen::StrictlyUpper>().setZero();
  return out;
}

/// Partial-pivoting LU with a 1-norm reciprocal condition estimate.
class LuFactorization {
 public:
  LuFactorization() = default;

  explicit LuFactorization(const DenseMatrix& a) {
    if (a.rows() != a.cols()) throw ShapeError("LU: matrix is not square");
    if (!a.allFinite()) throw NumericalError("LU: non-finite matrix entry");
    lu_.compute(a);
    rcond_ = 1.0;
    if (a.rows() > 0) {
      // Eigen's estimate can miss an exactly zero pivot, so cap it by the pivot ratio.
      const Vector pivots = lu_.matrixLU().diagonal().cwiseAbs();
      const double ratio = pivots.maxCoeff() > 0.0 ? pivots.minCoeff() / pivots.maxCoeff() : 0.0;
      rcond_ = std::min(lu_.rcond(), ratio);
    }
    if (!(rcond_ > singular_threshold(a.rows()))) {
      std::ostringstream msg;
      msg << "matrix of size " << a.rows() << " is singular to working precision"
          << " (1-norm condition estimate " << (rcond_ > 0 ? 1.0 / rcond_ : INFINITY) << ")";
      throw NumericalError(msg.str());
    }
  }

  Index dim() const { return lu_.rows(); }
  double rcond() const noexcept { return rcond_; }
  double condition_estimate() const noexcept { return 1.0 / std::max(rcond_, kScaleFloor); }

  Vector solve(const Vector& b) const { return lu_.solve(b); }
  Vector solve_transposed(const Vector& b) const { return lu_.transpose().solve(b); }
  DenseMatrix inverse() const { return lu_.inverse(); }

 private:
  static double singular_threshold(Index n) {
    return static_cast<double>(std::max<Index>(n, 1)) * std::numeric_limits<double>::epsilon();
  }

  Eigen::PartialPivLU<DenseMatrix> lu_;
  double rcond_ = 0.0;
};

inline Vector dense_solve(const DenseMatrix& a, const Vector& b) {
  if (a.rows() != a.cols()) throw ShapeError("dense_solve: matrix is not square");
  if (b.size() != a.rows()) throw ShapeError("dense_solve: right-hand side length mismatch");
  return LuFactorization(a).solve(b);
}

inline SparseMatrix make_sparse(Index rows, Index cols, const std::vector<Triplet>& entries) {
  SparseMatrix s(rows, cols);
  s.setFromTriplets(entries.begin(), entries.end());
  s.makeCompressed();
  return s;
}

inline DenseMatrix sparse_to_dense(const SparseMatrix& s) { return DenseMatrix(s); }

inline Vector sparse_matvec(const SparseMatrix& s, const Vector& x) {
  if (x.size() != s.cols()) {
    throw ShapeError("sparse_matvec: vector length " + std::to_string(x.size()) +
                     " does not match " + std::to_string(s.cols()) + " columns");
  }
  return s * x;
}

}  // namespace hesspcl
