#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "transport/common.hpp"

namespace transport {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Lower-triangular Cholesky factor; A = L L^T.
struct CholeskyFactor {
  Matrix L;

  Vector solve(const Vector& b) const {
    Vector y = L.triangularView<Eigen::Lower>().solve(b);
    return L.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  Matrix solve(const Matrix& B) const {
    Matrix y = L.triangularView<Eigen::Lower>().solve(B);
    return L.transpose().triangularView<Eigen::Upper>().solve(y);
  }
};

inline CholeskyFactor cholesky_spd(const Matrix& A) {
  const Eigen::Index n = A.rows();
  if (n == 0 || A.cols() != n) throw NumericError("cholesky_spd: matrix must be square and non-empty");
  Matrix L = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = A(j, j) - L.row(j).head(j).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d))
      throw NumericError("cholesky_spd: matrix not positive definite at pivot " + std::to_string(j));
    L(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = A(i, j) - L.row(i).head(j).dot(L.row(j).head(j));
      L(i, j) = s / L(j, j);
    }
  }
  return CholeskyFactor{std::move(L)};
}

inline Vector solve_spd(const Matrix& A, const Vector& b) {
  return cholesky_spd(A).solve(b);
}

struct OlsFit {
  Vector coef;
  double rss = 0.0;
  Eigen::Index n = 0;
};

namespace detail {

// Tolerance-pivoted Cholesky rank scan of X^T W X; returns indices of columns
// that are linear combinations of earlier ones.
inline std::vector<int> collinear_columns(const Matrix& xtx) {
  const Eigen::Index k = xtx.rows();
  Matrix L = Matrix::Zero(k, k);
  std::vector<int> dead;
  double dmax = xtx.diagonal().maxCoeff();
  const double tol = 1e-10 * (dmax > 0 ? dmax : 1.0);
  for (Eigen::Index j = 0; j < k; ++j) {
    double d = xtx(j, j) - L.row(j).head(j).squaredNorm();
    if (d <= tol) {
      dead.push_back(static_cast<int>(j));
      continue;
    }
    L(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < k; ++i) {
      double s = xtx(i, j) - L.row(i).head(j).dot(L.row(j).head(j));
      L(i, j) = s / L(j, j);
    }
  }
  return dead;
}

inline std::string join_indices(const std::vector<int>& idx) {
  std::string out;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(idx[i]);
  }
  return out;
}

}  // namespace detail

// Weighted least squares via normal equations. Weights are variance-inverse
// row weights; empty weights mean unit weights.
inline OlsFit ols_fit(const Matrix& X, const Vector& y, const Vector& w = Vector()) {
  const Eigen::Index n = X.rows(), k = X.cols();
  if (y.size() != n) throw DataError("ols_fit: X and y row counts differ");
  if (w.size() != 0 && w.size() != n) throw DataError("ols_fit: weight length mismatch");
  Matrix xtx(k, k);
  Vector xty(k);
  if (w.size() == 0) {
    xtx.noalias() = X.transpose() * X;
    xty.noalias() = X.transpose() * y;
  } else {
    if ((w.array() < 0).any()) throw DataError("ols_fit: negative weight");
    Matrix xw = w.asDiagonal() * X;
    xtx.noalias() = X.transpose() * xw;
    xty.noalias() = xw.transpose() * y;
  }
  auto dead = detail::collinear_columns(xtx);
  if (!dead.empty())
    throw NumericError("ols_fit: design matrix rank deficient; collinear columns: " +
                       detail::join_indices(dead));
  OlsFit fit;
  fit.coef = cholesky_spd(xtx).solve(xty);
  fit.n = n;
  Vector resid = y - X * fit.coef;
  fit.rss = (w.size() == 0) ? resid.squaredNorm() : (w.array() * resid.array().square()).sum();
  return fit;
}

}  // namespace transport
