#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "transport/linalg.hpp"

namespace transport {

struct FitResult {
  Vector coef;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;  // inf-norm of the mean score at exit
  std::vector<double> grad_trace;
};

struct MultinomialFit {
  Matrix coef;  // (K-1) x d; category k vs reference category 0 in row k-1
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
};

namespace detail {

inline constexpr double kGradTol = 1e-8;
// Mean score norm under which an unimprovable step counts as converged: at
// large n the mean-deviance comparison drowns in summation noise before the
// score reaches kGradTol.
inline constexpr double kGradPlateau = 1e-5;
inline constexpr int kMaxIter = 100;
inline constexpr int kMaxHalvings = 30;
inline constexpr double kCoefNormCap = 1e4;

inline void check_xy(const Matrix& X, Eigen::Index ylen, const Vector& w) {
  if (X.rows() != ylen) throw DataError("glm: X and y row counts differ");
  if (w.size() != 0 && w.size() != X.rows()) throw DataError("glm: weight length mismatch");
  if (X.rows() == 0) throw DataError("glm: empty design");
}

}  // namespace detail

// IRLS with step-halving on the deviance. Deviance is monotonically
// non-increasing across accepted iterations; a step that cannot improve after
// 30 halvings aborts unless the mean score already sits on the numerical
// plateau. Separation is reported once the coefficient norm exceeds 1e4.
inline FitResult logistic_fit(const Matrix& X, const Vector& y, const Vector& w = Vector()) {
  detail::check_xy(X, y.size(), w);
  const Eigen::Index n = X.rows(), k = X.cols();
  for (Eigen::Index i = 0; i < n; ++i)
    if (y[i] != 0.0 && y[i] != 1.0) throw DataError("logistic_fit: response must be 0/1 at row " + std::to_string(i));
  if ((y.array() == y[0]).all()) throw DataError("logistic_fit: response has no variation");
  Vector wt = w.size() ? w : Vector::Ones(n);

  auto deviance = [&](const Vector& b) {
    Vector eta = X * b;
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double p = expit(eta[i]);
      p = std::min(1.0 - 1e-15, std::max(1e-15, p));
      dev -= 2.0 * wt[i] * (y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
    }
    return dev / n;
  };

  FitResult fit;
  fit.coef = Vector::Zero(k);
  double dev = deviance(fit.coef);
  for (int it = 1; it <= detail::kMaxIter; ++it) {
    Vector eta = X * fit.coef;
    Vector p(n), ww(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = expit(eta[i]);
      ww[i] = std::max(1e-10, wt[i] * p[i] * (1.0 - p[i]));
    }
    Vector grad = X.transpose() * (wt.array() * (y - p).array()).matrix() / n;
    fit.iterations = it;
    fit.grad_norm = grad.lpNorm<Eigen::Infinity>();
    fit.grad_trace.push_back(fit.grad_norm);
    if (fit.grad_norm <= detail::kGradTol) {
      fit.converged = true;
      return fit;
    }
    Matrix info = X.transpose() * ww.asDiagonal() * X / n;
    Vector step = cholesky_spd(info).solve(grad);
    double t = 1.0;
    int halvings = 0;
    Vector cand;
    double cand_dev;
    for (;;) {
      cand = fit.coef + t * step;
      cand_dev = deviance(cand);
      if (cand_dev <= dev + 1e-12) break;
      if (++halvings > detail::kMaxHalvings) {
        if (fit.grad_norm <= detail::kGradPlateau) {
          fit.converged = true;
          return fit;
        }
        throw NumericError("logistic_fit: step halving exhausted at iteration " + std::to_string(it) +
                           ", grad=" + std::to_string(fit.grad_norm));
      }
      t *= 0.5;
    }
    fit.coef = cand;
    dev = cand_dev;
    if (fit.coef.norm() > detail::kCoefNormCap)
      throw NumericError("logistic_fit: separation suspected, coefficient norm exceeds 1e4 at iteration " +
                         std::to_string(it));
  }
  Vector eta = X * fit.coef;
  Vector p(n);
  for (Eigen::Index i = 0; i < n; ++i) p[i] = expit(eta[i]);
  Vector grad = X.transpose() * (wt.array() * (y - p).array()).matrix() / n;
  fit.grad_norm = grad.lpNorm<Eigen::Infinity>();
  fit.converged = fit.grad_norm <= detail::kGradTol;
  return fit;
}

// Newton with the observed information over stacked non-reference blocks.
// Categories are 0-based; category 0 is the reference with coefficients fixed
// at zero.
inline MultinomialFit multinomial_fit(const Matrix& X, const Eigen::VectorXi& y, int K,
                                      const Vector& w = Vector()) {
  detail::check_xy(X, y.size(), w);
  const Eigen::Index n = X.rows(), d = X.cols();
  if (K < 2) throw DataError("multinomial_fit: need at least two categories");
  for (Eigen::Index i = 0; i < n; ++i)
    if (y[i] < 0 || y[i] >= K) throw DataError("multinomial_fit: category out of range at row " + std::to_string(i));
  Vector wt = w.size() ? w : Vector::Ones(n);
  const Eigen::Index kk = static_cast<Eigen::Index>(K - 1) * d;

  auto probs_at = [&](const Matrix& beta, Eigen::Index i, Vector& p) {
    // p has length K; stable softmax with eta_0 = 0
    double mx = 0.0;
    p[0] = 0.0;
    for (int c = 1; c < K; ++c) {
      p[c] = X.row(i).dot(beta.row(c - 1));
      mx = std::max(mx, p[c]);
    }
    double denom = 0.0;
    for (int c = 0; c < K; ++c) {
      p[c] = std::exp(p[c] - mx);
      denom += p[c];
    }
    p /= denom;
  };

  auto deviance = [&](const Matrix& beta) {
    double dev = 0.0;
    Vector p(K);
    for (Eigen::Index i = 0; i < n; ++i) {
      probs_at(beta, i, p);
      dev -= 2.0 * wt[i] * std::log(std::max(1e-15, p[y[i]]));
    }
    return dev / n;
  };

  MultinomialFit fit;
  fit.coef = Matrix::Zero(K - 1, d);
  double dev = deviance(fit.coef);
  for (int it = 1; it <= detail::kMaxIter; ++it) {
    Vector grad = Vector::Zero(kk);
    Matrix info = Matrix::Zero(kk, kk);
    Vector p(K);
    for (Eigen::Index i = 0; i < n; ++i) {
      probs_at(fit.coef, i, p);
      for (int c = 1; c < K; ++c) {
        double res = wt[i] * ((y[i] == c ? 1.0 : 0.0) - p[c]);
        grad.segment((c - 1) * d, d) += res * X.row(i).transpose();
        for (int l = 1; l < K; ++l) {
          double v = wt[i] * p[c] * ((c == l ? 1.0 : 0.0) - p[l]);
          if (v != 0.0)
            info.block((c - 1) * d, (l - 1) * d, d, d) += v * (X.row(i).transpose() * X.row(i));
        }
      }
    }
    grad /= n;
    info /= n;
    info.diagonal().array() += 1e-12;
    fit.iterations = it;
    fit.grad_norm = grad.lpNorm<Eigen::Infinity>();
    if (fit.grad_norm <= detail::kGradTol) {
      fit.converged = true;
      return fit;
    }
    Vector step = cholesky_spd(info).solve(grad);
    double t = 1.0;
    int halvings = 0;
    Matrix cand;
    double cand_dev;
    for (;;) {
      cand = fit.coef;
      for (int c = 1; c < K; ++c) cand.row(c - 1) += t * step.segment((c - 1) * d, d).transpose();
      cand_dev = deviance(cand);
      if (cand_dev <= dev + 1e-12) break;
      if (++halvings > detail::kMaxHalvings) {
        if (fit.grad_norm <= detail::kGradPlateau) {
          fit.converged = true;
          return fit;
        }
        throw NumericError("multinomial_fit: step halving exhausted at iteration " + std::to_string(it));
      }
      t *= 0.5;
    }
    fit.coef = cand;
    dev = cand_dev;
    if (fit.coef.norm() > detail::kCoefNormCap)
      throw NumericError("multinomial_fit: separation suspected, coefficient norm exceeds 1e4 at iteration " +
                         std::to_string(it));
  }
  fit.converged = false;
  return fit;
}

enum class LogLinkFamily { gamma, quasi };

// Log-link mean model with a variance proportional to the squared mean
// (gamma working assumption); the quasi family solves the same score
// equations, so point estimates agree.
inline FitResult loglink_fit(const Matrix& X, const Vector& y, LogLinkFamily /*family*/ = LogLinkFamily::gamma,
                             const Vector& w = Vector()) {
  detail::check_xy(X, y.size(), w);
  const Eigen::Index n = X.rows(), k = X.cols();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(y[i] > 0.0)) throw DataError("loglink_fit: response must be positive at row " + std::to_string(i));
  Vector wt = w.size() ? w : Vector::Ones(n);

  auto deviance = [&](const Vector& b) {
    Vector eta = X * b;
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double mu = std::exp(eta[i]);
      dev += 2.0 * wt[i] * ((y[i] - mu) / mu - std::log(y[i] / mu));
    }
    return dev / n;
  };

  FitResult fit;
  fit.coef = Vector::Zero(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if ((X.col(j).array() == 1.0).all()) {
      fit.coef[j] = std::log(y.dot(wt) / wt.sum());
      break;
    }
  }
  try {
    // least squares on the log scale is an accurate warm start
    fit.coef = ols_fit(X, y.array().log().matrix(), wt).coef;
  } catch (const std::exception&) {
  }
  double dev = deviance(fit.coef);
  Matrix info = X.transpose() * wt.asDiagonal() * X / n;
  CholeskyFactor chol = cholesky_spd(info);
  for (int it = 1; it <= detail::kMaxIter; ++it) {
    Vector eta = X * fit.coef;
    Vector resid(n);
    for (Eigen::Index i = 0; i < n; ++i) resid[i] = wt[i] * (y[i] / std::exp(eta[i]) - 1.0);
    Vector grad = X.transpose() * resid / n;
    fit.iterations = it;
    fit.grad_norm = grad.lpNorm<Eigen::Infinity>();
    fit.grad_trace.push_back(fit.grad_norm);
    if (fit.grad_norm <= detail::kGradTol) {
      fit.converged = true;
      return fit;
    }
    Vector step = chol.solve(grad);
    double t = 1.0;
    int halvings = 0;
    Vector cand;
    double cand_dev;
    for (;;) {
      cand = fit.coef + t * step;
      cand_dev = deviance(cand);
      if (cand_dev <= dev + 1e-12) break;
      if (++halvings > detail::kMaxHalvings) {
        if (fit.grad_norm <= detail::kGradPlateau) {
          fit.converged = true;
          return fit;
        }
        throw NumericError("loglink_fit: step halving exhausted at iteration " + std::to_string(it) +
                           ", grad=" + std::to_string(fit.grad_norm));
      }
      t *= 0.5;
    }
    fit.coef = cand;
    dev = cand_dev;
    if (fit.coef.norm() > detail::kCoefNormCap)
      throw NumericError("loglink_fit: divergence suspected, coefficient norm exceeds 1e4 at iteration " +
                         std::to_string(it));
  }
  fit.converged = false;
  return fit;
}

}  // namespace transport
