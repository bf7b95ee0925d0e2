#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "transport/ate.hpp"
#include "transport/data.hpp"
#include "transport/nuisance.hpp"

namespace transport {

// Ratio psi1/psi0 of target-population means; interval built on the log scale
// so the lower bound stays positive.
struct RatioEstimate {
  double psi_hat = std::numeric_limits<double>::quiet_NaN();
  double psi1 = std::numeric_limits<double>::quiet_NaN();
  double psi0 = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();      // natural scale
  double se_log = std::numeric_limits<double>::quiet_NaN();  // log scale
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  double level = 0.95;
  bool se_available = false;
  Vector if_values;  // combined ratio influence values
  Vector if1, if0;   // component influence values
  Diagnostics diag;
};

struct ParametricRatio {
  Basis basis;  // basis for log R
  Vector beta;
  Matrix vcov;
  Matrix M;
  double R(const Vector& x) const { return std::exp(basis.eval(x).dot(beta)); }
};

namespace detail {

inline void finalize_ratio(RatioEstimate& r) {
  const Eigen::Index n = r.if_values.size();
  r.se = std::sqrt(r.if_values.squaredNorm() / static_cast<double>(n) / static_cast<double>(n));
  r.se_log = r.se / r.psi_hat;
  r.ci_lo = std::exp(std::log(r.psi_hat) - kZ95 * r.se_log);
  r.ci_hi = std::exp(std::log(r.psi_hat) + kZ95 * r.se_log);
  r.se_available = true;
}

inline void combine_ratio(RatioEstimate& r) {
  r.psi_hat = r.psi1 / r.psi0;
  const Eigen::Index n = r.if1.size();
  r.if_values.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) r.if_values[i] = (r.if1[i] - r.psi_hat * r.if0[i]) / r.psi0;
  finalize_ratio(r);
}

inline double target_mean_outcome(const StudyDataset& d) {
  double acc = 0.0;
  Eigen::Index n1 = 0;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (d.g[i] == 1) {
      acc += d.y[i];
      ++n1;
    }
  return acc / static_cast<double>(n1);
}

inline Vector psi0_if(const StudyDataset& d, double psi0, double alpha) {
  Vector v = Vector::Zero(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (d.g[i] == 1) v[i] = (d.y[i] - psi0) / alpha;
  return v;
}

}  // namespace detail

// Plug-in ratio P_n{G R(X) Y} / P_n{G Y}.
inline RatioEstimate gformula_cmr(const StudyDataset& d, const OutcomeModel& outcome,
                                  const TargetMeanModel& target_mean) {
  if (d.mode != Mode::ratio || outcome.mode != Mode::ratio) throw DataError("gformula_cmr: requires ratio mode");
  double num = 0.0, den = 0.0, num_model = 0.0;
  Eigen::Index n1 = 0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    if (d.g[i] != 1) continue;
    const Vector x = d.x.row(i).transpose();
    const double rr = outcome.R(x);
    num += rr * d.y[i];
    num_model += rr * target_mean.Qbar(x);
    den += d.y[i];
    ++n1;
  }
  if (!(den > 0.0)) throw DataError("gformula_cmr: mean target outcome is not positive");
  RatioEstimate r;
  r.psi1 = num / static_cast<double>(n1);
  r.psi0 = den / static_cast<double>(n1);
  r.psi_hat = num / den;
  r.se_available = false;
  r.if_values = Vector::Zero(d.n());
  r.diag.notes.push_back("plug-in estimate; no standard error");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", num_model / den);
  r.diag.notes.push_back(std::string("model-based numerator form gives ") + buf);
  return r;
}

struct OneStepPsi1 {
  double psi1_init = std::numeric_limits<double>::quiet_NaN();
  double psi1 = std::numeric_limits<double>::quiet_NaN();
  Vector if_values;
  Diagnostics diag;
};

// Initial estimate P_n{G R(X) Y}/alpha, then a one-step correction applied on
// the log scale and exponentiated back. `literal_correction` divides the
// correction by log(psi1_init) instead of psi1_init.
inline OneStepPsi1 onestep_psi1(const StudyDataset& d, const NuisanceSet& nuisances, const WeightChoice& choice,
                                bool literal_correction = false) {
  if (d.mode != Mode::ratio) throw DataError("onestep_psi1: requires ratio mode");
  if (!nuisances.target_mean) throw DataError("onestep_psi1: target mean model not fitted");
  NuisanceSet nu = nuisances;
  nu.weights = choice;
  const Eigen::Index n = d.n();
  const double alpha = d.alpha_hat();
  OneStepPsi1 os;

  double acc = 0.0;
  Vector ry = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 1) continue;
    ry[i] = nu.outcome.R(d.x.row(i).transpose()) * d.y[i];
    acc += ry[i];
  }
  os.psi1_init = acc / static_cast<double>(n) / alpha;
  if (!(os.psi1_init > 0.0))
    throw NumericError("onestep_psi1: initial estimate is not positive");

  Vector aug = Vector::Zero(n);
  std::vector<double> w_used;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 0) continue;
    const Vector x = d.x.row(i).transpose();
    const Vector eta_x = nu.eta.eta(x);
    if (!(eta_x[d.s[i] - 1] > nu.tau)) {
      os.diag.zero_support_rows++;
      continue;
    }
    bool capped = false;
    const double wn = normalized_weight(nu, x, d.s[i], eta_x, i, &capped);
    if (capped) os.diag.weight_capped++;
    w_used.push_back(trial_weight(nu, x, d.s[i]));
    const double praw = nu.pi.pi_raw(x);
    const double p = clip_prob(praw);
    if (p != praw) os.diag.clipped_pi++;
    const double ea = nu.e.e(d.a[i], x, d.s[i]);
    const double q = nu.outcome.Q(d.a[i], x, d.s[i]);
    if (!(q > 0.0)) throw NumericError("onestep_psi1: nonpositive fitted outcome mean at row " + std::to_string(i + 1));
    aug[i] = p / (1.0 - p) * nu.outcome.R(x) * nu.target_mean->Qbar(x) * wn * (2.0 * d.a[i] - 1.0) / ea *
             (d.y[i] - q) / q;
  }
  const double aug_mean = aug.mean() / alpha;
  const double divisor = literal_correction ? std::log(os.psi1_init) : os.psi1_init;
  if (divisor == 0.0) throw NumericError("onestep_psi1: zero correction divisor");
  os.psi1 = os.psi1_init * std::exp(aug_mean / divisor);

  os.if_values = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i)
    os.if_values[i] = aug[i] / alpha + (d.g[i] == 1 ? (ry[i] - os.psi1) / alpha : 0.0);
  os.diag.ee_residual = std::abs(os.if_values.mean());
  if (!w_used.empty()) {
    double mn = w_used[0], mx = w_used[0], s = 0.0;
    for (double v : w_used) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      s += v;
    }
    os.diag.w_min = mn;
    os.diag.w_max = mx;
    os.diag.w_mean = s / static_cast<double>(w_used.size());
  }
  return os;
}

// Ratio of the one-step psi1 and the sample mean of target outcomes, with a
// delta-method interval from the joint influence values.
inline RatioEstimate cmr_estimate(const StudyDataset& d, const NuisanceSet& nuisances, const WeightChoice& choice,
                                  bool literal_correction = false) {
  if (d.mode != Mode::ratio) throw DataError("cmr_estimate: requires ratio mode");
  const double alpha = d.alpha_hat();
  RatioEstimate r;
  r.psi0 = detail::target_mean_outcome(d);
  if (!(r.psi0 > 0.0)) throw NumericError("cmr_estimate: mean target outcome is not positive");
  OneStepPsi1 os = onestep_psi1(d, nuisances, choice, literal_correction);
  r.psi1 = os.psi1;
  r.if1 = os.if_values;
  r.if0 = detail::psi0_if(d, r.psi0, alpha);
  r.diag = os.diag;
  detail::combine_ratio(r);
  return r;
}

inline RatioEstimate cmr_estimate(const StudyDataset& d, const NuisanceSet& nuisances) {
  return cmr_estimate(d, nuisances, nuisances.weights);
}

// Variant one-step ratio estimators under the coarser transport assumptions;
// see eif_ate_variant for the difference-mode analogues.
inline RatioEstimate cmr_variant(const StudyDataset& d, const VariantNuisances& vn, PooledVariant v) {
  if (d.mode != Mode::ratio) throw DataError("cmr_variant: requires ratio mode");
  if (!vn.target_mean) throw DataError("cmr_variant: target mean model not fitted");
  const Eigen::Index n = d.n();
  const double alpha = d.alpha_hat();
  RatioEstimate r;
  r.psi0 = detail::target_mean_outcome(d);
  if (!(r.psi0 > 0.0)) throw NumericError("cmr_variant: mean target outcome is not positive");

  double acc = 0.0;
  Vector ry = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 1) continue;
    ry[i] = vn.outcome_pooled.R(d.x.row(i).transpose()) * d.y[i];
    acc += ry[i];
  }
  const double psi1_init = acc / static_cast<double>(n) / alpha;
  if (!(psi1_init > 0.0)) throw NumericError("cmr_variant: initial estimate is not positive");

  Vector aug = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 0) continue;
    const Vector x = d.x.row(i).transpose();
    const double praw = vn.pi.pi_raw(x);
    const double p = clip_prob(praw);
    if (p != praw) r.diag.clipped_pi++;
    const double q = vn.outcome_pooled.Q(d.a[i], x, d.s[i]);
    if (!(q > 0.0)) throw NumericError("cmr_variant: nonpositive fitted outcome mean at row " + std::to_string(i + 1));
    const double rr = vn.outcome_pooled.R(x);
    const double qbar = vn.target_mean->Qbar(x);
    const double resid = (d.y[i] - q) / q;
    if (v == PooledVariant::pooled) {
      const double ea = vn.e_pooled.e(d.a[i], x, d.s[i]);
      aug[i] = p / (1.0 - p) * rr * qbar * (2.0 * d.a[i] - 1.0) / ea * resid;
      continue;
    }
    const Vector eta_x = vn.eta.eta(x);
    if (!(eta_x[d.s[i] - 1] > vn.tau)) {
      r.diag.zero_support_rows++;
      continue;
    }
    auto warm = [&](int trial) {
      const double vv = vn.variance.V(d.a[i], x, trial);
      if (!(vv > 1.0 / kWeightCap)) {
        r.diag.weight_capped++;
        return kWeightCap;
      }
      return 1.0 / vv;
    };
    double denom = 0.0;
    for (int t = 1; t <= d.m; ++t) {
      if (!(eta_x[t - 1] > vn.tau)) continue;
      denom += eta_x[t - 1] * warm(t) * vn.e_trial.e(d.a[i], x, t);
    }
    if (!(denom > 0.0))
      throw NumericError("cmr_variant: zero weight denominator at row " + std::to_string(i + 1));
    aug[i] = p / (1.0 - p) * rr * qbar * (2.0 * d.a[i] - 1.0) * warm(d.s[i]) / denom * resid;
  }
  const double aug_mean = aug.mean() / alpha;
  r.psi1 = psi1_init * std::exp(aug_mean / psi1_init);
  r.if1.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    r.if1[i] = aug[i] / alpha + (d.g[i] == 1 ? (ry[i] - r.psi1) / alpha : 0.0);
  r.if0 = detail::psi0_if(d, r.psi0, alpha);
  detail::combine_ratio(r);
  return r;
}

// Single-trial reduction with its own displayed influence function; agrees
// with cmr_estimate on any m=1 dataset.
inline RatioEstimate single_source_cmr(const StudyDataset& d, const NuisanceSet& nuisances) {
  if (d.mode != Mode::ratio) throw DataError("single_source_cmr: requires ratio mode");
  if (d.m != 1) throw DataError("single_source_cmr: dataset has " + std::to_string(d.m) + " trials, expected 1");
  if (!nuisances.target_mean) throw DataError("single_source_cmr: target mean model not fitted");
  const NuisanceSet& nu = nuisances;
  const Eigen::Index n = d.n();
  const double alpha = d.alpha_hat();
  RatioEstimate r;
  r.psi0 = detail::target_mean_outcome(d);
  if (!(r.psi0 > 0.0)) throw NumericError("single_source_cmr: mean target outcome is not positive");

  double acc = 0.0;
  Vector ry = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 1) continue;
    ry[i] = nu.outcome.R(d.x.row(i).transpose()) * d.y[i];
    acc += ry[i];
  }
  const double psi1_init = acc / static_cast<double>(n) / alpha;
  if (!(psi1_init > 0.0)) throw NumericError("single_source_cmr: initial estimate is not positive");

  Vector aug = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 0) continue;
    const Vector x = d.x.row(i).transpose();
    const double praw = nu.pi.pi_raw(x);
    const double p = clip_prob(praw);
    if (p != praw) r.diag.clipped_pi++;
    const double ea = nu.e.e(d.a[i], x, 1);
    const double q = nu.outcome.Q(d.a[i], x, 1);
    if (!(q > 0.0))
      throw NumericError("single_source_cmr: nonpositive fitted outcome mean at row " + std::to_string(i + 1));
    aug[i] = p / (1.0 - p) * nu.outcome.R(x) * nu.target_mean->Qbar(x) * (2.0 * d.a[i] - 1.0) / (ea * q) *
             (d.y[i] - q);
  }
  const double aug_mean = aug.mean() / alpha;
  r.psi1 = psi1_init * std::exp(aug_mean / psi1_init);
  r.if1.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    r.if1[i] = aug[i] / alpha + (d.g[i] == 1 ? (ry[i] - r.psi1) / alpha : 0.0);
  r.if0 = detail::psi0_if(d, r.psi0, alpha);
  detail::combine_ratio(r);
  return r;
}

// ------------------------------------------------- parametric ratio (score)

// Rowwise efficient score for log R(x;beta) = b(x)'beta; rows with G=1 are
// zero.
inline Matrix efficient_score_R(const StudyDataset& d, const ScoreNuisances& sn, const Basis& basis,
                                const Vector& beta) {
  if (d.mode != Mode::ratio) throw DataError("efficient_score_R: requires ratio mode");
  const Eigen::Index n = d.n(), k = basis.dim();
  Matrix S = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 0) continue;
    const Vector x = d.x.row(i).transpose();
    const Vector b = basis.eval(x);
    const double q0 = sn.q0(x, d.s[i]);
    if (!(q0 > 0.0))
      throw NumericError("efficient_score_R: nonpositive control mean at row " + std::to_string(i + 1));
    const double rr = std::exp(b.dot(beta));
    const double e1 = sn.e1(x, d.s[i]);
    const double nu1 = detail::safe_inv(sn.V(1, x, d.s[i]));
    const double nu0 = detail::safe_inv(sn.V(0, x, d.s[i]));
    const double denom = nu1 * rr * rr * e1 + nu0 * (1.0 - e1);
    const double rpow = d.a[i] == 1 ? rr * rr : rr;  // R^{1+A}
    const double bracket = d.a[i] - nu1 * rpow * e1 / denom;
    const double nua = d.a[i] == 1 ? nu1 : nu0;
    const double eps = d.y[i] - q0 * (d.a[i] == 1 ? rr : 1.0);
    S.row(i) = (q0 * rr * bracket * nua * eps) * b.transpose();
  }
  return S;
}

// -P_n[(1-G) Q0^2 nu1 A (R b)(R b)' nu0 e0 / (nu1 R^2 e1 + nu0 e0)].
inline Matrix score_jacobian_R(const StudyDataset& d, const ScoreNuisances& sn, const Basis& basis,
                               const Vector& beta) {
  const Eigen::Index n = d.n(), k = basis.dim();
  Matrix M = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 0 || d.a[i] != 1) continue;
    const Vector x = d.x.row(i).transpose();
    const Vector b = basis.eval(x);
    const double q0 = sn.q0(x, d.s[i]);
    const double rr = std::exp(b.dot(beta));
    const double e1 = sn.e1(x, d.s[i]);
    const double nu1 = detail::safe_inv(sn.V(1, x, d.s[i]));
    const double nu0 = detail::safe_inv(sn.V(0, x, d.s[i]));
    const double denom = nu1 * rr * rr * e1 + nu0 * (1.0 - e1);
    const Vector rb = rr * b;
    M -= q0 * q0 * nu1 * nu0 * (1.0 - e1) / denom * (rb * rb.transpose());
  }
  return M / static_cast<double>(n);
}

inline ParametricRatio solve_beta_R(const StudyDataset& d, const ScoreNuisances& sn, const Basis& basis,
                                    const Vector& beta0) {
  const Eigen::Index n = d.n();
  ParametricRatio pr;
  pr.basis = basis;
  pr.beta = beta0;
  std::vector<double> trace;
  for (int it = 1; it <= 100; ++it) {
    Matrix S = efficient_score_R(d, sn, basis, pr.beta);
    Vector sbar = S.colwise().mean().transpose();
    const double gn = sbar.lpNorm<Eigen::Infinity>();
    trace.push_back(gn);
    pr.M = score_jacobian_R(d, sn, basis, pr.beta);
    CholeskyFactor chol = detail::with_context("solve_beta_R: effect basis may be rank deficient: ",
                                               [&] { return cholesky_spd(-pr.M); });
    if (gn <= 1e-8) {
      Matrix meat = S.transpose() * S / static_cast<double>(n);
      Matrix minv_meat_t = chol.solve(meat).transpose();
      pr.vcov = chol.solve(minv_meat_t).transpose() / static_cast<double>(n);
      pr.vcov = ((pr.vcov + pr.vcov.transpose()) / 2.0).eval();
      return pr;
    }
    pr.beta += chol.solve(sbar);
  }
  std::string msg = "solve_beta_R: no convergence after 100 iterations; score norms:";
  for (size_t j = trace.size() > 6 ? trace.size() - 6 : 0; j < trace.size(); ++j)
    msg += " " + std::to_string(trace[j]);
  throw NumericError(msg);
}

// Plug-in ratio with score propagation for the numerator.
inline RatioEstimate psi_sp_R(const StudyDataset& d, const ParametricRatio& ratio, const ScoreNuisances& sn) {
  if (d.mode != Mode::ratio) throw DataError("psi_sp_R: requires ratio mode");
  const Eigen::Index n = d.n();
  const double alpha = d.alpha_hat();
  RatioEstimate r;
  r.psi0 = detail::target_mean_outcome(d);
  if (!(r.psi0 > 0.0)) throw NumericError("psi_sp_R: mean target outcome is not positive");

  Vector ry = Vector::Zero(n);
  Vector dbar = Vector::Zero(ratio.basis.dim());
  double acc = 0.0;
  Eigen::Index n1 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 1) continue;
    const Vector x = d.x.row(i).transpose();
    const double rr = ratio.R(x);
    ry[i] = rr * d.y[i];
    acc += ry[i];
    dbar += rr * d.y[i] * ratio.basis.eval(x);  // gradient of R(x;beta) Y is R b Y
    ++n1;
  }
  dbar /= static_cast<double>(n1);
  r.psi1 = acc / static_cast<double>(n) / alpha;

  Matrix S = efficient_score_R(d, sn, ratio.basis, ratio.beta);
  CholeskyFactor chol = cholesky_spd(-ratio.M);
  Vector prop = chol.solve(dbar);  // -M^{-1} dbar; sign folds into the + below
  r.if1.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double gpart = d.g[i] == 1 ? (ry[i] - r.psi1) / alpha : 0.0;
    r.if1[i] = gpart + S.row(i).dot(prop);
  }
  r.if0 = detail::psi0_if(d, r.psi0, alpha);
  detail::combine_ratio(r);
  return r;
}

}  // namespace transport
