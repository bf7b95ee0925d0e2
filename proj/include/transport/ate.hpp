#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "transport/data.hpp"
#include "transport/nuisance.hpp"

namespace transport {

inline constexpr double kZ95 = 1.96;

struct Diagnostics {
  double ee_residual = std::numeric_limits<double>::quiet_NaN();
  double w_min = std::numeric_limits<double>::quiet_NaN();
  double w_max = std::numeric_limits<double>::quiet_NaN();
  double w_mean = std::numeric_limits<double>::quiet_NaN();
  Eigen::Index clipped_pi = 0;
  Eigen::Index zero_support_rows = 0;
  Eigen::Index weight_capped = 0;
  std::vector<std::string> notes;
};

struct EstimateReport {
  double psi_hat = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  double level = 0.95;
  bool se_available = false;
  Vector if_values;
  Diagnostics diag;
};

namespace detail {

inline void finalize_interval(EstimateReport& r) {
  if (r.se_available) {
    r.ci_lo = r.psi_hat - kZ95 * r.se;
    r.ci_hi = r.psi_hat + kZ95 * r.se;
  }
}

inline void summarize_weights(EstimateReport& r, const std::vector<double>& w) {
  if (w.empty()) return;
  double mn = w[0], mx = w[0], acc = 0.0;
  for (double v : w) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
    acc += v;
  }
  r.diag.w_min = mn;
  r.diag.w_max = mx;
  r.diag.w_mean = acc / static_cast<double>(w.size());
}

}  // namespace detail

// Plug-in estimate (1/alpha) P_n{G D(X)}; no standard error.
inline EstimateReport gformula_ate(const StudyDataset& d, const OutcomeModel& outcome, double alpha_hat) {
  if (d.mode != Mode::difference || outcome.mode != Mode::difference)
    throw DataError("gformula_ate: requires difference mode");
  if (d.n_target() == 0) throw DataError("gformula_ate: no target rows");
  const Eigen::Index n = d.n();
  EstimateReport r;
  Vector dvals = Vector::Zero(n);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 1) continue;
    dvals[i] = outcome.D(d.x.row(i).transpose());
    acc += dvals[i];
  }
  r.psi_hat = acc / static_cast<double>(n) / alpha_hat;
  r.if_values = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (d.g[i] == 1) r.if_values[i] = (dvals[i] - r.psi_hat) / alpha_hat;
  r.se_available = false;
  r.diag.notes.push_back("plug-in estimate; no standard error");
  return r;
}

inline EstimateReport gformula_ate(const StudyDataset& d, const OutcomeModel& outcome) {
  return gformula_ate(d, outcome, d.alpha_hat());
}

// Weighted outcomes from the source trials only; h must have unit conditional
// mean given (X, G=0). h == nullptr means h == 1.
inline EstimateReport ipw_ate(const StudyDataset& d, const SelectionModel& pi, const AffiliationModel& /*eta*/,
                              const PropensityModel& e,
                              const std::function<double(const Vector&, int)>& h = nullptr) {
  if (d.mode != Mode::difference) throw DataError("ipw_ate: requires difference mode");
  const Eigen::Index n = d.n();
  const double alpha = d.alpha_hat();
  EstimateReport r;
  r.if_values = Vector::Zero(n);
  Vector term = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 0) continue;
    const Vector x = d.x.row(i).transpose();
    const double praw = pi.pi_raw(x);
    const double p = clip_prob(praw);
    if (p != praw) r.diag.clipped_pi++;
    const double hv = h ? h(x, d.s[i]) : 1.0;
    const double ea = e.e(d.a[i], x, d.s[i]);
    term[i] = p / (1.0 - p) * hv * (2.0 * d.a[i] - 1.0) / ea * d.y[i];
  }
  r.psi_hat = term.mean() / alpha;
  for (Eigen::Index i = 0; i < n; ++i)
    r.if_values[i] = (term[i] - (d.g[i] == 1 ? r.psi_hat : 0.0)) / alpha;
  r.diag.ee_residual = std::abs(r.if_values.mean());
  double sq = r.if_values.squaredNorm() / static_cast<double>(n);
  r.se = std::sqrt(sq / static_cast<double>(n));
  r.se_available = true;
  r.diag.notes.push_back("standard error ignores nuisance estimation noise");
  if (r.diag.clipped_pi * 100 > n)
    r.diag.notes.push_back("warning: selection probability clipped on more than 1% of rows");
  detail::finalize_interval(r);
  return r;
}

// Callable h built from the fitted weight machinery.
inline std::function<double(const Vector&, int)> make_normalized_h(const NuisanceSet& nu) {
  return [nu](const Vector& x, int trial) {
    Vector eta_x = nu.eta.eta(x);
    return normalized_weight(nu, x, trial, eta_x);
  };
}

// Estimating-equation estimator: augmentation mean plus the g-formula term,
// both scaled by 1/alpha. The equation is linear in psi, so the solution is
// closed-form and the residual is zero to rounding.
inline EstimateReport eif_ate(const StudyDataset& d, const NuisanceSet& nuisances,
                              const WeightChoice& choice) {
  if (d.mode != Mode::difference) throw DataError("eif_ate: requires difference mode");
  NuisanceSet nu = nuisances;
  nu.weights = choice;
  const Eigen::Index n = d.n();
  const double alpha = d.alpha_hat();
  EstimateReport r;
  r.if_values = Vector::Zero(n);
  Vector aug = Vector::Zero(n);
  Vector dvals = Vector::Zero(n);
  std::vector<double> w_used;
  w_used.reserve(static_cast<size_t>(d.n_source()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = d.x.row(i).transpose();
    if (d.g[i] == 1) {
      dvals[i] = nu.outcome.D(x);
      continue;
    }
    const Vector eta_x = nu.eta.eta(x);
    if (!(eta_x[d.s[i] - 1] > nu.tau)) {
      r.diag.zero_support_rows++;
      continue;
    }
    bool capped = false;
    const double wn = normalized_weight(nu, x, d.s[i], eta_x, i, &capped);
    if (capped) r.diag.weight_capped++;
    w_used.push_back(trial_weight(nu, x, d.s[i]));
    const double praw = nu.pi.pi_raw(x);
    const double p = clip_prob(praw);
    if (p != praw) r.diag.clipped_pi++;
    const double ea = nu.e.e(d.a[i], x, d.s[i]);
    const double q = nu.outcome.Q(d.a[i], x, d.s[i]);
    aug[i] = p / (1.0 - p) * wn * (2.0 * d.a[i] - 1.0) / ea * (d.y[i] - q);
  }
  const double aug_mean = aug.mean();
  const double gterm = dvals.sum() / static_cast<double>(n);
  r.psi_hat = (aug_mean + gterm) / alpha;
  for (Eigen::Index i = 0; i < n; ++i)
    r.if_values[i] = (aug[i] + (d.g[i] == 1 ? dvals[i] - r.psi_hat : 0.0)) / alpha;
  r.diag.ee_residual = std::abs(r.if_values.mean());
  r.se = std::sqrt(r.if_values.squaredNorm() / static_cast<double>(n) / static_cast<double>(n));
  r.se_available = true;
  detail::summarize_weights(r, w_used);
  detail::finalize_interval(r);
  return r;
}

inline EstimateReport eif_ate(const StudyDataset& d, const NuisanceSet& nuisances) {
  return eif_ate(d, nuisances, nuisances.weights);
}

// Estimators under the two coarser outcome-transport assumptions: `pooled`
// conditions Q and e on (A,X) only; `armwise` keeps trial-specific e and V but
// pools Q, with arm-specific inverse-variance weights.
enum class PooledVariant { pooled, armwise };

struct VariantNuisances {
  SelectionModel pi;
  AffiliationModel eta;
  PropensityModel e_pooled;
  PropensityModel e_trial;
  OutcomeModel outcome_pooled;
  VarianceModel variance;
  std::optional<TargetMeanModel> target_mean;  // ratio mode only
  double tau = kSupportTau;
};

inline EstimateReport eif_ate_variant(const StudyDataset& d, const VariantNuisances& vn, PooledVariant v) {
  if (d.mode != Mode::difference) throw DataError("eif_ate_variant: requires difference mode");
  const Eigen::Index n = d.n();
  const double alpha = d.alpha_hat();
  EstimateReport r;
  r.if_values = Vector::Zero(n);
  Vector aug = Vector::Zero(n);
  Vector dvals = Vector::Zero(n);
  std::vector<double> w_used;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = d.x.row(i).transpose();
    if (d.g[i] == 1) {
      dvals[i] = vn.outcome_pooled.D(x);
      continue;
    }
    const double praw = vn.pi.pi_raw(x);
    const double p = clip_prob(praw);
    if (p != praw) r.diag.clipped_pi++;
    const double resid = d.y[i] - vn.outcome_pooled.Q(d.a[i], x, d.s[i]);
    if (v == PooledVariant::pooled) {
      const double ea = vn.e_pooled.e(d.a[i], x, d.s[i]);
      aug[i] = p / (1.0 - p) * (2.0 * d.a[i] - 1.0) / ea * resid;
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
      denom += warm(t) * vn.e_trial.e(d.a[i], x, t) * eta_x[t - 1];
    }
    if (!(denom > 0.0))
      throw NumericError("eif_ate_variant: zero weight denominator at row " + std::to_string(i + 1));
    const double wdag = warm(d.s[i]);
    w_used.push_back(wdag);
    aug[i] = p / (1.0 - p) * (2.0 * d.a[i] - 1.0) * wdag / denom * resid;
  }
  r.psi_hat = (aug.mean() + dvals.sum() / static_cast<double>(n)) / alpha;
  for (Eigen::Index i = 0; i < n; ++i)
    r.if_values[i] = (aug[i] + (d.g[i] == 1 ? dvals[i] - r.psi_hat : 0.0)) / alpha;
  r.diag.ee_residual = std::abs(r.if_values.mean());
  r.se = std::sqrt(r.if_values.squaredNorm() / static_cast<double>(n) / static_cast<double>(n));
  r.se_available = true;
  detail::summarize_weights(r, w_used);
  detail::finalize_interval(r);
  return r;
}

// Plug-in asymptotic variance difference between the inverse-precision-weight
// estimator and the constant-weight one; nonpositive by Cauchy-Schwarz.
inline double efficiency_gap(const NuisanceSet& nuisances, const Matrix& xgrid, double alpha) {
  NuisanceSet nu = nuisances;
  nu.weights = WeightChoice{};  // the gap formula is for the inverse-precision weights
  double acc = 0.0;
  for (Eigen::Index i = 0; i < xgrid.rows(); ++i) {
    const Vector x = xgrid.row(i).transpose();
    const Vector eta_x = nu.eta.eta(x);
    double sum_we = 0.0, sum_inv = 0.0, mass = 0.0;
    for (int t = 1; t <= nu.m; ++t) {
      if (!(eta_x[t - 1] > nu.tau)) continue;
      const double w = trial_weight(nu, x, t);
      sum_we += eta_x[t - 1] * w;
      sum_inv += eta_x[t - 1] / w;
      mass += eta_x[t - 1];
    }
    if (!(mass > 0.0) || !(sum_we > 0.0)) continue;
    const double p = nu.pi.pi(x);
    acc += p * p / (alpha * alpha * (1.0 - p)) * (1.0 / sum_we - sum_inv);
  }
  return acc / static_cast<double>(xgrid.rows());
}

// ---------------------------------------------------------------- DR-learner

struct PseudoOutcomes {
  std::vector<Eigen::Index> rows;  // source-row indices, in dataset order
  Vector zeta;
};

// zeta_i = wn * (2A-1)/e * (Y - Q(A,X,S)) + {Q(1,X,S) - Q(0,X,S)} on G=0 rows.
inline PseudoOutcomes drlearner_pseudo(const StudyDataset& d, const NuisanceSet& nu) {
  if (d.mode != Mode::difference) throw DataError("drlearner_pseudo: requires difference mode");
  PseudoOutcomes po;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (d.g[i] == 0) po.rows.push_back(i);
  po.zeta.resize(static_cast<Eigen::Index>(po.rows.size()));
  for (size_t k = 0; k < po.rows.size(); ++k) {
    const Eigen::Index i = po.rows[k];
    const Vector x = d.x.row(i).transpose();
    const double qdiff = nu.outcome.Q(1, x, d.s[i]) - nu.outcome.Q(0, x, d.s[i]);
    double resid_term = 0.0;
    const Vector eta_x = nu.eta.eta(x);
    if (eta_x[d.s[i] - 1] > nu.tau) {
      const double wn = normalized_weight(nu, x, d.s[i], eta_x, i);
      const double ea = nu.e.e(d.a[i], x, d.s[i]);
      resid_term = wn * (2.0 * d.a[i] - 1.0) / ea * (d.y[i] - nu.outcome.Q(d.a[i], x, d.s[i]));
    }
    po.zeta[static_cast<Eigen::Index>(k)] = resid_term + qdiff;
  }
  return po;
}

struct DrLearnerFit {
  Basis basis;
  Vector coef;
  double D(const Vector& x) const { return basis.eval(x).dot(coef); }
};

inline DrLearnerFit drlearner_fit(const PseudoOutcomes& po, const StudyDataset& d, const Basis& basis) {
  Matrix X(po.zeta.size(), basis.dim());
  for (size_t k = 0; k < po.rows.size(); ++k)
    X.row(static_cast<Eigen::Index>(k)) = basis.eval(d.x.row(po.rows[k]).transpose()).transpose();
  return detail::with_context("drlearner_fit: ", [&] {
    OlsFit fr = ols_fit(X, po.zeta);
    return DrLearnerFit{basis, fr.coef};
  });
}

// ------------------------------------------------- parametric effect (score)

// Q(0,x,s), V(a,x,s), e(1|x,s) as plain callables so fitted models, known
// truths, and deliberately wrong surfaces all enter the same way.
struct ScoreNuisances {
  std::function<double(const Vector&, int)> q0;
  std::function<double(int, const Vector&, int)> V;
  std::function<double(const Vector&, int)> e1;
};

inline ScoreNuisances make_score_nuisances(const OutcomeModel& outcome, const VarianceModel& variance,
                                           const PropensityModel& e) {
  ScoreNuisances sn;
  sn.q0 = [outcome](const Vector& x, int s) { return outcome.Q(0, x, s); };
  sn.V = [variance](int a, const Vector& x, int s) { return variance.V(a, x, s); };
  sn.e1 = [e](const Vector& x, int s) { return e.e1(x, s); };
  return sn;
}

struct ParametricCate {
  Basis basis;
  Vector beta;
  Matrix vcov;
  Matrix M;
  double D(const Vector& x) const { return basis.eval(x).dot(beta); }
};

namespace detail {

inline double safe_inv(double v) { return 1.0 / std::max(v, 1.0 / kWeightCap); }

}  // namespace detail

// Rowwise efficient score for a linear effect D(x;beta) = b(x)'beta; rows with
// G=1 are zero.
inline Matrix efficient_score_D(const StudyDataset& d, const ScoreNuisances& sn, const Basis& basis,
                                const Vector& beta) {
  if (d.mode != Mode::difference) throw DataError("efficient_score_D: requires difference mode");
  const Eigen::Index n = d.n(), k = basis.dim();
  Matrix S = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 0) continue;
    const Vector x = d.x.row(i).transpose();
    const Vector b = basis.eval(x);
    const double e1 = sn.e1(x, d.s[i]);
    const double nu1 = detail::safe_inv(sn.V(1, x, d.s[i]));
    const double nu0 = detail::safe_inv(sn.V(0, x, d.s[i]));
    const double bracket = d.a[i] - nu1 * e1 / (nu1 * e1 + nu0 * (1.0 - e1));
    const double nua = d.a[i] == 1 ? nu1 : nu0;
    const double eps = d.y[i] - (sn.q0(x, d.s[i]) + d.a[i] * b.dot(beta));
    S.row(i) = (bracket * nua * eps) * b.transpose();
  }
  return S;
}

// -P_n[(1-G) nu1 A (nu0 e0 / (nu1 e1 + nu0 e0)) b b']; beta-free for a linear
// effect, hence the exact Jacobian of the mean score.
inline Matrix score_jacobian_D(const StudyDataset& d, const ScoreNuisances& sn, const Basis& basis) {
  const Eigen::Index n = d.n(), k = basis.dim();
  Matrix M = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 0 || d.a[i] != 1) continue;
    const Vector x = d.x.row(i).transpose();
    const Vector b = basis.eval(x);
    const double e1 = sn.e1(x, d.s[i]);
    const double nu1 = detail::safe_inv(sn.V(1, x, d.s[i]));
    const double nu0 = detail::safe_inv(sn.V(0, x, d.s[i]));
    M -= nu1 * nu0 * (1.0 - e1) / (nu1 * e1 + nu0 * (1.0 - e1)) * (b * b.transpose());
  }
  return M / static_cast<double>(n);
}

inline ParametricCate solve_beta_D(const StudyDataset& d, const ScoreNuisances& sn, const Basis& basis,
                                   const Vector& beta0) {
  const Eigen::Index n = d.n(), k = basis.dim();
  ParametricCate pc;
  pc.basis = basis;
  pc.beta = beta0;
  pc.M = score_jacobian_D(d, sn, basis);
  CholeskyFactor chol = detail::with_context("solve_beta_D: effect basis may be rank deficient: ",
                                             [&] { return cholesky_spd(-pc.M); });
  std::vector<double> trace;
  for (int it = 1; it <= 100; ++it) {
    Matrix S = efficient_score_D(d, sn, basis, pc.beta);
    Vector sbar = S.colwise().mean().transpose();
    const double gn = sbar.lpNorm<Eigen::Infinity>();
    trace.push_back(gn);
    if (gn <= 1e-8) {
      Matrix meat = S.transpose() * S / static_cast<double>(n);
      Matrix minv_meat_t = chol.solve(meat).transpose();
      pc.vcov = chol.solve(minv_meat_t).transpose() / static_cast<double>(n);
      pc.vcov = ((pc.vcov + pc.vcov.transpose()) / 2.0).eval();
      return pc;
    }
    // M is negative definite; Newton step is beta - M^{-1} sbar
    pc.beta += chol.solve(sbar);
  }
  std::string msg = "solve_beta_D: no convergence after 100 iterations; score norms:";
  for (size_t j = trace.size() > 6 ? trace.size() - 6 : 0; j < trace.size(); ++j)
    msg += " " + std::to_string(trace[j]);
  throw NumericError(msg);
}

// Plug-in psi with score propagation through the solver.
inline EstimateReport psi_sp_D(const StudyDataset& d, const ParametricCate& cate, const ScoreNuisances& sn) {
  if (d.mode != Mode::difference) throw DataError("psi_sp_D: requires difference mode");
  const Eigen::Index n = d.n();
  const double alpha = d.alpha_hat();
  EstimateReport r;
  Vector dvals = Vector::Zero(n);
  Vector dbar = Vector::Zero(cate.basis.dim());
  Eigen::Index n1 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.g[i] != 1) continue;
    const Vector x = d.x.row(i).transpose();
    dvals[i] = cate.D(x);
    dbar += cate.basis.eval(x);
    ++n1;
  }
  dbar /= static_cast<double>(n1);
  r.psi_hat = dvals.sum() / static_cast<double>(n) / alpha;
  Matrix S = efficient_score_D(d, sn, cate.basis, cate.beta);
  CholeskyFactor chol = cholesky_spd(-cate.M);
  Vector prop = chol.solve(dbar);  // -M^{-1} dbar, sign folded below
  r.if_values = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double gpart = d.g[i] == 1 ? (dvals[i] - r.psi_hat) / alpha : 0.0;
    r.if_values[i] = gpart + S.row(i).dot(prop);
  }
  r.diag.ee_residual = std::abs(r.if_values.mean());
  r.se = std::sqrt(r.if_values.squaredNorm() / static_cast<double>(n) / static_cast<double>(n));
  r.se_available = true;
  detail::finalize_interval(r);
  return r;
}

}  // namespace transport
