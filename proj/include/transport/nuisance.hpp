#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "transport/data.hpp"
#include "transport/glm.hpp"
#include "transport/linalg.hpp"

namespace transport {

// Design builder over covariate columns; intercept first when present.
struct Basis {
  bool intercept = true;
  std::vector<Eigen::Index> covs;

  Eigen::Index dim() const { return (intercept ? 1 : 0) + static_cast<Eigen::Index>(covs.size()); }

  void eval_into(const Vector& x, Eigen::Ref<Vector> out) const {
    Eigen::Index k = 0;
    if (intercept) out[k++] = 1.0;
    for (Eigen::Index j : covs) out[k++] = x[j];
  }

  Vector eval(const Vector& x) const {
    Vector out(dim());
    eval_into(x, out);
    return out;
  }

  Matrix eval_rows(const Matrix& X) const {
    Matrix out(X.rows(), dim());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      Vector xi = X.row(i).transpose();
      Vector row(dim());
      eval_into(xi, row);
      out.row(i) = row.transpose();
    }
    return out;
  }

  static Basis intercept_only() { return Basis{true, {}}; }

  static Basis with_all(Eigen::Index p) {
    Basis b;
    b.covs.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) b.covs[j] = j;
    return b;
  }

  static Basis with(std::vector<Eigen::Index> idx, bool icept = true) { return Basis{icept, std::move(idx)}; }
};

namespace detail {

template <typename Fn>
auto with_context(const std::string& prefix, Fn&& fn) {
  try {
    return fn();
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------- selection

struct SelectionModel {
  Basis basis;
  Vector coef;

  double pi_raw(const Vector& x) const { return expit(basis.eval(x).dot(coef)); }
  double pi(const Vector& x) const { return clip_prob(pi_raw(x)); }

  Vector pi_all(const StudyDataset& d) const {
    Vector out(d.n());
    for (Eigen::Index i = 0; i < d.n(); ++i) out[i] = pi(d.x.row(i).transpose());
    return out;
  }
};

inline SelectionModel fit_selection(const StudyDataset& d, const Basis& basis) {
  return detail::with_context("fit_selection: ", [&] {
    Matrix X = basis.eval_rows(d.x);
    Vector y = d.g.cast<double>();
    FitResult fr = logistic_fit(X, y);
    if (!fr.converged)
      throw NumericError("did not converge after " + std::to_string(fr.iterations) +
                         " iterations; gradient norm " + std::to_string(fr.grad_norm));
    return SelectionModel{basis, fr.coef};
  });
}

// -------------------------------------------------------------- affiliation

// Trial-membership probabilities eta(s|x) on the source population.
// Kinds: degenerate (m=1), one multinomial over all trials, or a piecewise
// model keyed by cutpoints on one covariate with local binary/ternary fits.
struct AffiliationModel {
  enum class Kind { degenerate, global_multinomial, segmented };

  Kind kind = Kind::degenerate;
  int m = 1;
  Basis basis;
  Matrix coef;  // global: (m-1) x dim, trial 1 is the reference category

  Eigen::Index seg_cov = 0;
  Vector thresholds;       // 4 ascending cutpoints; 5 segments
  Vector seg2_coef;        // logit of trial 2 vs 1 on segment 2
  Vector seg4_coef;        // logit of trial 3 vs 2 on segment 4
  Matrix mid_coef;         // 2 x dim, trials 2,3 vs reference trial 1 on segment 3

  // Segment index 1..5; boundaries fall into the segment on their right.
  // Intervals are right-closed: v == thresholds[k] lands in segment k+1.
  int segment_of(double v) const {
    for (int k = 0; k < 4; ++k)
      if (v <= thresholds[k]) return k + 1;
    return 5;
  }

  Vector eta(const Vector& x) const {
    if (kind == Kind::degenerate) return Vector::Ones(1);
    if (kind == Kind::global_multinomial) {
      Vector b = basis.eval(x);
      Vector lp(m);
      lp[0] = 0.0;
      for (int t = 2; t <= m; ++t) lp[t - 1] = coef.row(t - 2).dot(b);
      const double mx = lp.maxCoeff();
      Vector w = (lp.array() - mx).exp();
      return w / w.sum();
    }
    Vector out = Vector::Zero(3);
    Vector b = basis.eval(x);
    switch (segment_of(x[seg_cov])) {
      case 1:
        out[0] = 1.0;
        break;
      case 2: {
        const double p = expit(b.dot(seg2_coef));
        out[0] = 1.0 - p;
        out[1] = p;
        break;
      }
      case 3: {
        Vector lp(3);
        lp[0] = 0.0;
        lp[1] = mid_coef.row(0).dot(b);
        lp[2] = mid_coef.row(1).dot(b);
        const double mx = lp.maxCoeff();
        Vector w = (lp.array() - mx).exp();
        out = w / w.sum();
        break;
      }
      case 4: {
        const double p = expit(b.dot(seg4_coef));
        out[1] = 1.0 - p;
        out[2] = p;
        break;
      }
      default:
        out[2] = 1.0;
    }
    return out;
  }

  Matrix eta_all(const StudyDataset& d) const {
    Matrix out(d.n(), m);
    for (Eigen::Index i = 0; i < d.n(); ++i) out.row(i) = eta(d.x.row(i).transpose()).transpose();
    return out;
  }
};

struct AffiliationConfig {
  AffiliationModel::Kind kind = AffiliationModel::Kind::global_multinomial;
  Basis basis;
  Eigen::Index seg_cov = 0;
  Vector thresholds;
};

inline AffiliationModel fit_affiliation(const StudyDataset& d, const AffiliationConfig& cfg) {
  AffiliationModel am;
  am.m = d.m;
  am.basis = cfg.basis;
  if (d.m == 1 || cfg.kind == AffiliationModel::Kind::degenerate) {
    am.kind = AffiliationModel::Kind::degenerate;
    if (d.m != 1) throw DataError("fit_affiliation: degenerate affiliation requires a single trial");
    return am;
  }

  std::vector<Eigen::Index> src;
  std::vector<Eigen::Index> per_trial(d.m, 0);
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (d.g[i] == 0) {
      src.push_back(i);
      per_trial[d.s[i] - 1]++;
    }
  for (int t = 1; t <= d.m; ++t)
    if (per_trial[t - 1] == 0) throw DataError("fit_affiliation: trial " + std::to_string(t) + " has no source rows");

  if (cfg.kind == AffiliationModel::Kind::global_multinomial) {
    am.kind = AffiliationModel::Kind::global_multinomial;
    Matrix X(static_cast<Eigen::Index>(src.size()), cfg.basis.dim());
    Eigen::VectorXi y(static_cast<Eigen::Index>(src.size()));
    for (size_t k = 0; k < src.size(); ++k) {
      X.row(static_cast<Eigen::Index>(k)) = cfg.basis.eval(d.x.row(src[k]).transpose()).transpose();
      y[static_cast<Eigen::Index>(k)] = d.s[src[k]] - 1;
    }
    return detail::with_context("fit_affiliation: ", [&] {
      MultinomialFit fr = multinomial_fit(X, y, d.m);
      if (!fr.converged)
        throw NumericError("did not converge after " + std::to_string(fr.iterations) + " iterations");
      am.coef = fr.coef;
      return am;
    });
  }

  // segmented
  if (d.m != 3) throw DataError("fit_affiliation: segmented affiliation requires exactly 3 trials");
  if (cfg.thresholds.size() != 4) throw DataError("fit_affiliation: segmented affiliation requires 4 cutpoints");
  am.kind = AffiliationModel::Kind::segmented;
  am.seg_cov = cfg.seg_cov;
  am.thresholds = cfg.thresholds;

  std::vector<std::vector<Eigen::Index>> by_seg(6);
  for (Eigen::Index i : src) by_seg[am.segment_of(d.x(i, cfg.seg_cov))].push_back(i);

  auto check_trials = [&](int seg, std::initializer_list<int> allowed) {
    for (Eigen::Index i : by_seg[seg])
      if (std::find(allowed.begin(), allowed.end(), d.s[i]) == allowed.end())
        throw DataError("fit_affiliation: trial " + std::to_string(d.s[i]) + " present in segment " +
                        std::to_string(seg));
  };
  check_trials(1, {1});
  check_trials(2, {1, 2});
  check_trials(3, {1, 2, 3});
  check_trials(4, {2, 3});
  check_trials(5, {3});

  auto seg_logit = [&](int seg, int hi_trial) {
    if (by_seg[seg].empty()) throw DataError("fit_affiliation: no source rows in segment " + std::to_string(seg));
    Matrix X(static_cast<Eigen::Index>(by_seg[seg].size()), cfg.basis.dim());
    Vector y(static_cast<Eigen::Index>(by_seg[seg].size()));
    for (size_t k = 0; k < by_seg[seg].size(); ++k) {
      const Eigen::Index i = by_seg[seg][k];
      X.row(static_cast<Eigen::Index>(k)) = cfg.basis.eval(d.x.row(i).transpose()).transpose();
      y[static_cast<Eigen::Index>(k)] = d.s[i] == hi_trial ? 1.0 : 0.0;
    }
    return detail::with_context("fit_affiliation: segment " + std::to_string(seg) + ": ", [&] {
      FitResult fr = logistic_fit(X, y);
      if (!fr.converged)
        throw NumericError("did not converge after " + std::to_string(fr.iterations) + " iterations");
      return fr.coef;
    });
  };
  am.seg2_coef = seg_logit(2, 2);
  am.seg4_coef = seg_logit(4, 3);

  if (by_seg[3].empty()) throw DataError("fit_affiliation: no source rows in segment 3");
  Matrix X(static_cast<Eigen::Index>(by_seg[3].size()), cfg.basis.dim());
  Eigen::VectorXi y(static_cast<Eigen::Index>(by_seg[3].size()));
  for (size_t k = 0; k < by_seg[3].size(); ++k) {
    const Eigen::Index i = by_seg[3][k];
    X.row(static_cast<Eigen::Index>(k)) = cfg.basis.eval(d.x.row(i).transpose()).transpose();
    y[static_cast<Eigen::Index>(k)] = d.s[i] - 1;
  }
  detail::with_context("fit_affiliation: segment 3: ", [&] {
    MultinomialFit fr = multinomial_fit(X, y, 3);
    if (!fr.converged)
      throw NumericError("did not converge after " + std::to_string(fr.iterations) + " iterations");
    am.mid_coef = fr.coef;
    return 0;
  });
  return am;
}

// --------------------------------------------------------------- propensity

struct PropensityModel {
  enum class Kind { known, per_trial, pooled };

  Kind kind = Kind::per_trial;
  int m = 0;
  Vector known_e;    // m entries, P(A=1 | trial)
  Basis basis;
  Matrix coef;       // per_trial: m x dim
  Vector pooled_coef;

  double e1(const Vector& x, int trial) const {
    switch (kind) {
      case Kind::known:
        return known_e[trial - 1];
      case Kind::per_trial:
        return clip_prob(expit(coef.row(trial - 1).dot(basis.eval(x))));
      default:
        return clip_prob(expit(pooled_coef.dot(basis.eval(x))));
    }
  }

  double e(int a, const Vector& x, int trial) const {
    const double p = e1(x, trial);
    return a == 1 ? p : 1.0 - p;
  }
};

inline PropensityModel known_propensity(const Vector& e_by_trial) {
  for (Eigen::Index t = 0; t < e_by_trial.size(); ++t)
    if (!(e_by_trial[t] > 0.0 && e_by_trial[t] < 1.0))
      throw DataError("known_propensity: probabilities must lie strictly in (0,1)");
  PropensityModel pm;
  pm.kind = PropensityModel::Kind::known;
  pm.m = static_cast<int>(e_by_trial.size());
  pm.known_e = e_by_trial;
  return pm;
}

inline PropensityModel fit_propensity(const StudyDataset& d, PropensityModel::Kind kind,
                                      const Basis& basis = Basis::intercept_only()) {
  if (kind == PropensityModel::Kind::known)
    throw DataError("fit_propensity: known propensities are constructed, not fitted");
  PropensityModel pm;
  pm.kind = kind;
  pm.m = d.m;
  pm.basis = basis;
  if (kind == PropensityModel::Kind::per_trial) {
    pm.coef.resize(d.m, basis.dim());
    for (int t = 1; t <= d.m; ++t) {
      std::vector<Eigen::Index> rows;
      Eigen::Index treated = 0;
      for (Eigen::Index i = 0; i < d.n(); ++i)
        if (d.g[i] == 0 && d.s[i] == t) {
          rows.push_back(i);
          treated += d.a[i];
        }
      if (treated == 0 || treated == static_cast<Eigen::Index>(rows.size()))
        throw DataError("fit_propensity: trial " + std::to_string(t) + " has a single arm");
      Matrix X(static_cast<Eigen::Index>(rows.size()), basis.dim());
      Vector y(static_cast<Eigen::Index>(rows.size()));
      for (size_t k = 0; k < rows.size(); ++k) {
        X.row(static_cast<Eigen::Index>(k)) = basis.eval(d.x.row(rows[k]).transpose()).transpose();
        y[static_cast<Eigen::Index>(k)] = d.a[rows[k]];
      }
      detail::with_context("fit_propensity: trial " + std::to_string(t) + ": ", [&] {
        FitResult fr = logistic_fit(X, y);
        if (!fr.converged)
          throw NumericError("did not converge after " + std::to_string(fr.iterations) + " iterations");
        pm.coef.row(t - 1) = fr.coef.transpose();
        return 0;
      });
    }
    return pm;
  }
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (d.g[i] == 0) rows.push_back(i);
  Matrix X(static_cast<Eigen::Index>(rows.size()), basis.dim());
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (size_t k = 0; k < rows.size(); ++k) {
    X.row(static_cast<Eigen::Index>(k)) = basis.eval(d.x.row(rows[k]).transpose()).transpose();
    y[static_cast<Eigen::Index>(k)] = d.a[rows[k]];
  }
  return detail::with_context("fit_propensity: ", [&] {
    FitResult fr = logistic_fit(X, y);
    if (!fr.converged)
      throw NumericError("did not converge after " + std::to_string(fr.iterations) + " iterations");
    pm.pooled_coef = fr.coef;
    return pm;
  });
}

// ------------------------------------------------------------------ outcome

enum class ControlKind { per_trial, linear_in_s, pooled };

struct OutcomeSpec {
  ControlKind ctrl = ControlKind::per_trial;
  Basis ctrl_basis;          // covariate part of the control surface
  bool s_by_x = true;        // linear_in_s: include trial-by-covariate products
  Basis eff_basis;           // effect surface: D(x) (difference) or log R(x) (ratio)
  bool control_only = false; // fit on control rows alone; requires an empty effect basis
};

// Joint regression of Y on [control columns, A * effect columns] over source
// rows. The additive (difference) or multiplicative (ratio) effect is shared
// across trials by construction, so Q(1,x,s)-Q(0,x,s) (resp. Q1/Q0) does not
// depend on s. A control_only spec regresses over untreated source rows
// instead and carries no effect surface, so Q(1,x,s) equals Q(0,x,s).
struct OutcomeModel {
  Mode mode = Mode::difference;
  int m = 0;
  OutcomeSpec spec;
  Vector coef;
  int iterations = 0;
  double grad_norm = 0.0;

  Eigen::Index ctrl_dim() const {
    const Eigen::Index db = spec.ctrl_basis.dim();
    const Eigen::Index nc = static_cast<Eigen::Index>(spec.ctrl_basis.covs.size());
    switch (spec.ctrl) {
      case ControlKind::per_trial:
        return static_cast<Eigen::Index>(m) * db;
      case ControlKind::linear_in_s:
        return db + 1 + (spec.s_by_x ? nc : 0);
      default:
        return db;
    }
  }

  Eigen::Index dim() const { return ctrl_dim() + spec.eff_basis.dim(); }

  void design_row(int a, const Vector& x, int trial, Eigen::Ref<Vector> row) const {
    row.setZero();
    const Eigen::Index db = spec.ctrl_basis.dim();
    switch (spec.ctrl) {
      case ControlKind::per_trial:
        spec.ctrl_basis.eval_into(x, row.segment((trial - 1) * db, db));
        break;
      case ControlKind::linear_in_s: {
        spec.ctrl_basis.eval_into(x, row.segment(0, db));
        row[db] = static_cast<double>(trial);
        if (spec.s_by_x) {
          Eigen::Index k = db + 1;
          for (Eigen::Index j : spec.ctrl_basis.covs) row[k++] = static_cast<double>(trial) * x[j];
        }
        break;
      }
      default:
        spec.ctrl_basis.eval_into(x, row.segment(0, db));
    }
    const Eigen::Index dc = ctrl_dim();
    if (a == 1) spec.eff_basis.eval_into(x, row.segment(dc, spec.eff_basis.dim()));
  }

  double ctrl_lp(const Vector& x, int trial) const {
    Vector row(dim());
    design_row(0, x, trial, row);
    return row.head(ctrl_dim()).dot(coef.head(ctrl_dim()));
  }

  double eff_lp(const Vector& x) const {
    return spec.eff_basis.eval(x).dot(coef.tail(spec.eff_basis.dim()));
  }

  double linpred(int a, const Vector& x, int trial) const {
    return ctrl_lp(x, trial) + (a == 1 ? eff_lp(x) : 0.0);
  }

  double Q(int a, const Vector& x, int trial) const {
    const double lp = linpred(a, x, trial);
    return mode == Mode::ratio ? std::exp(lp) : lp;
  }

  double D(const Vector& x) const { return eff_lp(x); }
  double R(const Vector& x) const { return std::exp(eff_lp(x)); }
};

inline OutcomeModel fit_outcome(const StudyDataset& d, const OutcomeSpec& spec) {
  if (spec.control_only && spec.eff_basis.dim() != 0)
    throw DataError("fit_outcome: a control_only spec cannot carry an effect basis");
  OutcomeModel om;
  om.mode = d.mode;
  om.m = d.m;
  om.spec = spec;

  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (d.g[i] == 0 && (!spec.control_only || d.a[i] == 0)) rows.push_back(i);
  const Eigen::Index n0 = static_cast<Eigen::Index>(rows.size());
  Matrix X(n0, om.dim());
  Vector y(n0);
  for (Eigen::Index k = 0; k < n0; ++k) {
    const Eigen::Index i = rows[k];
    Vector row(om.dim());
    om.design_row(d.a[i], d.x.row(i).transpose(), d.s[i], row);
    X.row(k) = row.transpose();
    y[k] = d.y[i];
  }

  return detail::with_context("fit_outcome: ", [&] {
    if (d.mode == Mode::difference) {
      OlsFit fr = ols_fit(X, y);
      om.coef = fr.coef;
      return om;
    }
    FitResult fr = loglink_fit(X, y, LogLinkFamily::gamma);
    om.iterations = fr.iterations;
    om.grad_norm = fr.grad_norm;
    if (!fr.converged) {
      std::string trace;
      const size_t k0 = fr.grad_trace.size() > 6 ? fr.grad_trace.size() - 6 : 0;
      for (size_t k = k0; k < fr.grad_trace.size(); ++k) {
        if (!trace.empty()) trace += ", ";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3e", fr.grad_trace[k]);
        trace += buf;
      }
      throw NumericError("gamma fit did not converge after " + std::to_string(fr.iterations) +
                         " iterations; trailing gradient norms: " + trace);
    }
    om.coef = fr.coef;
    return om;
  });
}

// -------------------------------------------------------------- target mean

// Log-link mean of Y on the target rows (ratio mode only).
struct TargetMeanModel {
  Basis basis;
  Vector coef;
  double Qbar(const Vector& x) const { return std::exp(basis.eval(x).dot(coef)); }
};

inline TargetMeanModel fit_target_mean(const StudyDataset& d, const Basis& basis) {
  if (d.mode != Mode::ratio) throw DataError("fit_target_mean: requires ratio mode");
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (d.g[i] == 1) rows.push_back(i);
  Matrix X(static_cast<Eigen::Index>(rows.size()), basis.dim());
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (size_t k = 0; k < rows.size(); ++k) {
    X.row(static_cast<Eigen::Index>(k)) = basis.eval(d.x.row(rows[k]).transpose()).transpose();
    y[static_cast<Eigen::Index>(k)] = d.y[rows[k]];
  }
  return detail::with_context("fit_target_mean: ", [&] {
    FitResult fr = loglink_fit(X, y, LogLinkFamily::gamma);
    if (!fr.converged)
      throw NumericError("gamma fit did not converge after " + std::to_string(fr.iterations) + " iterations");
    return TargetMeanModel{basis, fr.coef};
  });
}

// ----------------------------------------------------------------- variance

// Conditional outcome variance V(a,x,s). empirical: one mean squared residual
// per (arm, trial) cell. constant_snr: V = Q^2 / snr with snr fitted from
// squared relative residuals. user: arbitrary callable.
struct VarianceModel {
  enum class Kind { empirical, constant_snr, user };

  Kind kind = Kind::empirical;
  int m = 0;
  Matrix cell;  // 2 x m
  double snr = 1.0;
  OutcomeModel snr_outcome;
  std::function<double(int, const Vector&, int)> user_fn;

  double V(int a, const Vector& x, int trial) const {
    switch (kind) {
      case Kind::empirical:
        return cell(a, trial - 1);
      case Kind::constant_snr: {
        const double q = snr_outcome.Q(a, x, trial);
        return q * q / snr;
      }
      default:
        return user_fn(a, x, trial);
    }
  }
};

inline VarianceModel fit_variance(const StudyDataset& d, const OutcomeModel& outcome, VarianceModel::Kind kind) {
  if (kind == VarianceModel::Kind::user)
    throw DataError("fit_variance: user variance is constructed, not fitted");
  VarianceModel vm;
  vm.kind = kind;
  vm.m = d.m;
  if (kind == VarianceModel::Kind::empirical) {
    vm.cell = Matrix::Zero(2, d.m);
    Matrix cnt = Matrix::Zero(2, d.m);
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      if (d.g[i] != 0) continue;
      const double r = d.y[i] - outcome.Q(d.a[i], d.x.row(i).transpose(), d.s[i]);
      vm.cell(d.a[i], d.s[i] - 1) += r * r;
      cnt(d.a[i], d.s[i] - 1) += 1.0;
    }
    for (int t = 1; t <= d.m; ++t)
      for (int a = 0; a <= 1; ++a) {
        if (cnt(a, t - 1) == 0.0)
          throw DataError("fit_variance: no source rows in trial " + std::to_string(t) + " arm " +
                          std::to_string(a));
        vm.cell(a, t - 1) /= cnt(a, t - 1);
      }
    return vm;
  }
  vm.snr_outcome = outcome;
  double acc = 0.0;
  Eigen::Index n0 = 0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    if (d.g[i] != 0) continue;
    const double q = outcome.Q(d.a[i], d.x.row(i).transpose(), d.s[i]);
    if (q == 0.0) throw NumericError("fit_variance: zero fitted mean at row " + std::to_string(i + 1));
    const double r = (d.y[i] - q) / q;
    acc += r * r;
    ++n0;
  }
  if (acc == 0.0) throw NumericError("fit_variance: residuals are identically zero");
  vm.snr = static_cast<double>(n0) / acc;
  return vm;
}

inline VarianceModel user_variance(int m, std::function<double(int, const Vector&, int)> fn) {
  VarianceModel vm;
  vm.kind = VarianceModel::Kind::user;
  vm.m = m;
  vm.user_fn = std::move(fn);
  return vm;
}

// ------------------------------------------------------------------ weights

struct WeightChoice {
  enum class Kind { optimal, constant, custom };
  Kind kind = Kind::optimal;
  double l1 = 1.0;
  double l0 = 1.0;
};

// Accepts "optimal", "constant", or "custom:<l1>,<l0>".
inline WeightChoice parse_weights(const std::string& s) {
  WeightChoice wc;
  if (s == "optimal") return wc;
  if (s == "constant") {
    wc.kind = WeightChoice::Kind::constant;
    return wc;
  }
  if (s.rfind("custom:", 0) == 0) {
    wc.kind = WeightChoice::Kind::custom;
    const std::string rest = s.substr(7);
    const size_t comma = rest.find(',');
    if (comma == std::string::npos) throw DataError("weights: expected custom:<l1>,<l0>");
    try {
      wc.l1 = std::stod(rest.substr(0, comma));
      wc.l0 = std::stod(rest.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError("weights: cannot parse multipliers in '" + s + "'");
    }
    if (!(wc.l1 > 0.0) || !(wc.l0 > 0.0)) throw DataError("weights: multipliers must be positive");
    return wc;
  }
  throw DataError("weights: unknown choice '" + s + "'");
}

// Everything an estimator needs, fitted once per dataset.
struct NuisanceSet {
  Mode mode = Mode::difference;
  int m = 0;
  SelectionModel pi;
  AffiliationModel eta;
  PropensityModel e;
  OutcomeModel outcome;
  VarianceModel variance;
  std::optional<TargetMeanModel> target_mean;
  WeightChoice weights;
  double tau = kSupportTau;
};

// Inverse-precision trial weight w(x,s); capped at kWeightCap.
inline double trial_weight(const NuisanceSet& nu, const Vector& x, int trial, bool* capped = nullptr) {
  if (nu.weights.kind == WeightChoice::Kind::constant) return 1.0;
  const double l1 = nu.weights.kind == WeightChoice::Kind::custom ? nu.weights.l1 : 1.0;
  const double l0 = nu.weights.kind == WeightChoice::Kind::custom ? nu.weights.l0 : 1.0;
  const double e1 = nu.e.e1(x, trial);
  const double v1 = nu.variance.V(1, x, trial);
  const double v0 = nu.variance.V(0, x, trial);
  double denom;
  if (nu.mode == Mode::difference) {
    denom = l1 * v1 / e1 + l0 * v0 / (1.0 - e1);
  } else {
    const double q1 = nu.outcome.Q(1, x, trial);
    const double q0 = nu.outcome.Q(0, x, trial);
    denom = l1 * v1 / (e1 * q1 * q1) + l0 * v0 / ((1.0 - e1) * q0 * q0);
  }
  if (!(denom > 1.0 / kWeightCap)) {
    if (capped) *capped = true;
    return kWeightCap;
  }
  return 1.0 / denom;
}

// w(x,s) / sum_{s'} eta(s'|x) w(x,s'), summing over trials above the support
// floor. Throws when no trial clears the floor.
inline double normalized_weight(const NuisanceSet& nu, const Vector& x, int trial, const Vector& eta_x,
                                Eigen::Index row = -1, bool* capped = nullptr) {
  double denom = 0.0;
  double w_trial = 0.0;
  for (int t = 1; t <= nu.m; ++t) {
    const double et = eta_x[t - 1];
    double wt = 0.0;
    if (et > nu.tau || t == trial) wt = trial_weight(nu, x, t, capped);
    if (et > nu.tau) denom += et * wt;
    if (t == trial) w_trial = wt;
  }
  if (!(denom > 0.0)) {
    std::string where = row >= 0 ? " at row " + std::to_string(row + 1) : "";
    throw NumericError("normalized_weight: zero denominator" + where);
  }
  return w_trial / denom;
}

}  // namespace transport
