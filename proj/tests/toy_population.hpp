#pragma once

// Discrete four-cell test population over two binary covariates. Every
// probability is rational and every cell count is an exact multiple of its
// probability, so empirical frequencies equal population values exactly.
// Outcomes come in adjacent +/- delta pairs around the true cell mean, which
// makes every within-cell residual sum cancel to zero in floating point.
//
// Shared constants:
//   P(x) = 1/4 per combination of (x1, x2) in {0,1}^2
//   selection odds pi/(1-pi) = (1/3) 2^{x1} 3^{x2}
//       -> pi = 1/4, 2/5, 1/2, 2/3 over (0,0),(1,0),(0,1),(1,1)
//   two trials; eta(2|x) odds = 2^{x1} -> eta1 = 1/2 (x1=0), 1/3 (x1=1)
//   e1 = 1/2; e2 = 1/4 (standard) or 1/2 (pooled variants)
//
// Difference mode: Q(0,x,s) = s + x1 + 2 x2, D(x) = 1 + x1
//   psi = E[pi D]/E[pi] = 173/109
// Ratio mode: Q(0,x,s) = 2^s 3^{x2}, R(x) = 2^{x1}, target mean 2 * 3^{x2}
//   psi1 = 786/109, psi0 = 498/109, psi = 131/83
//
// Multiplicity c = 48 rows per probability unit gives n = 11520 with every
// (x, s, arm) cell count even.

#include <cmath>
#include <limits>
#include <vector>

#include "transport/transport.hpp"

namespace toy {

using transport::Basis;
using transport::Matrix;
using transport::Mode;
using transport::NuisanceSet;
using transport::StudyDataset;
using transport::Vector;

inline constexpr double kPsiAte = 173.0 / 109.0;
inline constexpr double kPsiCmr = 131.0 / 83.0;
inline constexpr double kPsi1Cmr = 786.0 / 109.0;
inline constexpr double kPsi0Cmr = 498.0 / 109.0;

namespace detail {

struct Builder {
  std::vector<int> g, s, a;
  std::vector<double> y, x1, x2;

  void target_rows(double v1, double v2, int count, double base, double delta, Mode mode) {
    for (int k = 0; k < count; ++k) {
      g.push_back(1);
      s.push_back(0);
      x1.push_back(v1);
      x2.push_back(v2);
      if (mode == Mode::difference) {
        a.push_back(-1);
        y.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        a.push_back(0);
        y.push_back(k % 2 == 0 ? base + delta : base - delta);
      }
    }
  }

  void source_pairs(int trial, int arm, double v1, double v2, double base, double delta, int count) {
    for (int k = 0; k < count; ++k) {
      g.push_back(0);
      s.push_back(trial);
      a.push_back(arm);
      x1.push_back(v1);
      x2.push_back(v2);
      y.push_back(k % 2 == 0 ? base + delta : base - delta);
    }
  }

  StudyDataset finish(Mode mode, int m) const {
    StudyDataset d;
    d.mode = mode;
    d.m = m;
    const Eigen::Index n = static_cast<Eigen::Index>(g.size());
    d.g.resize(n);
    d.s.resize(n);
    d.a.resize(n);
    d.y.resize(n);
    d.x.resize(n, 2);
    d.xnames = {"x1", "x2"};
    for (Eigen::Index i = 0; i < n; ++i) {
      d.g[i] = g[static_cast<size_t>(i)];
      d.s[i] = s[static_cast<size_t>(i)];
      d.a[i] = a[static_cast<size_t>(i)];
      d.y[i] = y[static_cast<size_t>(i)];
      d.x(i, 0) = x1[static_cast<size_t>(i)];
      d.x(i, 1) = x2[static_cast<size_t>(i)];
    }
    transport::validate(d);
    return d;
  }
};

// Per-x counts at c = 48: {target, s1 per arm, s2 treated, s2 control}.
struct CellCounts {
  int target, s1_arm, s2_treated, s2_control;
};

inline const CellCounts kStandard[4] = {
    {720, 540, 270, 810}, {1152, 288, 288, 864}, {1440, 360, 180, 540}, {1920, 160, 160, 480}};
inline const CellCounts kBalanced[4] = {
    {720, 540, 540, 540}, {1152, 288, 576, 576}, {1440, 360, 360, 360}, {1920, 160, 320, 320}};

inline const double kX1[4] = {0.0, 1.0, 0.0, 1.0};
inline const double kX2[4] = {0.0, 0.0, 1.0, 1.0};

}  // namespace detail

inline transport::SelectionModel true_selection() {
  transport::SelectionModel pi;
  pi.basis = Basis::with_all(2);
  pi.coef = (Vector(3) << std::log(1.0 / 3.0), std::log(2.0), std::log(3.0)).finished();
  return pi;
}

inline transport::AffiliationModel true_affiliation() {
  transport::AffiliationModel eta;
  eta.kind = transport::AffiliationModel::Kind::global_multinomial;
  eta.m = 2;
  eta.basis = Basis::with({0});
  eta.coef = Matrix(1, 2);
  eta.coef << 0.0, std::log(2.0);
  return eta;
}

inline transport::VarianceModel flat_variance(int m, double v) {
  return transport::user_variance(m, [v](int, const Vector&, int) { return v; });
}

// ------------------------------------------------------------ difference toy

// Q(0,x,s) = s + x1 + 2 x2 encoded as a trial-linear control surface.
inline transport::OutcomeModel true_outcome_ate() {
  transport::OutcomeModel om;
  om.mode = Mode::difference;
  om.m = 2;
  om.spec.ctrl = transport::ControlKind::linear_in_s;
  om.spec.ctrl_basis = Basis::with_all(2);
  om.spec.s_by_x = false;
  om.spec.eff_basis = Basis::with({0});
  om.coef = (Vector(6) << 0.0, 1.0, 2.0, 1.0, 1.0, 1.0).finished();
  return om;
}

struct AtePopulation {
  StudyDataset data;
  NuisanceSet nu;
  double psi = kPsiAte;
};

inline AtePopulation toy_ate() {
  detail::Builder b;
  const double delta = 0.5;
  for (int c = 0; c < 4; ++c) {
    const double v1 = detail::kX1[c], v2 = detail::kX2[c];
    const auto& cnt = detail::kStandard[c];
    b.target_rows(v1, v2, cnt.target, 0.0, 0.0, Mode::difference);
    for (int s = 1; s <= 2; ++s) {
      const double q0 = s + v1 + 2.0 * v2;
      const double d = 1.0 + v1;
      const int treated = s == 1 ? cnt.s1_arm : cnt.s2_treated;
      const int control = s == 1 ? cnt.s1_arm : cnt.s2_control;
      b.source_pairs(s, 1, v1, v2, q0 + d, delta, treated);
      b.source_pairs(s, 0, v1, v2, q0, delta, control);
    }
  }
  AtePopulation pop;
  pop.data = b.finish(Mode::difference, 2);
  pop.nu.mode = Mode::difference;
  pop.nu.m = 2;
  pop.nu.pi = true_selection();
  pop.nu.eta = true_affiliation();
  pop.nu.e = transport::known_propensity((Vector(2) << 0.5, 0.25).finished());
  pop.nu.outcome = true_outcome_ate();
  pop.nu.variance = flat_variance(2, delta * delta);
  return pop;
}

// Same population with a trial-free control surface Q(0,x) = x1 + 2 x2 and
// equal randomization in both trials; exact for the pooled-assumption
// estimators.
inline transport::VariantNuisances toy_ate_pooled(StudyDataset& out_data) {
  detail::Builder b;
  const double delta = 0.5;
  for (int c = 0; c < 4; ++c) {
    const double v1 = detail::kX1[c], v2 = detail::kX2[c];
    const auto& cnt = detail::kBalanced[c];
    b.target_rows(v1, v2, cnt.target, 0.0, 0.0, Mode::difference);
    const double q0 = v1 + 2.0 * v2;
    const double d = 1.0 + v1;
    for (int s = 1; s <= 2; ++s) {
      const int treated = s == 1 ? cnt.s1_arm : cnt.s2_treated;
      const int control = s == 1 ? cnt.s1_arm : cnt.s2_control;
      b.source_pairs(s, 1, v1, v2, q0 + d, delta, treated);
      b.source_pairs(s, 0, v1, v2, q0, delta, control);
    }
  }
  out_data = b.finish(Mode::difference, 2);

  transport::VariantNuisances vn;
  vn.pi = true_selection();
  vn.eta = true_affiliation();
  vn.e_pooled = transport::known_propensity((Vector(2) << 0.5, 0.5).finished());
  vn.e_trial = vn.e_pooled;
  vn.outcome_pooled.mode = Mode::difference;
  vn.outcome_pooled.m = 2;
  vn.outcome_pooled.spec.ctrl = transport::ControlKind::pooled;
  vn.outcome_pooled.spec.ctrl_basis = Basis::with_all(2);
  vn.outcome_pooled.spec.eff_basis = Basis::with({0});
  vn.outcome_pooled.coef = (Vector(5) << 0.0, 1.0, 2.0, 1.0, 1.0).finished();
  vn.variance = flat_variance(2, delta * delta);
  return vn;
}

// ------------------------------------------------------------ ratio toy

// log Q(0,x,s) = s log2 + x2 log3; log R = x1 log2.
inline transport::OutcomeModel true_outcome_cmr() {
  transport::OutcomeModel om;
  om.mode = Mode::ratio;
  om.m = 2;
  om.spec.ctrl = transport::ControlKind::linear_in_s;
  om.spec.ctrl_basis = Basis::with_all(2);
  om.spec.s_by_x = false;
  om.spec.eff_basis = Basis::with({0});
  om.coef = (Vector(6) << 0.0, 0.0, std::log(3.0), std::log(2.0), 0.0, std::log(2.0)).finished();
  return om;
}

inline transport::TargetMeanModel true_target_mean() {
  transport::TargetMeanModel tm;
  tm.basis = Basis::with({1});
  tm.coef = (Vector(2) << std::log(2.0), std::log(3.0)).finished();
  return tm;
}

struct CmrPopulation {
  StudyDataset data;
  NuisanceSet nu;
  double psi = kPsiCmr;
  double psi1 = kPsi1Cmr;
  double psi0 = kPsi0Cmr;
};

inline CmrPopulation toy_cmr() {
  detail::Builder b;
  const double delta = 0.5;
  for (int c = 0; c < 4; ++c) {
    const double v1 = detail::kX1[c], v2 = detail::kX2[c];
    const auto& cnt = detail::kStandard[c];
    const double qbar = 2.0 * (v2 == 1.0 ? 3.0 : 1.0);
    const double r = v1 == 1.0 ? 2.0 : 1.0;
    b.target_rows(v1, v2, cnt.target, qbar, 0.25, Mode::ratio);
    for (int s = 1; s <= 2; ++s) {
      const double q0 = (s == 1 ? 2.0 : 4.0) * (v2 == 1.0 ? 3.0 : 1.0);
      const int treated = s == 1 ? cnt.s1_arm : cnt.s2_treated;
      const int control = s == 1 ? cnt.s1_arm : cnt.s2_control;
      b.source_pairs(s, 1, v1, v2, q0 * r, delta, treated);
      b.source_pairs(s, 0, v1, v2, q0, delta, control);
    }
  }
  CmrPopulation pop;
  pop.data = b.finish(Mode::ratio, 2);
  pop.nu.mode = Mode::ratio;
  pop.nu.m = 2;
  pop.nu.pi = true_selection();
  pop.nu.eta = true_affiliation();
  pop.nu.e = transport::known_propensity((Vector(2) << 0.5, 0.25).finished());
  pop.nu.outcome = true_outcome_cmr();
  pop.nu.variance = flat_variance(2, delta * delta);
  pop.nu.target_mean = true_target_mean();
  return pop;
}

// Pooled ratio population: Q(0,x) = 3^{x2} with equal randomization.
inline transport::VariantNuisances toy_cmr_pooled(StudyDataset& out_data) {
  detail::Builder b;
  const double delta = 0.5;
  for (int c = 0; c < 4; ++c) {
    const double v1 = detail::kX1[c], v2 = detail::kX2[c];
    const auto& cnt = detail::kBalanced[c];
    const double qbar = 2.0 * (v2 == 1.0 ? 3.0 : 1.0);
    const double q0 = v2 == 1.0 ? 3.0 : 1.0;
    const double r = v1 == 1.0 ? 2.0 : 1.0;
    b.target_rows(v1, v2, cnt.target, qbar, 0.25, Mode::ratio);
    for (int s = 1; s <= 2; ++s) {
      const int treated = s == 1 ? cnt.s1_arm : cnt.s2_treated;
      const int control = s == 1 ? cnt.s1_arm : cnt.s2_control;
      b.source_pairs(s, 1, v1, v2, q0 * r, 0.25, treated);
      b.source_pairs(s, 0, v1, v2, q0, 0.25, control);
    }
  }
  out_data = b.finish(Mode::ratio, 2);

  transport::VariantNuisances vn;
  vn.pi = true_selection();
  vn.eta = true_affiliation();
  vn.e_pooled = transport::known_propensity((Vector(2) << 0.5, 0.5).finished());
  vn.e_trial = vn.e_pooled;
  vn.outcome_pooled.mode = Mode::ratio;
  vn.outcome_pooled.m = 2;
  vn.outcome_pooled.spec.ctrl = transport::ControlKind::pooled;
  vn.outcome_pooled.spec.ctrl_basis = Basis::with_all(2);
  vn.outcome_pooled.spec.eff_basis = Basis::with({0});
  vn.outcome_pooled.coef = (Vector(5) << 0.0, 0.0, std::log(3.0), 0.0, std::log(2.0)).finished();
  vn.variance = flat_variance(2, delta * delta);
  vn.target_mean = true_target_mean();
  return vn;
}

// Single-trial ratio population: Q(0,x) = 2 * 3^{x2} equals the target mean
// surface, all source rows in trial 1 with e = 1/2.
inline CmrPopulation toy_cmr_single() {
  detail::Builder b;
  const double delta = 0.5;
  const int source[4] = {2160, 1728, 1440, 960};
  for (int c = 0; c < 4; ++c) {
    const double v1 = detail::kX1[c], v2 = detail::kX2[c];
    const double qbar = 2.0 * (v2 == 1.0 ? 3.0 : 1.0);
    const double r = v1 == 1.0 ? 2.0 : 1.0;
    b.target_rows(v1, v2, detail::kStandard[c].target, qbar, 0.25, Mode::ratio);
    b.source_pairs(1, 1, v1, v2, qbar * r, delta, source[c] / 2);
    b.source_pairs(1, 0, v1, v2, qbar, delta, source[c] / 2);
  }
  CmrPopulation pop;
  pop.data = b.finish(Mode::ratio, 1);
  pop.nu.mode = Mode::ratio;
  pop.nu.m = 1;
  pop.nu.pi = true_selection();
  pop.nu.eta.kind = transport::AffiliationModel::Kind::degenerate;
  pop.nu.eta.m = 1;
  pop.nu.e = transport::known_propensity(Vector::Constant(1, 0.5));
  pop.nu.outcome.mode = Mode::ratio;
  pop.nu.outcome.m = 1;
  pop.nu.outcome.spec.ctrl = transport::ControlKind::pooled;
  pop.nu.outcome.spec.ctrl_basis = Basis::with_all(2);
  pop.nu.outcome.spec.eff_basis = Basis::with({0});
  pop.nu.outcome.coef = (Vector(5) << std::log(2.0), 0.0, std::log(3.0), 0.0, std::log(2.0)).finished();
  pop.nu.variance = flat_variance(1, delta * delta);
  pop.nu.target_mean = true_target_mean();
  return pop;
}

}  // namespace toy
