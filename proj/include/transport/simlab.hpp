#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "transport/ate.hpp"
#include "transport/cmr.hpp"
#include "transport/data.hpp"
#include "transport/nuisance.hpp"
#include "transport/rng.hpp"

namespace transport {

// Synthetic-population description: covariate law, selection, trial
// affiliation with hard overlap thresholds on x1, per-trial randomization
// probabilities, and the outcome surfaces for each mode.
struct DgpSpec {
  Mode mode = Mode::difference;
  Eigen::Index p = 3;
  Matrix sigma;
  double sel_intercept = 0.0;
  Vector sel_slope;
  Vector thresholds;  // 4 cutpoints on x1, strictly increasing
  double g10 = 0.0;
  Vector g1;
  double g20 = 0.0;
  Vector g2;
  Vector e_trial;

  double d_intercept = 0.0;  // difference mode: effect surface
  Vector d_slope;
  Vector q0_intercept;  // per-trial control surfaces
  Matrix q0_slope;
  Vector sigma_y;

  double logr_intercept = 0.0;  // ratio mode: log effect surface
  Vector logr_slope;
  Vector logq0_intercept;  // per-trial log control surfaces
  Matrix logq0_slope;
  double logqbar_intercept = 0.0;  // target outcome mean surface
  Vector logqbar_slope;
  double gamma_shape = 9.0;

  int m() const { return static_cast<int>(e_trial.size()); }

  void validate() const {
    if (sigma.rows() != p || sigma.cols() != p) throw DataError("DgpSpec: sigma must be p x p");
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw DataError("DgpSpec: sigma must be positive definite");
    if (thresholds.size() != 4) throw DataError("DgpSpec: four thresholds required");
    for (int k = 1; k < 4; ++k)
      if (!(thresholds[k] > thresholds[k - 1])) throw DataError("DgpSpec: thresholds must be strictly increasing");
    for (Eigen::Index t = 0; t < e_trial.size(); ++t)
      if (!(e_trial[t] > 0.0 && e_trial[t] < 1.0))
        throw DataError("DgpSpec: treatment probabilities must lie strictly in (0,1)");
  }

  double pi(const Vector& x) const { return expit(sel_intercept + sel_slope.dot(x)); }

  // Right-closed intervals: x1 == thresholds[k] lands in segment k+1.
  int segment_of(double x1) const {
    for (int k = 0; k < 4; ++k)
      if (x1 <= thresholds[k]) return k + 1;
    return 5;
  }

  Vector eta(const Vector& x) const {
    Vector out = Vector::Zero(m());
    switch (segment_of(x[0])) {
      case 1:
        out[0] = 1.0;
        break;
      case 2: {
        const double pr = expit(g10 + g1.dot(x));
        out[0] = 1.0 - pr;
        out[1] = pr;
        break;
      }
      case 3: {
        Vector lp(3);
        lp[0] = 0.0;
        lp[1] = g10 + g1.dot(x);
        lp[2] = g20 + g2.dot(x);
        const double mx = lp.maxCoeff();
        Vector w = (lp.array() - mx).exp();
        out = w / w.sum();
        break;
      }
      case 4: {
        const double pr = expit(g20 + g2.dot(x));
        out[1] = 1.0 - pr;
        out[2] = pr;
        break;
      }
      default:
        out[2] = 1.0;
    }
    return out;
  }

  double D(const Vector& x) const { return d_intercept + d_slope.dot(x); }
  double q0_difference(const Vector& x, int s) const { return q0_intercept[s - 1] + q0_slope.row(s - 1).dot(x); }
  double R(const Vector& x) const { return std::exp(logr_intercept + logr_slope.dot(x)); }
  double q0_ratio(const Vector& x, int s) const {
    return std::exp(logq0_intercept[s - 1] + logq0_slope.row(s - 1).dot(x));
  }
  double qbar(const Vector& x) const { return std::exp(logqbar_intercept + logqbar_slope.dot(x)); }

  // Canonical byte string for cache keying; every generative constant appears.
  std::string key_material() const {
    std::string out = mode_name(mode);
    char buf[32];
    auto put = [&](double v) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out += buf;
    };
    put(static_cast<double>(p));
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < p; ++j) put(sigma(i, j));
    put(sel_intercept);
    for (Eigen::Index j = 0; j < sel_slope.size(); ++j) put(sel_slope[j]);
    for (int k = 0; k < 4; ++k) put(thresholds[k]);
    put(g10);
    for (Eigen::Index j = 0; j < g1.size(); ++j) put(g1[j]);
    put(g20);
    for (Eigen::Index j = 0; j < g2.size(); ++j) put(g2[j]);
    for (Eigen::Index t = 0; t < e_trial.size(); ++t) put(e_trial[t]);
    if (mode == Mode::difference) {
      put(d_intercept);
      for (Eigen::Index j = 0; j < d_slope.size(); ++j) put(d_slope[j]);
      for (Eigen::Index t = 0; t < q0_intercept.size(); ++t) {
        put(q0_intercept[t]);
        for (Eigen::Index j = 0; j < p; ++j) put(q0_slope(t, j));
        put(sigma_y[t]);
      }
    } else {
      put(logr_intercept);
      for (Eigen::Index j = 0; j < logr_slope.size(); ++j) put(logr_slope[j]);
      for (Eigen::Index t = 0; t < logq0_intercept.size(); ++t) {
        put(logq0_intercept[t]);
        for (Eigen::Index j = 0; j < p; ++j) put(logq0_slope(t, j));
      }
      put(logqbar_intercept);
      for (Eigen::Index j = 0; j < logqbar_slope.size(); ++j) put(logqbar_slope[j]);
      put(gamma_shape);
    }
    return out;
  }
};

namespace detail {

inline Matrix equicorrelated(Eigen::Index p, double rho) {
  Matrix s = Matrix::Constant(p, p, rho);
  s.diagonal().setOnes();
  return s;
}

inline DgpSpec dgp_shared() {
  DgpSpec spec;
  spec.p = 3;
  spec.sigma = equicorrelated(3, 0.5);
  spec.sel_intercept = -std::log(3.0);
  spec.sel_slope = Vector::Constant(3, std::log(1.25));
  spec.thresholds = (Vector(4) << -0.8, -0.25, 0.25, 0.8).finished();
  spec.g10 = std::log(1.5);
  spec.g1 = Vector::Constant(3, std::log(1.5));
  spec.g20 = -std::log(0.75);
  spec.g2 = Vector::Constant(3, std::log(0.75));
  spec.e_trial = (Vector(3) << 0.5, 0.4, 0.6).finished();
  return spec;
}

}  // namespace detail

inline DgpSpec dgp_difference() {
  DgpSpec spec = detail::dgp_shared();
  spec.mode = Mode::difference;
  spec.d_intercept = 1.0;
  spec.d_slope = Vector::Constant(3, 2.0);
  spec.q0_intercept = (Vector(3) << 1.0, 2.0, 3.0).finished();
  spec.q0_slope.resize(3, 3);
  for (int s = 1; s <= 3; ++s) spec.q0_slope.row(s - 1) = Vector::Constant(3, static_cast<double>(s - 1));
  spec.sigma_y = (Vector(3) << 1.0, std::sqrt(5.0), std::sqrt(10.0)).finished();
  return spec;
}

inline DgpSpec dgp_ratio() {
  DgpSpec spec = detail::dgp_shared();
  spec.mode = Mode::ratio;
  spec.logr_intercept = 0.2;
  spec.logr_slope = Vector::Constant(3, 0.2);
  spec.logq0_intercept.resize(3);
  spec.logq0_slope.resize(3, 3);
  for (int s = 1; s <= 3; ++s) {
    spec.logq0_intercept[s - 1] = std::log(9.0) - 1.0 + 0.2 * s;
    spec.logq0_slope.row(s - 1) = Vector::Constant(3, 0.05 * (s + 1));
  }
  spec.logqbar_intercept = std::log(9.0) - 0.75;
  spec.logqbar_slope = Vector::Constant(3, 0.2);
  spec.gamma_shape = 9.0;
  return spec;
}

// Draw order per row is a compatibility contract: x, then g, then (source
// rows) the segment-specific trial draw, treatment, outcome; target rows in
// ratio mode draw their outcome last.
inline StudyDataset gen_dataset(const DgpSpec& spec, Eigen::Index n, Rng& rng) {
  spec.validate();
  StudyDataset d;
  d.mode = spec.mode;
  d.m = spec.m();
  d.g.resize(n);
  d.s.resize(n);
  d.a.resize(n);
  d.y.resize(n);
  d.x.resize(n, spec.p);
  d.xnames.clear();
  for (Eigen::Index j = 0; j < spec.p; ++j) d.xnames.push_back("x" + std::to_string(j + 1));

  const CholeskyFactor chol = cholesky_spd(spec.sigma);
  const Vector mu = Vector::Zero(spec.p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = rng.mvnormal(mu, chol);
    d.x.row(i) = x.transpose();
    const int g = rng.bernoulli(spec.pi(x));
    d.g[i] = g;
    if (g == 0) {
      int s = 0;
      switch (spec.segment_of(x[0])) {
        case 1:
          s = 1;
          break;
        case 2:
          s = 1 + rng.bernoulli(expit(spec.g10 + spec.g1.dot(x)));
          break;
        case 3:
          s = 1 + rng.multinomial(spec.eta(x));
          break;
        case 4:
          s = 2 + rng.bernoulli(expit(spec.g20 + spec.g2.dot(x)));
          break;
        default:
          s = 3;
      }
      d.s[i] = s;
      const int a = rng.bernoulli(spec.e_trial[s - 1]);
      d.a[i] = a;
      if (spec.mode == Mode::difference) {
        d.y[i] = a * spec.D(x) + spec.q0_difference(x, s) + rng.normal(0.0, spec.sigma_y[s - 1]);
      } else {
        const double mean = spec.q0_ratio(x, s) * (a == 1 ? spec.R(x) : 1.0);
        d.y[i] = rng.gamma(spec.gamma_shape, mean / spec.gamma_shape);
      }
    } else {
      d.s[i] = 0;
      if (spec.mode == Mode::difference) {
        d.a[i] = -1;
        d.y[i] = std::numeric_limits<double>::quiet_NaN();
      } else {
        d.a[i] = 0;
        d.y[i] = rng.gamma(spec.gamma_shape, spec.qbar(x) / spec.gamma_shape);
      }
    }
  }
  validate(d);
  return d;
}

inline StudyDataset gen_dataset(const DgpSpec& spec, Eigen::Index n, std::uint64_t seed, std::uint64_t stream) {
  Rng rng(seed, stream);
  return gen_dataset(spec, n, rng);
}

// ------------------------------------------------------------ ground truth

struct OracleTruth {
  double psi = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  std::int64_t n_draws = 0;
};

// Importance form over the covariate law: both estimands are ratios of
// pi-weighted means of closed-form surfaces, so no outcome noise is drawn.
inline OracleTruth oracle_truth(const DgpSpec& spec, std::int64_t n_draws, Rng& rng) {
  spec.validate();
  const CholeskyFactor chol = cholesky_spd(spec.sigma);
  const Vector mu = Vector::Zero(spec.p);
  long double s1 = 0.0L, s0 = 0.0L;
  std::vector<double> h1(static_cast<size_t>(n_draws)), h0(static_cast<size_t>(n_draws));
  for (std::int64_t i = 0; i < n_draws; ++i) {
    const Vector x = rng.mvnormal(mu, chol);
    const double w = spec.pi(x);
    double a, b;
    if (spec.mode == Mode::difference) {
      a = w * spec.D(x);
      b = w;
    } else {
      const double qb = spec.qbar(x);
      a = w * spec.R(x) * qb;
      b = w * qb;
    }
    h1[static_cast<size_t>(i)] = a;
    h0[static_cast<size_t>(i)] = b;
    s1 += a;
    s0 += b;
  }
  OracleTruth t;
  t.n_draws = n_draws;
  t.psi = static_cast<double>(s1 / s0);
  const double mean0 = static_cast<double>(s0) / static_cast<double>(n_draws);
  long double ss = 0.0L;
  for (std::int64_t i = 0; i < n_draws; ++i) {
    const double inf = (h1[static_cast<size_t>(i)] - t.psi * h0[static_cast<size_t>(i)]) / mean0;
    ss += static_cast<long double>(inf) * inf;
  }
  t.se = std::sqrt(static_cast<double>(ss) / static_cast<double>(n_draws)) / std::sqrt(static_cast<double>(n_draws));
  return t;
}

namespace detail {

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::filesystem::path oracle_cache_dir() {
  if (const char* env = std::getenv("TRANSPORT_META_CACHE")) return std::filesystem::path(env);
  return std::filesystem::path(".transport-cache");
}

}  // namespace detail

constexpr std::int64_t kOracleDraws = 10'000'000;
constexpr std::uint64_t kOracleSeed = 0x0ac1e5eedULL;

// File-cached oracle keyed by the generative constants plus draw settings.
inline OracleTruth oracle_truth_cached(const DgpSpec& spec, std::int64_t n_draws = kOracleDraws,
                                       std::uint64_t seed = kOracleSeed, std::uint64_t stream = 0) {
  std::string material = spec.key_material();
  material += ";draws=" + std::to_string(n_draws) + ";seed=" + std::to_string(seed) +
              ";stream=" + std::to_string(stream);
  char hex[20];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(detail::fnv1a64(material)));
  const std::filesystem::path file = detail::oracle_cache_dir() / ("oracle-" + std::string(hex) + ".json");

  if (std::ifstream in{file}; in) {
    try {
      nlohmann::json j = nlohmann::json::parse(in);
      if (j.value("n_draws", std::int64_t{0}) == n_draws) {
        OracleTruth t;
        t.psi = j.at("psi").get<double>();
        t.se = j.at("se").get<double>();
        t.n_draws = n_draws;
        return t;
      }
    } catch (const std::exception&) {
      // unreadable cache entries are recomputed below
    }
  }

  Rng rng(seed, stream);
  OracleTruth t = oracle_truth(spec, n_draws, rng);
  try {
    std::filesystem::create_directories(file.parent_path());
    nlohmann::json j;
    j["psi"] = t.psi;
    j["se"] = t.se;
    j["n_draws"] = t.n_draws;
    std::ofstream out(file);
    out << j.dump(2) << "\n";
  } catch (const std::exception&) {
    // cache writes are best-effort
  }
  return t;
}

// ------------------------------------------------------------ scenarios

struct MisspecFlags {
  bool outcome = false;  // Q / D (or the control surface in ratio mode)
  bool e = false;
  bool eta = false;
  bool pi = false;
  bool v = false;            // variance feeding the weight function
  bool target_mean = false;  // ratio mode only
};

struct ScenarioConfig {
  std::string label;
  DgpSpec dgp;
  Eigen::Index n = 5000;
  int reps = 1000;
  std::uint64_t seed = 1;
  MisspecFlags wrong;
  WeightChoice weights;
  std::string estimator = "eif_ate";  // eif_ate | cmr_onestep | cmr_score
  int threads = 1;
};

inline void validate_config(const ScenarioConfig& cfg) {
  if (cfg.reps < 1) throw DataError("ScenarioConfig: reps must be at least 1");
  if (cfg.threads < 1) throw DataError("ScenarioConfig: threads must be at least 1");
  const bool ratio_est = cfg.estimator == "cmr_onestep" || cfg.estimator == "cmr_score";
  if (cfg.estimator == "eif_ate") {
    if (cfg.dgp.mode != Mode::difference) throw DataError("ScenarioConfig: eif_ate requires a difference-mode dgp");
    if (cfg.wrong.target_mean) throw DataError("ScenarioConfig: no target mean model in difference mode");
  } else if (ratio_est) {
    if (cfg.dgp.mode != Mode::ratio) throw DataError("ScenarioConfig: " + cfg.estimator + " requires a ratio-mode dgp");
  } else {
    throw DataError("ScenarioConfig: unknown estimator id '" + cfg.estimator + "'");
  }
}

namespace detail {

inline OutcomeSpec correct_outcome_spec(const DgpSpec& spec) {
  OutcomeSpec os;
  os.ctrl = ControlKind::per_trial;
  os.ctrl_basis = Basis::with_all(spec.p);
  os.eff_basis = Basis::with_all(spec.p);
  return os;
}

inline OutcomeSpec wrong_outcome_spec(const DgpSpec& spec) {
  OutcomeSpec os;
  os.ctrl = ControlKind::linear_in_s;
  os.ctrl_basis = Basis::with_all(spec.p);
  // The difference-mode working model carries trial-by-covariate products and
  // a constant additive effect; the ratio-mode one drops both and is fit on
  // control rows alone.
  if (spec.mode == Mode::difference) {
    os.s_by_x = true;
    os.eff_basis = Basis::intercept_only();
  } else {
    os.s_by_x = false;
    os.eff_basis = Basis{false, {}};
    os.control_only = true;
  }
  return os;
}

}  // namespace detail

// Fits every nuisance in either its correct form or the designated wrong
// form. The outcome flag and the variance flag are decoupled: each picks its
// own outcome fit, so a correct weight function can ride along with a wrong
// effect surface and vice versa.
inline NuisanceSet fit_scenario_nuisances(const StudyDataset& d, const DgpSpec& spec, const MisspecFlags& wrong) {
  NuisanceSet nu;
  nu.mode = d.mode;
  nu.m = d.m;

  nu.pi = wrong.pi ? fit_selection(d, Basis::with({0})) : fit_selection(d, Basis::with_all(spec.p));

  if (wrong.eta) {
    AffiliationConfig ac;
    ac.kind = AffiliationModel::Kind::global_multinomial;
    ac.basis = Basis::with_all(spec.p);
    nu.eta = fit_affiliation(d, ac);
  } else {
    AffiliationConfig ac;
    ac.kind = AffiliationModel::Kind::segmented;
    ac.basis = Basis::with_all(spec.p);
    ac.seg_cov = 0;
    ac.thresholds = spec.thresholds;
    nu.eta = fit_affiliation(d, ac);
  }

  nu.e = wrong.e ? known_propensity(Vector::Constant(d.m, 0.5))
                 : fit_propensity(d, PropensityModel::Kind::per_trial, Basis::intercept_only());

  OutcomeModel fit_correct, fit_wrong;
  const bool need_correct = !wrong.outcome || !wrong.v;
  const bool need_wrong = wrong.outcome || wrong.v;
  if (need_correct) fit_correct = fit_outcome(d, detail::correct_outcome_spec(spec));
  if (need_wrong) fit_wrong = fit_outcome(d, detail::wrong_outcome_spec(spec));
  nu.outcome = wrong.outcome ? fit_wrong : fit_correct;

  const OutcomeModel& vfit = wrong.v ? fit_wrong : fit_correct;
  if (d.mode == Mode::difference) {
    nu.variance = fit_variance(d, vfit, VarianceModel::Kind::empirical);
  } else {
    nu.variance = wrong.v ? fit_variance(d, vfit, VarianceModel::Kind::empirical)
                          : fit_variance(d, vfit, VarianceModel::Kind::constant_snr);
  }

  if (d.mode == Mode::ratio)
    nu.target_mean = wrong.target_mean ? fit_target_mean(d, Basis::intercept_only())
                                       : fit_target_mean(d, Basis::with_all(spec.p));
  return nu;
}

// Score-equation pipeline: the effect coefficients start from a joint fit of
// the correct working form, then Newton iterations at the scenario's control
// surface, randomization model, and variance choice.
inline RatioEstimate score_scenario_estimate(const StudyDataset& d, const DgpSpec& spec, const MisspecFlags& wrong) {
  const OutcomeModel init_fit = fit_outcome(d, detail::correct_outcome_spec(spec));
  const OutcomeModel q_fit = wrong.outcome ? fit_outcome(d, detail::wrong_outcome_spec(spec)) : init_fit;
  const PropensityModel e = wrong.e ? known_propensity(Vector::Constant(d.m, 0.5))
                                    : fit_propensity(d, PropensityModel::Kind::per_trial, Basis::intercept_only());
  const VarianceModel variance = wrong.v ? fit_variance(d, q_fit, VarianceModel::Kind::empirical)
                                         : fit_variance(d, init_fit, VarianceModel::Kind::constant_snr);
  const ScoreNuisances sn = make_score_nuisances(q_fit, variance, e);
  const Basis eff = Basis::with_all(spec.p);
  const Vector beta0 = init_fit.coef.tail(eff.dim());
  const ParametricRatio pr = solve_beta_R(d, sn, eff, beta0);
  return psi_sp_R(d, pr, sn);
}

// ------------------------------------------------------------ replication

struct RepRecord {
  double psi = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  bool covered = false;
  std::string error;
};

// Natural units throughout; the table renderings apply the display scalings.
struct SummaryRow {
  std::string label;
  Eigen::Index n = 0;
  int reps = 0;
  int failures = 0;
  double truth = std::numeric_limits<double>::quiet_NaN();
  double mean = std::numeric_limits<double>::quiet_NaN();
  double bias = std::numeric_limits<double>::quiet_NaN();
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double variance = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();  // percent
  double se_mean = std::numeric_limits<double>::quiet_NaN();
};

struct ScenarioResult {
  SummaryRow row;
  std::vector<RepRecord> reps;
  double oracle_se = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void fill_record(RepRecord& rec, double psi, double se, double lo, double hi, double truth) {
  rec.psi = psi;
  rec.se = se;
  rec.ci_lo = lo;
  rec.ci_hi = hi;
  rec.covered = lo <= truth && truth <= hi;
  rec.ok = true;
}

// Aggregation walks replications in index order regardless of how they were
// produced, so thread count cannot change the result.
inline SummaryRow summarize(const std::string& label, Eigen::Index n, double truth,
                            const std::vector<RepRecord>& reps) {
  SummaryRow row;
  row.label = label;
  row.n = n;
  row.reps = static_cast<int>(reps.size());
  row.truth = truth;
  long double sum = 0.0L, sum_se = 0.0L;
  std::int64_t k = 0, covered = 0;
  for (const RepRecord& r : reps) {
    if (!r.ok) {
      row.failures++;
      continue;
    }
    sum += r.psi;
    sum_se += r.se;
    covered += r.covered ? 1 : 0;
    ++k;
  }
  if (k == 0) return row;
  row.mean = static_cast<double>(sum / k);
  row.se_mean = static_cast<double>(sum_se / k);
  row.coverage = 100.0 * static_cast<double>(covered) / static_cast<double>(k);
  row.bias = row.mean - truth;
  long double ss_c = 0.0L, ss_t = 0.0L;
  for (const RepRecord& r : reps) {
    if (!r.ok) continue;
    ss_c += static_cast<long double>(r.psi - row.mean) * (r.psi - row.mean);
    ss_t += static_cast<long double>(r.psi - truth) * (r.psi - truth);
  }
  row.variance = static_cast<double>(ss_c / k);
  row.rmse = std::sqrt(static_cast<double>(ss_t / k));
  return row;
}

template <typename Work>
inline void for_each_rep(int reps, int threads, Work&& work) {
  if (threads <= 1) {
    for (int r = 0; r < reps; ++r) work(r);
    return;
  }
  const int nt = std::min(threads, reps);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nt));
  for (int t = 0; t < nt; ++t)
    pool.emplace_back([&, t] {
      for (int r = t; r < reps; r += nt) work(r);
    });
  for (std::thread& th : pool) th.join();
}

}  // namespace detail

inline ScenarioResult run_scenario(const ScenarioConfig& cfg) {
  validate_config(cfg);
  const OracleTruth truth = oracle_truth_cached(cfg.dgp);
  ScenarioResult result;
  result.oracle_se = truth.se;
  result.reps.resize(static_cast<size_t>(cfg.reps));

  detail::for_each_rep(cfg.reps, cfg.threads, [&](int r) {
    RepRecord& rec = result.reps[static_cast<size_t>(r)];
    try {
      Rng rng(cfg.seed, static_cast<std::uint64_t>(r));
      const StudyDataset d = gen_dataset(cfg.dgp, cfg.n, rng);
      if (cfg.estimator == "eif_ate") {
        NuisanceSet nu = fit_scenario_nuisances(d, cfg.dgp, cfg.wrong);
        const EstimateReport rep = eif_ate(d, nu, cfg.weights);
        detail::fill_record(rec, rep.psi_hat, rep.se, rep.ci_lo, rep.ci_hi, truth.psi);
      } else if (cfg.estimator == "cmr_onestep") {
        NuisanceSet nu = fit_scenario_nuisances(d, cfg.dgp, cfg.wrong);
        const RatioEstimate rep = cmr_estimate(d, nu, cfg.weights);
        detail::fill_record(rec, rep.psi_hat, rep.se, rep.ci_lo, rep.ci_hi, truth.psi);
      } else {
        const RatioEstimate rep = score_scenario_estimate(d, cfg.dgp, cfg.wrong);
        detail::fill_record(rec, rep.psi_hat, rep.se, rep.ci_lo, rep.ci_hi, truth.psi);
      }
    } catch (const std::exception& ex) {
      rec.ok = false;
      rec.error = ex.what();
    }
  });

  result.row = detail::summarize(cfg.label, cfg.n, truth.psi, result.reps);
  return result;
}

// One shared dataset and nuisance fit per replication, estimated under each
// weight choice; used for the weight-comparison grid.
inline std::vector<ScenarioResult> run_scenario_multi(const ScenarioConfig& cfg,
                                                      const std::vector<WeightChoice>& choices) {
  validate_config(cfg);
  if (cfg.estimator == "cmr_score") throw DataError("run_scenario_multi: weight choices do not apply to cmr_score");
  const OracleTruth truth = oracle_truth_cached(cfg.dgp);
  std::vector<ScenarioResult> results(choices.size());
  for (ScenarioResult& res : results) {
    res.oracle_se = truth.se;
    res.reps.resize(static_cast<size_t>(cfg.reps));
  }

  detail::for_each_rep(cfg.reps, cfg.threads, [&](int r) {
    try {
      Rng rng(cfg.seed, static_cast<std::uint64_t>(r));
      const StudyDataset d = gen_dataset(cfg.dgp, cfg.n, rng);
      const NuisanceSet nu = fit_scenario_nuisances(d, cfg.dgp, cfg.wrong);
      for (size_t w = 0; w < choices.size(); ++w) {
        RepRecord& rec = results[w].reps[static_cast<size_t>(r)];
        try {
          if (cfg.estimator == "eif_ate") {
            const EstimateReport rep = eif_ate(d, nu, choices[w]);
            detail::fill_record(rec, rep.psi_hat, rep.se, rep.ci_lo, rep.ci_hi, truth.psi);
          } else {
            const RatioEstimate rep = cmr_estimate(d, nu, choices[w]);
            detail::fill_record(rec, rep.psi_hat, rep.se, rep.ci_lo, rep.ci_hi, truth.psi);
          }
        } catch (const std::exception& ex) {
          rec.ok = false;
          rec.error = ex.what();
        }
      }
    } catch (const std::exception& ex) {
      for (size_t w = 0; w < choices.size(); ++w) {
        results[w].reps[static_cast<size_t>(r)].ok = false;
        results[w].reps[static_cast<size_t>(r)].error = ex.what();
      }
    }
  });

  for (size_t w = 0; w < choices.size(); ++w)
    results[w].row = detail::summarize(cfg.label + "/w" + std::to_string(w + 1), cfg.n, truth.psi, results[w].reps);
  return results;
}

// ------------------------------------------------------------ rendering

enum class TableLayout { table1, table2, table3 };

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace detail

// Aligned text with the conventional row order. The bias row is displayed in
// units of 1e-2 in every layout; the second and third layouts scale RMSE and
// SE the same way.
inline std::string emit_table_text(const std::vector<SummaryRow>& rows, TableLayout layout) {
  if (rows.empty()) return "Type\n";
  const bool scale_all = layout != TableLayout::table1;
  std::vector<std::string> header{"Type"};
  std::vector<std::vector<std::string>> body{{"Mean"}, {"Bias"}, {"RMSE"}, {"Coverage"}, {"SE"}};
  for (const SummaryRow& r : rows) {
    header.push_back(r.label + " (n=" + std::to_string(r.n) + ")");
    body[0].push_back(detail::fmt2(r.mean));
    body[1].push_back(detail::fmt2(r.bias * 100.0));
    body[2].push_back(detail::fmt2(scale_all ? r.rmse * 100.0 : r.rmse));
    body[3].push_back(detail::fmt2(r.coverage));
    body[4].push_back(detail::fmt2(scale_all ? r.se_mean * 100.0 : r.se_mean));
  }
  std::vector<size_t> width(header.size());
  for (size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : body) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) out << "  ";
      out << (c == 0 ? "" : std::string(width[c] - cells[c].size(), ' ')) << cells[c];
      if (c == 0) out << std::string(width[0] - cells[0].size(), ' ');
    }
    out << "\n";
  };
  line(header);
  for (const auto& row : body) line(row);
  return out.str();
}

// Full-precision CSV in natural units; parse_summary_csv restores it exactly.
inline std::string emit_table_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "label,n,reps,failures,truth,mean,bias,rmse,variance,coverage_pct,se_mean\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << "," << buf;
  };
  for (const SummaryRow& r : rows) {
    out << r.label << "," << r.n << "," << r.reps << "," << r.failures;
    put(r.truth);
    put(r.mean);
    put(r.bias);
    put(r.rmse);
    put(r.variance);
    put(r.coverage);
    put(r.se_mean);
    out << "\n";
  }
  return out.str();
}

inline std::vector<SummaryRow> parse_summary_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw DataError("parse_summary_csv: empty input");
  if (line != "label,n,reps,failures,truth,mean,bias,rmse,variance,coverage_pct,se_mean")
    throw DataError("parse_summary_csv: unexpected header");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 11) throw DataError("parse_summary_csv: expected 11 cells per line");
    SummaryRow r;
    r.label = cells[0];
    r.n = std::stoll(cells[1]);
    r.reps = std::stoi(cells[2]);
    r.failures = std::stoi(cells[3]);
    r.truth = std::strtod(cells[4].c_str(), nullptr);
    r.mean = std::strtod(cells[5].c_str(), nullptr);
    r.bias = std::strtod(cells[6].c_str(), nullptr);
    r.rmse = std::strtod(cells[7].c_str(), nullptr);
    r.variance = std::strtod(cells[8].c_str(), nullptr);
    r.coverage = std::strtod(cells[9].c_str(), nullptr);
    r.se_mean = std::strtod(cells[10].c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ------------------------------------------------------------ presets

struct SimulationPlan {
  TableLayout layout = TableLayout::table1;
  std::vector<ScenarioConfig> configs;
  // Non-empty for the weight-comparison layout: each config runs once per
  // choice via run_scenario_multi.
  std::vector<WeightChoice> weight_variants;
};

inline MisspecFlags scenario_flags(TableLayout layout, int scen) {
  MisspecFlags f;
  if (layout == TableLayout::table1) {
    switch (scen) {
      case 1:
        break;
      case 2:
        f.outcome = true;
        break;
      case 3:
        f.e = f.eta = f.pi = f.v = true;
        break;
      case 4:
        f.outcome = f.e = f.eta = f.pi = f.v = true;
        break;
      default:
        throw DataError("scenario_flags: difference grid has scenarios 1-4");
    }
    return f;
  }
  if (layout == TableLayout::table3) {
    switch (scen) {
      case 1:
        f.v = true;
        break;
      case 2:
        f.outcome = f.v = true;
        break;
      case 3:
        f.e = f.v = true;
        break;
      case 4:
        f.outcome = f.e = f.v = true;
        break;
      case 5:
        break;
      default:
        throw DataError("scenario_flags: score grid has scenarios 1-5");
    }
    return f;
  }
  throw DataError("scenario_flags: the weight grid has no misspecified scenarios");
}

inline SimulationPlan preset_plan(const std::string& name, int reps, std::uint64_t seed, int threads,
                                  const std::vector<Eigen::Index>& sizes = {1250, 5000}) {
  SimulationPlan plan;
  auto base = [&](const DgpSpec& dgp, Eigen::Index n) {
    ScenarioConfig cfg;
    cfg.dgp = dgp;
    cfg.n = n;
    cfg.reps = reps;
    cfg.seed = seed;
    cfg.threads = threads;
    return cfg;
  };
  if (name == "table1") {
    plan.layout = TableLayout::table1;
    for (Eigen::Index n : sizes)
      for (int scen = 1; scen <= 4; ++scen) {
        ScenarioConfig cfg = base(dgp_difference(), n);
        cfg.label = std::to_string(scen);
        cfg.wrong = scenario_flags(TableLayout::table1, scen);
        cfg.estimator = "eif_ate";
        plan.configs.push_back(std::move(cfg));
      }
    return plan;
  }
  if (name == "table2") {
    plan.layout = TableLayout::table2;
    for (Eigen::Index n : sizes) {
      ScenarioConfig cfg = base(dgp_ratio(), n);
      cfg.label = "w";
      cfg.estimator = "cmr_onestep";
      plan.configs.push_back(std::move(cfg));
    }
    plan.weight_variants = {parse_weights("optimal"), parse_weights("constant"), parse_weights("custom:1,10"),
                            parse_weights("custom:10,1")};
    return plan;
  }
  if (name == "table3") {
    plan.layout = TableLayout::table3;
    for (Eigen::Index n : sizes)
      for (int scen = 1; scen <= 5; ++scen) {
        ScenarioConfig cfg = base(dgp_ratio(), n);
        cfg.label = std::to_string(scen);
        cfg.wrong = scenario_flags(TableLayout::table3, scen);
        cfg.estimator = "cmr_score";
        plan.configs.push_back(std::move(cfg));
      }
    return plan;
  }
  throw DataError("preset_plan: unknown preset '" + name + "' (expected table1, table2, or table3)");
}

inline std::vector<SummaryRow> run_plan(const SimulationPlan& plan) {
  std::vector<SummaryRow> rows;
  for (const ScenarioConfig& cfg : plan.configs) {
    if (!plan.weight_variants.empty()) {
      std::vector<ScenarioResult> rs = run_scenario_multi(cfg, plan.weight_variants);
      for (size_t w = 0; w < rs.size(); ++w) {
        rs[w].row.label = std::to_string(w + 1);
        rows.push_back(rs[w].row);
      }
    } else {
      rows.push_back(run_scenario(cfg).row);
    }
  }
  return rows;
}

}  // namespace transport
