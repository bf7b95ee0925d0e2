#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "transport/data.hpp"
#include "transport/nuisance.hpp"
#include "transport/simlab.hpp"

namespace transport {

// Configuration for estimating on a user dataset. Defaults use every
// covariate in each nuisance and fit the most general forms that need no
// extra structure.
struct EstimateSpec {
  Basis selection_basis;
  AffiliationConfig affiliation;
  PropensityModel::Kind e_kind = PropensityModel::Kind::per_trial;
  Basis e_basis = Basis::intercept_only();
  Vector e_known;
  OutcomeSpec outcome;
  VarianceModel::Kind variance = VarianceModel::Kind::empirical;
  Basis target_basis;
  WeightChoice weights;
  Basis dr_basis;
};

inline EstimateSpec default_estimate_spec(const StudyDataset& d) {
  EstimateSpec spec;
  spec.selection_basis = Basis::with_all(d.p());
  spec.affiliation.kind =
      d.m == 1 ? AffiliationModel::Kind::degenerate : AffiliationModel::Kind::global_multinomial;
  spec.affiliation.basis = Basis::with_all(d.p());
  spec.outcome.ctrl = ControlKind::per_trial;
  spec.outcome.ctrl_basis = Basis::with_all(d.p());
  spec.outcome.eff_basis = Basis::with_all(d.p());
  spec.target_basis = Basis::with_all(d.p());
  spec.dr_basis = Basis::with_all(d.p());
  return spec;
}

namespace detail {

inline Eigen::Index resolve_covariate(const nlohmann::json& v, const StudyDataset& d) {
  if (v.is_string()) {
    const std::string name = v.get<std::string>();
    for (size_t j = 0; j < d.xnames.size(); ++j)
      if (d.xnames[j] == name) return static_cast<Eigen::Index>(j);
    throw DataError("model spec: unknown covariate '" + name + "'");
  }
  if (v.is_number_integer()) {
    const auto k = v.get<Eigen::Index>();
    if (k < 1 || k > d.p()) throw DataError("model spec: covariate number " + std::to_string(k) + " out of range");
    return k - 1;
  }
  throw DataError("model spec: covariates must be names or 1-based numbers");
}

inline Basis parse_basis(const nlohmann::json& j, const StudyDataset& d) {
  Basis b;
  b.intercept = j.value("intercept", true);
  if (j.contains("covariates")) {
    for (const auto& v : j.at("covariates")) b.covs.push_back(resolve_covariate(v, d));
  } else {
    b = Basis::with_all(d.p());
    b.intercept = j.value("intercept", true);
  }
  return b;
}

}  // namespace detail

inline EstimateSpec parse_estimate_spec(const nlohmann::json& j, const StudyDataset& d) {
  EstimateSpec spec = default_estimate_spec(d);
  if (j.contains("selection")) spec.selection_basis = detail::parse_basis(j.at("selection"), d);
  if (j.contains("affiliation")) {
    const nlohmann::json& a = j.at("affiliation");
    const std::string kind = a.value("kind", d.m == 1 ? "degenerate" : "multinomial");
    if (kind == "degenerate") {
      spec.affiliation.kind = AffiliationModel::Kind::degenerate;
    } else if (kind == "multinomial") {
      spec.affiliation.kind = AffiliationModel::Kind::global_multinomial;
    } else if (kind == "segmented") {
      spec.affiliation.kind = AffiliationModel::Kind::segmented;
      if (!a.contains("thresholds")) throw DataError("model spec: segmented affiliation requires thresholds");
      const auto th = a.at("thresholds").get<std::vector<double>>();
      spec.affiliation.thresholds.resize(static_cast<Eigen::Index>(th.size()));
      for (size_t k = 0; k < th.size(); ++k) spec.affiliation.thresholds[static_cast<Eigen::Index>(k)] = th[k];
      if (a.contains("segment_covariate"))
        spec.affiliation.seg_cov = detail::resolve_covariate(a.at("segment_covariate"), d);
    } else {
      throw DataError("model spec: unknown affiliation kind '" + kind + "'");
    }
    spec.affiliation.basis = detail::parse_basis(a, d);
  }
  if (j.contains("propensity")) {
    const nlohmann::json& e = j.at("propensity");
    const std::string kind = e.value("kind", "per_trial");
    if (kind == "per_trial") {
      spec.e_kind = PropensityModel::Kind::per_trial;
    } else if (kind == "pooled") {
      spec.e_kind = PropensityModel::Kind::pooled;
    } else if (kind == "known") {
      spec.e_kind = PropensityModel::Kind::known;
      if (!e.contains("values")) throw DataError("model spec: known propensity requires values");
      const auto vals = e.at("values").get<std::vector<double>>();
      if (static_cast<int>(vals.size()) != d.m)
        throw DataError("model spec: known propensity needs one value per trial");
      spec.e_known.resize(d.m);
      for (int t = 0; t < d.m; ++t) spec.e_known[t] = vals[static_cast<size_t>(t)];
    } else {
      throw DataError("model spec: unknown propensity kind '" + kind + "'");
    }
    if (e.contains("covariates") || e.contains("intercept")) spec.e_basis = detail::parse_basis(e, d);
  }
  if (j.contains("outcome")) {
    const nlohmann::json& o = j.at("outcome");
    const std::string ctrl = o.value("control", "per_trial");
    if (ctrl == "per_trial") {
      spec.outcome.ctrl = ControlKind::per_trial;
    } else if (ctrl == "linear_in_s") {
      spec.outcome.ctrl = ControlKind::linear_in_s;
    } else if (ctrl == "pooled") {
      spec.outcome.ctrl = ControlKind::pooled;
    } else {
      throw DataError("model spec: unknown outcome control kind '" + ctrl + "'");
    }
    spec.outcome.s_by_x = o.value("s_by_x", true);
    if (o.contains("covariates") || o.contains("intercept")) spec.outcome.ctrl_basis = detail::parse_basis(o, d);
    if (o.contains("effect")) spec.outcome.eff_basis = detail::parse_basis(o.at("effect"), d);
    spec.outcome.control_only = o.value("control_only", false);
    if (spec.outcome.control_only && !o.contains("effect")) spec.outcome.eff_basis = Basis{false, {}};
  }
  if (j.contains("variance")) {
    const std::string kind = j.at("variance").value("kind", "empirical");
    if (kind == "empirical") {
      spec.variance = VarianceModel::Kind::empirical;
    } else if (kind == "constant_snr") {
      spec.variance = VarianceModel::Kind::constant_snr;
    } else {
      throw DataError("model spec: unknown variance kind '" + kind + "'");
    }
  }
  if (j.contains("target_mean")) spec.target_basis = detail::parse_basis(j.at("target_mean"), d);
  if (j.contains("weights")) spec.weights = parse_weights(j.at("weights").get<std::string>());
  if (j.contains("drlearner")) spec.dr_basis = detail::parse_basis(j.at("drlearner"), d);
  return spec;
}

inline NuisanceSet fit_estimate_spec(const StudyDataset& d, const EstimateSpec& spec) {
  NuisanceSet nu;
  nu.mode = d.mode;
  nu.m = d.m;
  nu.pi = fit_selection(d, spec.selection_basis);
  nu.eta = fit_affiliation(d, spec.affiliation);
  nu.e = spec.e_kind == PropensityModel::Kind::known ? known_propensity(spec.e_known)
                                                     : fit_propensity(d, spec.e_kind, spec.e_basis);
  nu.outcome = fit_outcome(d, spec.outcome);
  nu.variance = fit_variance(d, nu.outcome, spec.variance);
  if (d.mode == Mode::ratio) nu.target_mean = fit_target_mean(d, spec.target_basis);
  nu.weights = spec.weights;
  return nu;
}

// Simulation grids share the scenario schema: either a named preset or an
// explicit scenario list over the two built-in generative designs.
inline SimulationPlan parse_sim_spec(const nlohmann::json& j, int reps_default, std::uint64_t seed_default,
                                     int threads) {
  if (j.contains("preset"))
    return preset_plan(j.at("preset").get<std::string>(), j.value("reps", reps_default),
                       j.value("seed", seed_default), threads);
  SimulationPlan plan;
  const std::string layout = j.value("layout", "table1");
  if (layout == "table1") {
    plan.layout = TableLayout::table1;
  } else if (layout == "table2") {
    plan.layout = TableLayout::table2;
  } else if (layout == "table3") {
    plan.layout = TableLayout::table3;
  } else {
    throw DataError("simulation spec: unknown layout '" + layout + "'");
  }
  if (j.contains("weight_variants"))
    for (const auto& w : j.at("weight_variants")) plan.weight_variants.push_back(parse_weights(w.get<std::string>()));
  if (!j.contains("scenarios")) throw DataError("simulation spec: scenarios or preset required");
  for (const auto& s : j.at("scenarios")) {
    ScenarioConfig cfg;
    const std::string dgp = s.value("dgp", "difference");
    if (dgp == "difference") {
      cfg.dgp = dgp_difference();
    } else if (dgp == "ratio") {
      cfg.dgp = dgp_ratio();
    } else {
      throw DataError("simulation spec: unknown dgp '" + dgp + "'");
    }
    cfg.label = s.value("label", dgp);
    cfg.n = s.value("n", Eigen::Index{5000});
    cfg.reps = s.value("reps", reps_default);
    cfg.seed = s.value("seed", seed_default);
    cfg.threads = threads;
    cfg.estimator = s.value("estimator", cfg.dgp.mode == Mode::difference ? "eif_ate" : "cmr_onestep");
    if (s.contains("weights")) cfg.weights = parse_weights(s.at("weights").get<std::string>());
    if (s.contains("wrong")) {
      const nlohmann::json& w = s.at("wrong");
      cfg.wrong.outcome = w.value("outcome", false);
      cfg.wrong.e = w.value("e", false);
      cfg.wrong.eta = w.value("eta", false);
      cfg.wrong.pi = w.value("pi", false);
      cfg.wrong.v = w.value("v", false);
      cfg.wrong.target_mean = w.value("target_mean", false);
    }
    validate_config(cfg);
    plan.configs.push_back(std::move(cfg));
  }
  return plan;
}

}  // namespace transport
