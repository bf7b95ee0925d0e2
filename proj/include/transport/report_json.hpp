#pragma once

#include <json.hpp>

#include "transport/ate.hpp"
#include "transport/cmr.hpp"

namespace transport {

inline nlohmann::json to_json(const Diagnostics& diag) {
  nlohmann::json j;
  j["ee_residual"] = diag.ee_residual;
  j["w_min"] = diag.w_min;
  j["w_max"] = diag.w_max;
  j["w_mean"] = diag.w_mean;
  j["clipped_pi"] = diag.clipped_pi;
  j["zero_support_rows"] = diag.zero_support_rows;
  j["weight_capped"] = diag.weight_capped;
  j["notes"] = diag.notes;
  return j;
}

inline nlohmann::json to_json(const EstimateReport& rep) {
  nlohmann::json j;
  j["estimand"] = "difference";
  j["psi_hat"] = rep.psi_hat;
  j["level"] = rep.level;
  j["se_available"] = rep.se_available;
  if (rep.se_available) {
    j["se"] = rep.se;
    j["ci_lo"] = rep.ci_lo;
    j["ci_hi"] = rep.ci_hi;
  }
  j["diagnostics"] = to_json(rep.diag);
  j["influence"] = std::vector<double>(rep.if_values.begin(), rep.if_values.end());
  return j;
}

inline nlohmann::json to_json(const RatioEstimate& rep) {
  nlohmann::json j;
  j["estimand"] = "ratio";
  j["psi_hat"] = rep.psi_hat;
  j["psi1"] = rep.psi1;
  j["psi0"] = rep.psi0;
  j["level"] = rep.level;
  j["se_available"] = rep.se_available;
  if (rep.se_available) {
    j["se"] = rep.se;
    j["log_se"] = rep.se_log;
    j["ci_lo"] = rep.ci_lo;
    j["ci_hi"] = rep.ci_hi;
    j["log_psi_hat"] = std::log(rep.psi_hat);
  }
  j["diagnostics"] = to_json(rep.diag);
  j["influence"] = std::vector<double>(rep.if_values.begin(), rep.if_values.end());
  j["influence_psi1"] = std::vector<double>(rep.if1.begin(), rep.if1.end());
  j["influence_psi0"] = std::vector<double>(rep.if0.begin(), rep.if0.end());
  return j;
}

inline nlohmann::json to_json(const ParametricCate& cate) {
  nlohmann::json j;
  j["model"] = "cate";
  j["beta"] = std::vector<double>(cate.beta.begin(), cate.beta.end());
  std::vector<std::vector<double>> vc(static_cast<size_t>(cate.vcov.rows()));
  for (Eigen::Index i = 0; i < cate.vcov.rows(); ++i)
    vc[static_cast<size_t>(i)] = std::vector<double>(cate.vcov.row(i).begin(), cate.vcov.row(i).end());
  j["vcov"] = vc;
  return j;
}

inline nlohmann::json to_json(const DrLearnerFit& fit) {
  nlohmann::json j;
  j["model"] = "drlearner";
  j["coef"] = std::vector<double>(fit.coef.begin(), fit.coef.end());
  return j;
}

}  // namespace transport
