#pragma once

#include <string>
#include <vector>

#include "transport/common.hpp"
#include "transport/data.hpp"

namespace transport {

// Row-by-trial eligibility under an affiliation-probability floor.
// eligible(i,t-1) == row i carries weight for trial t. Diagnostics only; never throws.
struct SupportMap {
  double tau = kSupportTau;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> eligible;
  std::vector<Eigen::Index> empty_rows;
  std::vector<Eigen::Index> own_trial_ineligible;

  bool ok(Eigen::Index i, int trial) const { return eligible(i, trial - 1); }
  Eigen::Index n_empty() const { return static_cast<Eigen::Index>(empty_rows.size()); }
};

// eta: n x m matrix, eta(i, t-1) = estimated affiliation probability of trial t at x_i.
inline SupportMap build_support_map(const StudyDataset& d, const Matrix& eta, double tau = kSupportTau) {
  if (eta.rows() != d.n() || eta.cols() != d.m)
    throw DataError("build_support_map: eta must be n x m");
  SupportMap sm;
  sm.tau = tau;
  sm.eligible.resize(d.n(), d.m);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    bool any = false;
    for (int t = 1; t <= d.m; ++t) {
      const bool ok = eta(i, t - 1) > tau;
      sm.eligible(i, t - 1) = ok;
      any = any || ok;
    }
    if (!any) sm.empty_rows.push_back(i);
    if (d.g[i] == 0 && !sm.eligible(i, d.s[i] - 1)) sm.own_trial_ineligible.push_back(i);
  }
  return sm;
}

}  // namespace transport
