#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "toy_population.hpp"
#include "transport/transport.hpp"

using transport::Basis;
using transport::Matrix;
using transport::Mode;
using transport::StudyDataset;
using transport::Vector;

TEST_CASE("plug-in, weighting, and augmented estimators agree on the exact population") {
  auto pop = toy::toy_ate();
  const auto& d = pop.data;

  auto gf = transport::gformula_ate(d, pop.nu.outcome);
  REQUIRE(gf.psi_hat == Catch::Approx(pop.psi).margin(1e-10));
  REQUIRE_FALSE(gf.se_available);

  auto ipw = transport::ipw_ate(d, pop.nu.pi, pop.nu.eta, pop.nu.e);
  REQUIRE(ipw.psi_hat == Catch::Approx(pop.psi).margin(1e-10));
  REQUIRE(ipw.se_available);

  auto ipwh = transport::ipw_ate(d, pop.nu.pi, pop.nu.eta, pop.nu.e, transport::make_normalized_h(pop.nu));
  REQUIRE(ipwh.psi_hat == Catch::Approx(pop.psi).margin(1e-10));

  auto eif = transport::eif_ate(d, pop.nu);
  REQUIRE(eif.psi_hat == Catch::Approx(pop.psi).margin(1e-10));
  REQUIRE(eif.se_available);
  REQUIRE(eif.se > 0.0);
  REQUIRE(eif.ci_lo < pop.psi);
  REQUIRE(eif.ci_hi > pop.psi);
  REQUIRE(eif.diag.ee_residual <= 1e-10);
  REQUIRE(eif.diag.zero_support_rows == 0);
  REQUIRE(eif.if_values.size() == d.n());
  // The reported interval is the influence-function Wald interval.
  REQUIRE(eif.ci_hi - eif.psi_hat == Catch::Approx(1.96 * eif.se).margin(1e-12));
}

TEST_CASE("every weight choice is exact when all nuisances are true") {
  auto pop = toy::toy_ate();
  for (const char* w : {"optimal", "constant", "custom:1,10", "custom:10,1"}) {
    auto est = transport::eif_ate(pop.data, pop.nu, transport::parse_weights(w));
    REQUIRE(est.psi_hat == Catch::Approx(pop.psi).margin(1e-10));
  }
}

TEST_CASE("mode guards") {
  auto cpop = toy::toy_cmr();
  auto apop = toy::toy_ate();
  REQUIRE_THROWS_AS(transport::gformula_ate(cpop.data, apop.nu.outcome), transport::DataError);
  REQUIRE_THROWS_AS(transport::ipw_ate(cpop.data, apop.nu.pi, apop.nu.eta, apop.nu.e), transport::DataError);
  REQUIRE_THROWS_AS(transport::eif_ate(cpop.data, apop.nu), transport::DataError);
}

TEST_CASE("pseudo-outcome regression recovers the exact effect surface") {
  auto pop = toy::toy_ate();
  auto po = transport::drlearner_pseudo(pop.data, pop.nu);
  REQUIRE(po.zeta.size() == pop.data.n_source());

  auto fit = transport::drlearner_fit(po, pop.data, Basis::with({0}));
  REQUIRE(fit.coef[0] == Catch::Approx(1.0).margin(1e-8));
  REQUIRE(fit.coef[1] == Catch::Approx(1.0).margin(1e-8));
  Vector x(2);
  x << 1.0, 0.5;
  REQUIRE(fit.D(x) == Catch::Approx(2.0).margin(1e-8));
}

TEST_CASE("efficient-score solve recovers the effect coefficients") {
  auto pop = toy::toy_ate();
  const auto& d = pop.data;
  auto sn = transport::make_score_nuisances(pop.nu.outcome, pop.nu.variance, pop.nu.e);
  Basis eff = Basis::with({0});

  Vector beta0(2);
  beta0 << 0.5, 0.5;
  auto cate = transport::solve_beta_D(d, sn, eff, beta0);
  REQUIRE(cate.beta[0] == Catch::Approx(1.0).margin(1e-8));
  REQUIRE(cate.beta[1] == Catch::Approx(1.0).margin(1e-8));

  // Mean score vanishes at the solution.
  Matrix S = transport::efficient_score_D(d, sn, eff, cate.beta);
  Vector sbar = S.colwise().mean();
  REQUIRE(sbar.cwiseAbs().maxCoeff() <= 1e-8);

  // The score is linear in beta, so the analytic slope matrix equals the
  // finite-difference Jacobian of the mean score essentially exactly.
  Matrix M = transport::score_jacobian_D(d, sn, eff);
  auto mean_score = [&](const Vector& b) -> Vector {
    return transport::efficient_score_D(d, sn, eff, b).colwise().mean().transpose();
  };
  Matrix Mfd = transport::finite_diff_jacobian(mean_score, cate.beta);
  REQUIRE((M - Mfd).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, M.cwiseAbs().maxCoeff()));

  // Sandwich covariance is symmetric positive definite.
  REQUIRE((cate.vcov - cate.vcov.transpose()).cwiseAbs().maxCoeff() <= 1e-14);
  REQUIRE_NOTHROW(transport::cholesky_spd(cate.vcov));

  auto rep = transport::psi_sp_D(d, cate, sn);
  REQUIRE(rep.psi_hat == Catch::Approx(pop.psi).margin(1e-8));
  REQUIRE(rep.se > 0.0);
}

TEST_CASE("pooled-assumption estimators are exact on the balanced population") {
  StudyDataset d;
  auto vn = toy::toy_ate_pooled(d);
  auto pooled = transport::eif_ate_variant(d, vn, transport::PooledVariant::pooled);
  REQUIRE(pooled.psi_hat == Catch::Approx(toy::kPsiAte).margin(1e-10));
  auto armwise = transport::eif_ate_variant(d, vn, transport::PooledVariant::armwise);
  REQUIRE(armwise.psi_hat == Catch::Approx(toy::kPsiAte).margin(1e-10));
  REQUIRE(pooled.se_available);
  REQUIRE(armwise.se_available);
}

TEST_CASE("optimal weights cannot be beaten on the population variance bound") {
  auto pop = toy::toy_ate();
  Matrix xgrid(4, 2);
  xgrid << 0, 0, 1, 0, 0, 1, 1, 1;
  const double alpha = 109.0 / 240.0;
  const double gap = transport::efficiency_gap(pop.nu, xgrid, alpha);
  REQUIRE(gap < 0.0);

  // Hand value at x = (0,0): trial weights (1, 3/4), memberships (1/2, 1/2);
  // the harmonic-vs-arithmetic defect there is 1/0.875 - (1/2 + 2/3).
  transport::NuisanceSet opt = pop.nu;
  opt.weights = transport::parse_weights("optimal");
  Matrix one(1, 2);
  one << 0, 0;
  const double pi00 = 1.0 / 4.0;
  const double expected =
      pi00 * pi00 / (alpha * alpha * (1.0 - pi00)) * (1.0 / 0.875 - (0.5 / 1.0 + (2.0 / 3.0)));
  const double g1 = transport::efficiency_gap(opt, one, alpha);
  REQUIRE(g1 == Catch::Approx(expected).margin(1e-9));
}
