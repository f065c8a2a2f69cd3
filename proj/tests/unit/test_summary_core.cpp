#include <random>

#include "doctest.h"
#include "oracle.hpp"
#include "stamp/errors.hpp"
#include "stamp/summary_core.hpp"

using namespace stamp;
using Eigen::Matrix2d;

namespace {

StudyRegionData two_snp(const VectorXd& beta, const VectorXd& se, const MatrixXd& ld) {
  return make_study("s1", oracle::snp_ids(static_cast<int>(beta.size())), beta, se, ld);
}

}  // namespace

TEST_SUITE("summary_core") {
  TEST_CASE("build_sigma hand products") {
    {
      const StudyRegionData d = two_snp(VectorXd::Zero(2), VectorXd::Ones(2), MatrixXd::Identity(2, 2));
      CHECK(build_sigma(d).isApprox(MatrixXd::Identity(2, 2)));
    }
    {
      Matrix2d ups;
      ups << 1, 0.5, 0.5, 1;
      VectorXd se(2);
      se << 2, 3;
      const MatrixXd s = build_sigma(two_snp(VectorXd::Zero(2), se, ups));
      CHECK(s(0, 0) == doctest::Approx(4));
      CHECK(s(0, 1) == doctest::Approx(3));
      CHECK(s(1, 0) == doctest::Approx(3));
      CHECK(s(1, 1) == doctest::Approx(9));
    }
    {
      VectorXd se(1);
      se << 0.37;
      const MatrixXd s = build_sigma(two_snp(VectorXd::Zero(1), se, MatrixXd::Ones(1, 1)));
      CHECK(s(0, 0) == doctest::Approx(0.37 * 0.37));
    }
  }

  TEST_CASE("build_sigma is exactly symmetric with se^2 diagonal") {
    std::mt19937_64 rng(3);
    const MatrixXd cov = oracle::random_spd(6, rng);
    VectorXd se = VectorXd::LinSpaced(6, 0.01, 0.3);
    const MatrixXd s = build_sigma(two_snp(VectorXd::Zero(6), se, covariance_to_correlation(cov)));
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (int j = 0; j < 6; ++j) CHECK(s(j, j) == doctest::Approx(se[j] * se[j]).epsilon(1e-14));
  }

  TEST_CASE("rotate: identity omega leaves estimates unchanged") {
    VectorXd b(2), se(2);
    b << 0.1, 0.2;
    se << 0.05, 0.07;
    const RotatedEffects r = rotate(two_snp(b, se, MatrixXd::Identity(2, 2)));
    CHECK(r.beta_star.isApprox(b));
    CHECK(r.sigma_star.isApprox(build_sigma(two_snp(b, se, MatrixXd::Identity(2, 2)))));
    CHECK_FALSE(r.ridge_applied);
  }

  TEST_CASE("rotate: 2x2 solve") {
    Matrix2d om;
    om << 1, 0.5, 0.5, 1;
    const RotatedEffects r = rotate(two_snp(VectorXd::Ones(2), VectorXd::Ones(2), om));
    CHECK(r.beta_star[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.beta_star[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }

  TEST_CASE("rotate: rank-deficient omega is SingularOmega") {
    const MatrixXd om = MatrixXd::Ones(2, 2);
    CHECK_THROWS_AS(rotate(two_snp(VectorXd::Ones(2), VectorXd::Ones(2), om)), SingularOmega);
  }

  TEST_CASE("rotate: precision inverts sigma_star") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 10; ++rep) {
      const MatrixXd cov = oracle::random_spd(7, rng);
      const RotatedEffects r =
          rotate(two_snp(VectorXd::Random(7), VectorXd::Constant(7, 0.1), covariance_to_correlation(cov)));
      const MatrixXd prod = r.precision * r.sigma_star;
      CHECK((prod - MatrixXd::Identity(7, 7)).norm() / std::sqrt(7.0) < 1e-8);
    }
  }

  TEST_CASE("rotate: se scaling scales sigma_star by c^2 and keeps beta_star") {
    std::mt19937_64 rng(7);
    const MatrixXd ups = covariance_to_correlation(oracle::random_spd(5, rng));
    const VectorXd b = VectorXd::LinSpaced(5, -0.2, 0.3);
    const VectorXd se = VectorXd::LinSpaced(5, 0.05, 0.09);
    const RotatedEffects r1 = rotate(two_snp(b, se, ups));
    const RotatedEffects r2 = rotate(two_snp(b, 3.0 * se, ups));
    CHECK(r2.beta_star.isApprox(r1.beta_star, 1e-12));
    CHECK(r2.sigma_star.isApprox(9.0 * r1.sigma_star, 1e-12));
  }

  TEST_CASE("marginal_limit_oracle examples") {
    Matrix2d cov;
    cov << 1, 0.5, 0.5, 1;
    CHECK(marginal_limit_oracle(VectorXd::Zero(2), cov).isZero());
    VectorXd g(2);
    g << 1, 0;
    const VectorXd b = marginal_limit_oracle(g, cov);
    CHECK(b[0] == doctest::Approx(1));
    CHECK(b[1] == doctest::Approx(0.5));
    VectorXd g3(3);
    g3 << 0.3, -0.1, 0.2;
    const MatrixXd diag = VectorXd::LinSpaced(3, 0.2, 0.5).asDiagonal();
    CHECK(marginal_limit_oracle(g3, diag).isApprox(g3));
    Matrix2d bad;
    bad << 0, 0, 0, 1;
    CHECK_THROWS_AS(marginal_limit_oracle(g, bad), ValidationError);
  }

  TEST_CASE("rotation recovers joint effects from their marginal limit") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
      const int p = 2 + rep % 6;
      MatrixXd cov = oracle::random_spd(p, rng);
      // unequal variances so omega is not symmetric
      const VectorXd sd = VectorXd::LinSpaced(p, 0.4, 1.3);
      cov = sd.asDiagonal() * cov * sd.asDiagonal();
      const VectorXd gamma = VectorXd::LinSpaced(p, -0.5, 0.7);
      const VectorXd beta = marginal_limit_oracle(gamma, cov);
      const StudyRegionData d = make_study("s", oracle::snp_ids(p), beta, VectorXd::Constant(p, 0.1), cov);
      CHECK((rotate(d).beta_star - gamma).cwiseAbs().maxCoeff() < 1e-10);
      // omega = V^{-1} Cov
      const MatrixXd omega = cov.diagonal().cwiseInverse().asDiagonal() * cov;
      CHECK(d.omega.isApprox(omega, 1e-12));
    }
  }

  TEST_CASE("ill-conditioned omega is ridged, hopeless omega rejected") {
    Matrix2d om;
    const double r = 1.0 - 1e-7;  // condition number ~ 2e7
    om << 1, r, r, 1;
    const RotatedEffects e = rotate(two_snp(VectorXd::Ones(2), VectorXd::Ones(2), om));
    CHECK(e.ridge_applied);
    CHECK(e.beta_star.allFinite());
    const double r2 = 1.0 - 1e-10;
    om << 1, r2, r2, 1;
    CHECK_THROWS_AS(rotate(two_snp(VectorXd::Ones(2), VectorXd::Ones(2), om)), SingularOmega);
  }

  TEST_CASE("validation and missing values") {
    VectorXd b(3), se(3);
    b << 0.1, std::nan(""), 0.3;
    se << 0.1, 0.1, 0.1;
    const StudyRegionData d = two_snp(b, se, MatrixXd::Identity(3, 3));
    const StudyRegionData c = drop_nonfinite(d);
    CHECK(c.p() == 2);
    CHECK(c.snp_ids[1] == "rs3");
    CHECK(c.upsilon.rows() == 2);

    se[0] = 0;
    b[1] = 0.2;
    CHECK_THROWS_AS(validate(two_snp(b, se, MatrixXd::Identity(3, 3))), ValidationError);
    CHECK_THROWS_AS(two_snp(b, VectorXd::Ones(3), MatrixXd::Identity(2, 2)), ValidationError);
  }

  TEST_CASE("covariance input yields correlation, variances and omega") {
    Matrix2d cov;
    cov << 4, 1, 1, 1;
    const StudyRegionData d = two_snp(VectorXd::Zero(2), VectorXd::Ones(2), cov);
    CHECK(d.upsilon(0, 1) == doctest::Approx(0.5));
    CHECK(d.snp_var[0] == doctest::Approx(4));
    CHECK(d.omega(0, 1) == doctest::Approx(0.25));  // Cov/Var(X_0)
    CHECK(d.omega(1, 0) == doctest::Approx(1.0));
    CHECK(d.omega.diagonal().isOnes(1e-14));
  }
}
