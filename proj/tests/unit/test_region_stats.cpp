#include <random>

#include "doctest.h"
#include "oracle.hpp"
#include "stamp/errors.hpp"
#include "stamp/region_stats.hpp"

using namespace stamp;

namespace {

RotatedEffects effects(const VectorXd& beta_star, const MatrixXd& sigma_star) {
  RotatedEffects e;
  e.beta_star = beta_star;
  e.sigma_star = sigma_star;
  e.precision = sigma_star.inverse();
  e.p = beta_star.size();
  return e;
}

SuperPopulationMoments alt(double e_mu, double var_mu, double skew, double kurt, double e_tau, double var_tau) {
  SuperPopulationMoments m;
  m.e_mu = e_mu;
  m.var_mu = var_mu;
  m.skew_mu = skew;
  m.kurt_mu = kurt;
  m.e_tau = e_tau;
  m.var_tau = var_tau;
  return m;
}

}  // namespace

TEST_SUITE("region_stats") {
  TEST_CASE("t_linear examples") {
    CHECK(t_linear(effects(VectorXd::Zero(4), MatrixXd::Identity(4, 4))).value == 0.0);
    CHECK(t_linear(effects(VectorXd::Ones(4), MatrixXd::Identity(4, 4))).value == doctest::Approx(2.0));
    MatrixXd s(1, 1);
    s << 4;
    VectorXd b(1);
    b << 2;
    CHECK(t_linear(effects(b, s)).value == doctest::Approx(1.0));
  }

  TEST_CASE("t_quadratic examples") {
    const RegionStatistic z = t_quadratic(effects(VectorXd::Zero(3), MatrixXd::Identity(3, 3)));
    CHECK(z.raw == 0.0);
    VectorXd b(2);
    b << 1, 2;
    const RegionStatistic q = t_quadratic(effects(b, MatrixXd::Identity(2, 2)));
    CHECK(q.raw == doctest::Approx(5.0));
    CHECK(q.value == doctest::Approx(5.0 / std::sqrt(2.0)));
    b << 2, 0;
    const RegionStatistic q2 = t_quadratic(effects(b, 2.0 * MatrixXd::Identity(2, 2)));
    CHECK(q2.raw == doctest::Approx(1.0));
    CHECK(q2.value == doctest::Approx(1.0 / std::sqrt(2.0)));
  }

  TEST_CASE("geometry matches explicit matrix powers") {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 10; ++rep) {
      const MatrixXd a = oracle::random_spd(6, rng);
      const Geometry g = compute_geometry(a);
      const MatrixXd a2 = oracle::power(a, 2);
      const MatrixXd d2 = a2.diagonal().asDiagonal();
      CHECK(g.trace1 == doctest::Approx(a.trace()));
      CHECK(g.trace2 == doctest::Approx(a2.trace()));
      CHECK(g.trace3 == doctest::Approx(oracle::power(a, 3).trace()));
      CHECK(g.trace4 == doctest::Approx(oracle::power(a, 4).trace()));
      for (int k = 1; k <= 4; ++k) {
        const double want = oracle::power(a, k).sum();
        const double got = k == 1 ? g.ones1 : k == 2 ? g.ones2 : k == 3 ? g.ones3 : g.ones4;
        CHECK(got == doctest::Approx(want));
      }
      CHECK(g.diag_sum1 == doctest::Approx(a.diagonal().sum()));
      CHECK(g.trace2_diag2 == doctest::Approx((a2 * d2).trace()));
      CHECK(g.ones2_diag2 == doctest::Approx((a2 * d2).sum()));
    }
  }

  TEST_CASE("linear moments") {
    const RegionStatistic s = t_linear(effects(VectorXd::Zero(5), MatrixXd::Identity(5, 5)));
    const StatMoments m0 = t_linear_moments(s, {}, Regime::StrongNull);
    CHECK(m0.mean == 0.0);
    CHECK(m0.variance == doctest::Approx(1.0));

    SuperPopulationMoments w;
    w.e_tau = 0.0;
    const StatMoments mw = t_linear_moments(s, w, Regime::WeakNull);
    CHECK(mw.mean == m0.mean);
    CHECK(mw.variance == m0.variance);
    const StatMoments ma = t_linear_moments(s, alt(0, 0, 0, 0, 0, 0), Regime::Alternative);
    CHECK(ma.mean == m0.mean);
    CHECK(ma.variance == m0.variance);

    std::mt19937_64 rng(19);
    const MatrixXd sig = oracle::random_spd(4, rng);
    const RegionStatistic g = t_linear(effects(VectorXd::Zero(4), sig));
    const oracle::Moments want = oracle::linear(sig.inverse(), 0.3, 0.02, 0.05);
    const StatMoments got = t_linear_moments(g, alt(0.3, 0.02, 0, 0, 0.05, 0), Regime::Alternative);
    CHECK(got.mean == doctest::Approx(want.mean));
    CHECK(got.variance == doctest::Approx(want.var));
  }

  TEST_CASE("missing moments are reported") {
    const RegionStatistic s = t_linear(effects(VectorXd::Zero(2), MatrixXd::Identity(2, 2)));
    CHECK_THROWS_AS(t_linear_moments(s, {}, Regime::WeakNull), MissingMoment);
    SuperPopulationMoments m;
    m.e_mu = 1;
    m.e_tau = 0;
    CHECK_THROWS_AS(t_linear_moments(s, m, Regime::Alternative), MissingMoment);
    const RegionStatistic q = t_quadratic(effects(VectorXd::Zero(2), MatrixXd::Identity(2, 2)));
    SuperPopulationMoments w;
    w.e_tau = 0.1;
    CHECK_THROWS_AS(t_quadratic_moments(q, w, Regime::WeakNull), MissingMoment);
    m.var_mu = 0;
    CHECK_NOTHROW(t_linear_moments(s, m, Regime::Alternative));
    CHECK_THROWS_AS(t_quadratic_moments(q, m, Regime::Alternative), MissingMoment);
  }

  TEST_CASE("quadratic moments: identity geometry") {
    const int p = 6;
    const RegionStatistic s = t_quadratic(effects(VectorXd::Zero(p), MatrixXd::Identity(p, p)));
    const StatMoments raw0 = quadratic_raw_moments(s.geometry, {});
    CHECK(raw0.mean == doctest::Approx(p));
    CHECK(raw0.variance == doctest::Approx(2 * p));
    const StatMoments st = t_quadratic_moments(s, {}, Regime::StrongNull);
    CHECK(st.mean == doctest::Approx(p / std::sqrt(p)));
    CHECK(st.variance == doctest::Approx(2.0));

    const double t = 0.3;
    SuperPopulationMoments w;
    w.e_tau = t;
    w.var_tau = 0;
    const StatMoments mw = t_quadratic_moments(s, w, Regime::WeakNull);
    CHECK(mw.mean * std::sqrt(p) == doctest::Approx(p * (1 + t)));
    CHECK(mw.variance * p == doctest::Approx(2 * p * (1 + t) * (1 + t)));

    const StatMoments ma = t_quadratic_moments(s, alt(0, 0, 0, 0, 0, 0), Regime::Alternative);
    CHECK(ma.mean == st.mean);
    CHECK(ma.variance == st.variance);
  }

  TEST_CASE("quadratic moments agree with the explicit-power formula") {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 10; ++rep) {
      const MatrixXd sig = oracle::random_spd(5, rng);
      const RegionStatistic s = t_quadratic(effects(VectorXd::Zero(5), sig));
      const double e_mu = 0.1 * rep, var_mu = 0.04, skew = -0.002 * rep, kurt = 0.005, e_tau = 0.03, var_tau = 0.001;
      const oracle::Moments want = oracle::quadratic(sig.inverse(), e_mu, var_mu, skew, kurt, e_tau, var_tau);
      const StatMoments got = quadratic_raw_moments(s.geometry, {e_mu, var_mu, skew, kurt, e_tau, var_tau});
      CHECK(got.mean == doctest::Approx(want.mean).epsilon(1e-10));
      CHECK(got.variance == doctest::Approx(want.var).epsilon(1e-10));
    }
  }

  TEST_CASE("alternative moments: Monte Carlo under the hierarchical model") {
    // mu_j = E(mu) + (Gamma(k, th) - k th) gives known centered moments;
    // tau_j ~ Gamma(2, t/2) gives E(tau) = t, Var(tau) = t^2/2.
    std::mt19937_64 rng(29);
    const int p = 4;
    const MatrixXd sig = oracle::random_spd(p, rng, 1.0);
    const MatrixXd a = sig.inverse();
    const MatrixXd chol = sig.llt().matrixL();
    const double e_mu = 0.4, k = 2.0, th = 0.2, t = 0.15;
    const double var_mu = k * th * th, skew = 2 * k * th * th * th, kurt = 3 * k * (k + 2) * std::pow(th, 4);
    const double var_tau = t * t / 2;
    std::gamma_distribution<double> gmu(k, th), gtau(2.0, t / 2.0);
    std::normal_distribution<double> n;

    const int draws = 200000;
    std::vector<double> q(draws), l(draws);
    const double dl = a.diagonal().sum();
    for (int r = 0; r < draws; ++r) {
      VectorXd beta = oracle::mvn(chol, rng);
      for (int j = 0; j < p; ++j) beta[j] += e_mu + (gmu(rng) - k * th) + std::sqrt(gtau(rng)) * n(rng);
      const VectorXd u = a * beta;
      q[r] = u.squaredNorm();
      l[r] = u.sum() / std::sqrt(dl);
    }
    const RegionStatistic s = t_quadratic(effects(VectorXd::Zero(p), sig));
    const StatMoments mq = quadratic_raw_moments(s.geometry, {e_mu, var_mu, skew, kurt, t, var_tau});
    const oracle::Summary sq = oracle::summarize(q);
    CHECK(std::abs(sq.mean - mq.mean) < 4 * sq.se);
    CHECK(std::abs(sq.var - mq.variance) < 4 * oracle::variance_se(q));

    const StatMoments ml = linear_moments(s.geometry, {e_mu, var_mu, skew, kurt, t, var_tau});
    const oracle::Summary sl = oracle::summarize(l);
    CHECK(std::abs(sl.mean - ml.mean) < 4 * sl.se);
    CHECK(std::abs(sl.var - ml.variance) < 4 * oracle::variance_se(l));
  }

  TEST_CASE("statistics under SNP permutation") {
    std::mt19937_64 rng(31);
    const MatrixXd sig = oracle::random_spd(5, rng);
    const VectorXd b = VectorXd::LinSpaced(5, -1, 2);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
    perm.indices() << 3, 0, 4, 1, 2;
    const MatrixXd sp = perm * sig * perm.transpose();
    const VectorXd bp = perm * b;
    CHECK(t_linear(effects(bp, sp)).value == doctest::Approx(t_linear(effects(b, sig)).value).epsilon(1e-12));
    CHECK(t_quadratic(effects(bp, sp)).value == doctest::Approx(t_quadratic(effects(b, sig)).value).epsilon(1e-12));
  }

  TEST_CASE("aliased geometry") {
    CHECK(aliased_geometry(compute_geometry(MatrixXd::Identity(4, 4) * 3.0)));
    std::mt19937_64 rng(37);
    CHECK_FALSE(aliased_geometry(compute_geometry(oracle::random_spd(4, rng))));
  }

  TEST_CASE("composite moments") {
    const SuperPopulationMoments m = alt(0.1, 0.2, 0.0, 0.1, 0.3, 0.05);
    CHECK(m.e_psi() == doctest::Approx(0.5));
    CHECK(m.e_zeta() == doctest::Approx(3 * 0.05 + (0.1 - 0.04) + 2 * 0.09 + 4 * 0.2 * 0.3));
  }
}
