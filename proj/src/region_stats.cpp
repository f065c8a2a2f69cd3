#include "stamp/region_stats.hpp"

#include "stamp/errors.hpp"

namespace stamp {

const char* to_string(StatKind kind) { return kind == StatKind::Linear ? "linear" : "quadratic"; }

const char* to_string(Regime regime) {
  switch (regime) {
    case Regime::StrongNull: return "strong";
    case Regime::WeakNull: return "weak";
    case Regime::Alternative: return "alternative";
  }
  return "?";
}

Geometry compute_geometry(const MatrixXd& a) {
  const Eigen::Index p = a.rows();
  const MatrixXd a2 = a * a;
  const VectorXd ones = VectorXd::Ones(p);
  const VectorXd a1v = a * ones;
  const VectorXd a2v = a2 * ones;

  Geometry g;
  g.trace1 = a.trace();
  g.trace2 = a2.trace();
  // tr(A^3) = sum_ij (A^2)_ij A_ji, tr(A^4) = ||A^2||_F^2 (A symmetric)
  g.trace3 = a2.cwiseProduct(a).sum();
  g.trace4 = a2.squaredNorm();
  g.ones1 = a1v.sum();
  g.ones2 = a1v.squaredNorm();
  g.ones3 = a1v.dot(a2v);
  g.ones4 = a2v.squaredNorm();
  g.diag_sum1 = a.diagonal().sum();
  const VectorXd d2 = a2.diagonal();
  g.trace2_diag2 = d2.squaredNorm();
  g.ones2_diag2 = a2v.dot(d2);
  return g;
}

bool aliased_geometry(const Geometry& g) {
  return std::abs(g.trace2 - g.ones2) < 1e-6 * g.trace2;
}

double SuperPopulationMoments::e_psi() const { return var_mu.value_or(0) + e_tau.value_or(0); }

double SuperPopulationMoments::e_zeta() const {
  const double m2 = var_mu.value_or(0);
  const double m4 = kurt_mu.value_or(0);
  const double t = e_tau.value_or(0);
  return 3.0 * var_tau.value_or(0) + (m4 - m2 * m2) + 2.0 * t * t + 4.0 * m2 * t;
}

namespace {

RegionStatistic base_stat(const RotatedEffects& e, std::string id, StatKind kind) {
  RegionStatistic s;
  s.study_id = std::move(id);
  s.kind = kind;
  s.p = e.p;
  s.geometry = compute_geometry(e.precision);
  return s;
}

double need(const std::optional<double>& v, const char* name, Regime regime) {
  if (!v) {
    throw MissingMoment(std::string("moment '") + name + "' is required under the " + to_string(regime) +
                        " regime");
  }
  return *v;
}

}  // namespace

RegionStatistic t_linear(const RotatedEffects& e, std::string id) {
  RegionStatistic s = base_stat(e, std::move(id), StatKind::Linear);
  const double num = (e.precision * e.beta_star).sum();
  s.value = num / std::sqrt(s.geometry.diag_sum1);
  s.raw = s.value;
  return s;
}

RegionStatistic t_quadratic(const RotatedEffects& e, std::string id) {
  RegionStatistic s = base_stat(e, std::move(id), StatKind::Quadratic);
  const VectorXd u = e.precision * e.beta_star;
  s.raw = u.squaredNorm();
  s.value = s.raw / std::sqrt(static_cast<double>(e.p));
  return s;
}

MomentValues resolve(const SuperPopulationMoments& m, Regime regime, StatKind kind) {
  MomentValues v;
  switch (regime) {
    case Regime::StrongNull:
      break;
    case Regime::WeakNull:
      v.e_tau = need(m.e_tau, "e_tau", regime);
      if (kind == StatKind::Quadratic) v.var_tau = need(m.var_tau, "var_tau", regime);
      break;
    case Regime::Alternative:
      v.e_mu = need(m.e_mu, "e_mu", regime);
      v.var_mu = need(m.var_mu, "var_mu", regime);
      v.e_tau = need(m.e_tau, "e_tau", regime);
      if (kind == StatKind::Quadratic) {
        v.skew_mu = need(m.skew_mu, "skew_mu", regime);
        v.kurt_mu = need(m.kurt_mu, "kurt_mu", regime);
        v.var_tau = need(m.var_tau, "var_tau", regime);
      }
      break;
  }
  return v;
}

StatMoments linear_moments(const Geometry& g, const MomentValues& m) {
  // The variance is that of 1'A beta* divided by the square of the
  // normalizing constant {1'diag(A)1}^{1/2}.
  return {m.e_mu * g.ones1 / std::sqrt(g.diag_sum1),
          (g.ones1 + (m.e_tau + m.var_mu) * g.ones2) / g.diag_sum1};
}

StatMoments quadratic_raw_moments(const Geometry& g, const MomentValues& m) {
  const double psi = m.var_mu + m.e_tau;
  const double mu2 = m.e_mu * m.e_mu;
  // e^zeta - 2 e^{2 psi} simplifies to this; it is the coefficient of
  // tr{A^2 diag(A^2)}.
  const double fourth = 3.0 * m.var_tau + m.kurt_mu - 3.0 * m.var_mu * m.var_mu;

  const double mean = g.trace1 + psi * g.trace2 + mu2 * g.ones2;
  const double var = 2.0 * g.trace2 + 4.0 * g.trace3 * psi + 4.0 * g.ones4 * mu2 * psi +
                     2.0 * g.trace4 * psi * psi + 4.0 * m.skew_mu * m.e_mu * g.ones2_diag2 +
                     g.trace2_diag2 * fourth + 4.0 * g.ones3 * mu2;
  return {mean, var};
}

StatMoments t_linear_moments(const RegionStatistic& stat, const SuperPopulationMoments& moments,
                             Regime regime) {
  return linear_moments(stat.geometry, resolve(moments, regime, StatKind::Linear));
}

StatMoments t_quadratic_moments(const RegionStatistic& stat, const SuperPopulationMoments& moments,
                                Regime regime) {
  const StatMoments raw = quadratic_raw_moments(stat.geometry, resolve(moments, regime, StatKind::Quadratic));
  const double p = static_cast<double>(stat.p);
  return {raw.mean / std::sqrt(p), raw.variance / p};
}

}  // namespace stamp
