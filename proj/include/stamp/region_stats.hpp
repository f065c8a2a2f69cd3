#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "stamp/summary_core.hpp"

namespace stamp {

enum class StatKind { Linear, Quadratic };
enum class Regime { StrongNull, WeakNull, Alternative };

const char* to_string(StatKind kind);
const char* to_string(Regime regime);

// Scalar summaries of the precision matrix A = sigma_star^{-1} that the
// moment formulas need. "ones_k" is 1'A^k 1.
struct Geometry {
  double trace1 = 0, trace2 = 0, trace3 = 0, trace4 = 0;
  double ones1 = 0, ones2 = 0, ones3 = 0, ones4 = 0;
  double diag_sum1 = 0;         // 1'diag(A)1
  double trace2_diag2 = 0;      // tr(A^2 diag(A^2))
  double ones2_diag2 = 0;       // 1'A^2 diag(A^2) 1
};

Geometry compute_geometry(const MatrixXd& precision);

/// True when tr(A^2) and 1'A^2 1 coincide (independent SNPs): the mean effect
/// and the heterogeneity variance then enter the quadratic moments only
/// through E(mu^2).
bool aliased_geometry(const Geometry& g);

struct RegionStatistic {
  std::string study_id;
  StatKind kind = StatKind::Linear;
  double value = 0;  // T^L, or Q / sqrt(p) for the quadratic form
  double raw = 0;    // T^L, or Q
  Eigen::Index p = 0;
  Geometry geometry;
  bool is_control = false;
};

struct SuperPopulationMoments {
  std::optional<double> e_mu;     // E(mu)
  std::optional<double> var_mu;   // E(mu_c^2)
  std::optional<double> skew_mu;  // E(mu_c^3)
  std::optional<double> kurt_mu;  // E(mu_c^4)
  std::optional<double> e_tau;
  std::optional<double> var_tau;

  /// e^psi = Var(mu) + E(tau); unset fields count as zero.
  [[nodiscard]] double e_psi() const;
  /// e^zeta = 3Var(tau) + Var(mu_c^2) + 2E(tau)^2 + 4Var(mu)E(tau).
  [[nodiscard]] double e_zeta() const;
};

/// Fully resolved moments; regime-absent terms are zero.
struct MomentValues {
  double e_mu = 0, var_mu = 0, skew_mu = 0, kurt_mu = 0, e_tau = 0, var_tau = 0;
};

struct StatMoments {
  double mean = 0;
  double variance = 0;
};

RegionStatistic t_linear(const RotatedEffects& effects, std::string study_id = {});
RegionStatistic t_quadratic(const RotatedEffects& effects, std::string study_id = {});

/// Picks the fields a regime uses; throws MissingMoment when one is unset.
MomentValues resolve(const SuperPopulationMoments& moments, Regime regime, StatKind kind);

StatMoments t_linear_moments(const RegionStatistic& stat, const SuperPopulationMoments& moments,
                             Regime regime);

/// Mean and variance of the standardized statistic Q / sqrt(p).
StatMoments t_quadratic_moments(const RegionStatistic& stat, const SuperPopulationMoments& moments,
                                Regime regime);

/// Mean and variance of Q itself.
StatMoments quadratic_raw_moments(const Geometry& g, const MomentValues& m);
StatMoments linear_moments(const Geometry& g, const MomentValues& m);

/// Moments of stat.value for resolved parameters; the hot path of the
/// likelihood.
inline StatMoments component_moments(const RegionStatistic& stat, const MomentValues& m) {
  if (stat.kind == StatKind::Linear) return linear_moments(stat.geometry, m);
  const StatMoments raw = quadratic_raw_moments(stat.geometry, m);
  const double p = static_cast<double>(stat.p);
  return {raw.mean / std::sqrt(p), raw.variance / p};
}

}  // namespace stamp
