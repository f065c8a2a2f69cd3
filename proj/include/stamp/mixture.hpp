#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stamp/region_stats.hpp"

namespace stamp {

enum class NullRegime { Strong, Weak };
enum class Hypothesis { SingleDensity, Mixture };

const char* to_string(NullRegime regime);

struct MixtureSpec {
  StatKind kind = StatKind::Quadratic;
  NullRegime null_regime = NullRegime::Strong;
  // Position of the negative-control study; required under the weak null.
  std::optional<std::size_t> control_index;
};

/// Throws ValidationError if the spec and statistics do not fit together.
void validate(const MixtureSpec& spec, std::span<const RegionStatistic> stats);

// Resolved parameters of the two normal components. Under the weak null the
// null component uses null.e_tau / null.var_tau and the alternative shares
// them.
struct MixtureParams {
  double pi = 0;
  MomentValues alt;
  MomentValues null;
};

struct MixtureFit {
  double pi = 0;
  SuperPopulationMoments moments;       // alternative component
  SuperPopulationMoments null_moments;  // weak-null nuisance; empty under the strong null
  double loglik_mixture = 0;
  double loglik_single = 0;
  bool converged = true;
  int n_restarts_used = 0;
  bool aliased = false;  // E(mu) pinned to 0 on independent-SNP geometry

  MixtureParams params;         // reported (snapped) mixture parameters
  MixtureParams single_params;  // best single-density parameters
  std::vector<double> trace;    // best log-likelihood per optimizer iteration, when requested

  [[nodiscard]] double lrt() const { return 2.0 * (loglik_mixture - loglik_single); }
};

struct FitOptions {
  int restarts = 10;
  std::uint64_t seed = 0;
  // Weak-null nuisance starting values (e.g. from estimate_tau_moments).
  std::optional<double> e_tau_hint;
  std::optional<double> var_tau_hint;
  bool record_trace = false;
};

inline constexpr double kPiClip = 1e-6;
inline constexpr double kPiSnap = 1e-4;
inline constexpr double kVarianceFloor = 1e-12;

/// Log-likelihood of the two-component normal mixture. Under the weak null
/// the control study contributes log phi0 only. Throws NonFiniteLikelihood
/// when a component variance is not positive.
double loglikelihood(std::span<const RegionStatistic> stats, const MixtureSpec& spec,
                     const MixtureParams& params);

MixtureFit fit(std::span<const RegionStatistic> stats, const MixtureSpec& spec, Hypothesis hypothesis,
               const FitOptions& options = {});

/// pi phi1 / {(1 - pi) phi0 + pi phi1} from density values.
double posterior_probability(double pi, double phi0, double phi1);

/// Posterior probability that each study's statistic came from phi1.
std::vector<double> posteriors(std::span<const RegionStatistic> stats, const MixtureFit& fit,
                               const MixtureSpec& spec);

/// Associated iff posterior > threshold.
std::vector<bool> classify(std::span<const double> posteriors, double threshold);

double normal_logpdf(double x, double mean, double variance);

}  // namespace stamp
