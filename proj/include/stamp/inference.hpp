#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stamp/mixture.hpp"

namespace stamp {

// ---------------------------------------------------------------------------
// Heterogeneity moments of the marginal estimates
// ---------------------------------------------------------------------------

struct TauMoments {
  double e_tau = 0;   // E(tau)
  double e_tau2 = 0;  // E(tau^2)
  double v_tau = 0;   // max{0, E(tau^2) - E(tau)^2}
};

/// Nonnegative solutions of the two unbiased estimating equations over all
/// SNPs of all studies.
TauMoments estimate_tau_moments(std::span<const StudyRegionData> studies);

struct InverseGamma {
  double shape = 0;
  double scale = 0;
};

/// Inverse gamma with the given mean and variance; nullopt when the variance
/// is not positive (moment matching is infeasible).
std::optional<InverseGamma> inverse_gamma_from_moments(double mean, double variance);

// ---------------------------------------------------------------------------
// Parametric bootstrap of the likelihood-ratio statistic
// ---------------------------------------------------------------------------

struct StudyEffects {
  std::string study_id;
  bool is_control = false;
  RotatedEffects effects;
};

enum class GeneratorKind { Strong, WeakLinear, WeakQuadratic };

struct NullGenerator {
  GeneratorKind kind = GeneratorKind::Strong;
  double e_tau = 0;   // WeakLinear, WeakQuadratic
  double e_tau2 = 0;  // WeakQuadratic
};

struct BootstrapConfig {
  int replicates = 199;
  std::uint64_t seed = 0;
  int jobs = 1;
  int restarts = 3;
  // Called with (completed, total) roughly every 10% of the replicates.
  std::function<void(int, int)> progress;
};

struct BootstrapResult {
  double p_value = 1;           // (1/R) sum I{LRT_obs <= LRT(r)}
  double p_value_adjusted = 1;  // (1 + sum I) / (1 + R)
  std::vector<double> replicate_lrts;
  int n_nonconverged = 0;
  int n_redrawn = 0;
  int n_failed = 0;  // replicates counted as LRT(r) = +inf
  bool degenerate_heterogeneity = false;
};

/// Holds the per-study quantities every replicate reuses.
class BootstrapContext {
 public:
  BootstrapContext(std::vector<StudyEffects> studies, MixtureSpec spec);

  [[nodiscard]] const MixtureSpec& spec() const { return spec_; }
  [[nodiscard]] std::size_t size() const { return studies_.size(); }
  [[nodiscard]] const std::vector<RegionStatistic>& observed() const { return observed_; }

  /// Statistics of one bootstrap replicate. Study s draws from the stream
  /// keyed by (seed, replicate, attempt, hash(study_id)).
  [[nodiscard]] std::vector<RegionStatistic> draw(const NullGenerator& gen, std::uint64_t seed,
                                                  std::size_t replicate, int attempt = 0) const;

 private:
  std::vector<StudyEffects> studies_;
  MixtureSpec spec_;
  std::vector<RegionStatistic> observed_;
  std::vector<MatrixXd> chol_;  // lower Cholesky factors of sigma_star
};

double bootstrap_pvalue(double lrt_observed, std::span<const double> replicate_lrts);
double bootstrap_pvalue_adjusted(double lrt_observed, std::span<const double> replicate_lrts);

BootstrapResult run_bootstrap(const BootstrapContext& ctx, const NullGenerator& gen, double lrt_observed,
                              const BootstrapConfig& config);

BootstrapResult bootstrap_strong(const BootstrapContext& ctx, double lrt_observed, const BootstrapConfig& config);
BootstrapResult bootstrap_weak_linear(const BootstrapContext& ctx, double e_tau, double lrt_observed,
                                      const BootstrapConfig& config);
BootstrapResult bootstrap_weak_quadratic(const BootstrapContext& ctx, const TauMoments& tau, double lrt_observed,
                                         const BootstrapConfig& config);

// ---------------------------------------------------------------------------
// Comparison statistics
// ---------------------------------------------------------------------------

struct TestResult {
  double statistic = 0;
  double p_value = 1;
};

/// Inverse-variance weighted sum of T^L with strong-null variances; two-sided
/// normal p-value.
TestResult het_meta_linear(std::span<const RegionStatistic> linear_stats);

/// Sum of the raw quadratic forms; upper-tail normal p-value with strong-null
/// mean sum tr(A) and variance sum 2 tr(A^2).
TestResult het_meta_quadratic(std::span<const RegionStatistic> quadratic_stats);

/// Sum of per-study Hotelling forms beta*' A beta*; chi-squared with sum p_s df.
TestResult hotelling_meta(std::span<const RotatedEffects> effects);

/// Per-study reporting p-value under the strong null: two-sided normal for
/// T^L, upper-tail normal for the standardized quadratic form.
double single_study_pvalue(const RegionStatistic& stat);

// ---------------------------------------------------------------------------
// End-to-end test
// ---------------------------------------------------------------------------

struct StampOptions {
  StatKind kind = StatKind::Quadratic;
  NullRegime null_regime = NullRegime::Strong;
  double threshold = 0.5;
  int restarts = 10;
  BootstrapConfig bootstrap;
};

struct StampResult {
  std::vector<std::string> study_ids;
  std::vector<Eigen::Index> n_snps;
  std::vector<RegionStatistic> stats;
  double lrt_observed = 0;
  double p_value = 1;
  double p_value_adjusted = 1;
  std::vector<double> posteriors;
  std::vector<bool> associated;
  MixtureFit fit;
  std::optional<TauMoments> tau_hat;
  std::vector<double> single_study_p;
  BootstrapResult bootstrap;
};

std::vector<StudyEffects> rotate_all(std::span<const StudyRegionData> studies);

/// Index of the negative-control study; throws ValidationError unless exactly
/// one study is flagged.
std::size_t find_control(std::span<const StudyRegionData> studies);

StampResult run_stamp(std::span<const StudyRegionData> studies, const StampOptions& options);
StampResult run_stamp(std::span<const StudyRegionData> studies, std::span<const StudyEffects> rotated,
                      const StampOptions& options);

}  // namespace stamp
