#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stamp/inference.hpp"

namespace stamp::sim {

enum class Outcome { Continuous, Binary };
enum class LdProfile { Low, High, Explicit, Panel };
enum class OmegaMode { Internal, External };
enum class SimTest { LinearMix, QuadraticMix, LinearHetmeta, QuadraticHetmeta, Hotelling };

const char* to_string(SimTest test);
const char* to_string(Outcome outcome);

inline constexpr double kHighLdRho = 0.45;
inline constexpr double kLowLdRho = 0.10;
inline constexpr double kBaselineLogit = -4.59511985013459;  // log(0.01 / 0.99)

struct SimulationDesign {
  int n_studies = 20;
  int n_causal_studies = 0;
  int p = 50;
  int p_causal = 5;
  Outcome outcome = Outcome::Continuous;
  int n_samples = 1000;  // continuous outcome
  int n_cases = 1000;
  int n_controls = 1000;
  int cohort_size = 100000;
  double e_mu = 0;
  double e_tau = 0;
  std::optional<double> null_e_tau;  // heterogeneity of non-causal studies under the weak null
  LdProfile ld_profile = LdProfile::High;
  int ld_block_size = 10;
  Eigen::MatrixXd ld_matrix;  // latent correlation for LdProfile::Explicit
  Eigen::MatrixXd panel;      // genotype rows for LdProfile::Panel
  double maf_min = 0.05;
  double maf_max = 0.5;
  OmegaMode omega_mode = OmegaMode::Internal;
  int reference_size = 5000;
  NullRegime null_regime = NullRegime::Strong;
  int replications = 500;
  int bootstrap_replicates = 199;
  int restarts = 10;
  int bootstrap_restarts = 3;
  double alpha = 0.05;
  double threshold = 0.5;
  std::vector<SimTest> tests{SimTest::LinearMix, SimTest::QuadraticMix, SimTest::LinearHetmeta,
                             SimTest::QuadraticHetmeta, SimTest::Hotelling};
  std::uint64_t seed = 0;
  bool seed_set = false;  // seed given explicitly (file or caller)

  [[nodiscard]] double heterogeneity_of_null_studies() const { return null_e_tau.value_or(e_tau); }
};

/// Throws ValidationError when an invariant is broken.
void validate(const SimulationDesign& design);

/// Parses a JSON design; unknown keys and bad values are ValidationErrors.
/// Relative panel paths resolve against base_dir.
SimulationDesign parse_design(const std::string& json_text, const std::string& base_dir = ".");
SimulationDesign load_design(const std::string& path);

/// Genotype panel TSV: N rows of p tab-separated {0,1,2} values, optional
/// header line of SNP ids.
Eigen::MatrixXd read_genotype_panel(const std::string& path);

/// Greedy pruning: keeps a column unless its r^2 with an already kept column
/// exceeds max_r2. Returns kept column indices in order.
std::vector<Eigen::Index> prune_columns(const Eigen::MatrixXd& genotypes, double max_r2);

/// Latent threshold model shared by all studies of a design.
struct GenotypeModel {
  Eigen::MatrixXd latent_chol;  // lower factor of the latent correlation
  Eigen::VectorXd maf;
  Eigen::VectorXd threshold;    // Phi^{-1}(maf)
  Eigen::MatrixXd panel;        // non-empty when resampling a user panel
};

Eigen::MatrixXd latent_correlation(const SimulationDesign& design);
GenotypeModel make_genotype_model(const SimulationDesign& design);

/// n x p genotypes in {0,1,2}: two independent latent haplotypes per row.
Eigen::MatrixXd generate_genotypes(const GenotypeModel& model, int n, std::mt19937_64& rng);

struct Effects {
  Eigen::VectorXd gamma;
  std::vector<int> causal_positions;  // sorted
};

/// Causal studies: p_C random positions with gamma ~ N(mu, tau),
/// mu ~ N(E(mu), (E(mu)/4)^2), tau ~ TN(E(tau), (E(tau)/2)^2) truncated at 0.
/// Non-causal: zero under the strong null, N(0, tau_j) on every SNP under the
/// weak null.
Effects generate_effects(const SimulationDesign& design, bool is_causal, std::mt19937_64& rng);

/// Truncated-at-zero normal by rejection; returns 0 when mean is 0.
double truncated_normal(double mean, double sd, std::mt19937_64& rng);

/// Bernoulli outcome with P(Y=1) = expit(log(0.01/0.99) + x'gamma).
Eigen::VectorXd logistic_outcome(const Eigen::MatrixXd& x, const Eigen::VectorXd& gamma, std::mt19937_64& rng);

Eigen::VectorXd continuous_outcome(const Eigen::MatrixXd& x, const Eigen::VectorXd& gamma, std::mt19937_64& rng);

struct CaseControlSample {
  Eigen::MatrixXd genotypes;
  Eigen::VectorXd outcome;  // 1 = case
  int cohort_size = 0;  // cohort actually needed; 0 when labels were assigned at random
};

/// Logistic cohort with intercept log(0.01/0.99), then the requested numbers
/// of cases and controls. The cohort doubles up to three times before
/// InsufficientCases. gamma == 0 skips the cohort: case status is then
/// independent of genotype.
CaseControlSample case_control_sample(const SimulationDesign& design, const GenotypeModel& model,
                                      const Eigen::VectorXd& gamma, std::mt19937_64& rng);

struct SnpFit {
  double beta = 0;
  double se = 0;
};

SnpFit ols_slope(const Eigen::VectorXd& x, const Eigen::VectorXd& y);
/// Two-parameter logistic IRLS (25 iterations, 1e-8 on coefficients).
/// Throws SeparationError when it does not converge.
SnpFit logistic_slope(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Per-SNP marginal regressions plus the study's LD. Monomorphic SNPs and SNPs
/// where the logistic fit separates are dropped. omega comes from the study's
/// genotypes, or from reference_cov (indexed like the columns of x) when given.
StudyRegionData fit_marginals(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Outcome outcome,
                              std::string study_id, bool is_control = false,
                              const Eigen::MatrixXd* reference_cov = nullptr);

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x);

struct GeneratedStudy {
  StudyRegionData data;
  Effects effects;
  bool causal = false;
};

/// All studies of one replication; study s is causal iff s < S_C, and under the
/// weak null the last study is the negative control.
std::vector<GeneratedStudy> generate_replication(const SimulationDesign& design, const GenotypeModel& model,
                                                 std::size_t replication);

std::string study_name(int index);

struct ReplicationRecord {
  bool ok = false;
  std::string error;
  std::vector<double> p_values;  // aligned with design.tests
  // aligned with design.tests; empty for tests without posteriors
  std::vector<std::vector<double>> posteriors;
  std::vector<double> auc;  // NaN when undefined
  std::vector<bool> causal;
  std::optional<std::size_t> control;
};

ReplicationRecord run_replication(const SimulationDesign& design, const GenotypeModel& model,
                                  std::size_t replication);

struct ResultRow {
  SimTest test{};
  int n_causal_studies = 0;
  NullRegime regime{};
  double rejection_rate = 0;
  double mc_se = 0;
  std::optional<double> mean_posterior_causal;
  std::optional<double> mean_posterior_null;
  std::optional<double> mean_auc;
  int n_used = 0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<ReplicationRecord> replications;
  int n_failed = 0;
};

/// Area under the ROC of scores against labels (ties count one half).
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels);

ExperimentResult run_experiment(const SimulationDesign& design, int jobs = 1,
                                const std::function<void(int, int)>& progress = {});

}  // namespace stamp::sim
