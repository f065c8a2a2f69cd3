#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stamp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One phenotype/study's marginal estimates for a region together with the
// SNP dependence structure they were computed under.
//
// omega is Cov(X_i,X_j)/Var(X_i). It is kept in the factored form
// omega = V^{-1/2} upsilon V^{1/2} with V = diag(snp_var), which is how the
// rotation inverts it without a general LU. When only a correlation matrix is
// known snp_var is all ones and omega == upsilon.
struct StudyRegionData {
  std::string study_id;
  std::vector<std::string> snp_ids;
  VectorXd beta_hat;
  VectorXd se;
  MatrixXd upsilon;
  MatrixXd omega;
  VectorXd snp_var;
  bool is_control = false;

  [[nodiscard]] Eigen::Index p() const { return beta_hat.size(); }
};

struct RotatedEffects {
  VectorXd beta_star;
  MatrixXd sigma_star;
  MatrixXd precision;
  Eigen::Index p = 0;
  bool ridge_applied = false;
};

/// Builds a study from an LD matrix that is either a SNP correlation matrix
/// (unit diagonal) or a genotype covariance matrix. In the covariance case the
/// correlation, the SNP variances and omega are all derived from it.
StudyRegionData make_study(std::string study_id, std::vector<std::string> snp_ids,
                           VectorXd beta_hat, VectorXd se, const MatrixXd& ld,
                           bool is_control = false);

/// Throws ValidationError when a type invariant is broken.
void validate(const StudyRegionData& data);

/// Restricts a study to the given SNP positions (in that order).
StudyRegionData subset(const StudyRegionData& data, const std::vector<Eigen::Index>& keep);

/// Drops SNPs whose beta or se is not finite, logging one warning per SNP.
StudyRegionData drop_nonfinite(const StudyRegionData& data);

MatrixXd build_sigma(const StudyRegionData& data);

// Conditioning thresholds for omega, expressed on its spectrum.
inline constexpr double kRidgeConditionThreshold = 1e6;
inline constexpr double kSingularConditionThreshold = 1e8;
inline constexpr double kRidgeScale = 1e-6;

RotatedEffects rotate(const StudyRegionData& data);

/// Expected marginal effects under joint effects gamma:
/// beta_j = sum_i gamma_i Cov(X_i,X_j) / Var(X_j).
VectorXd marginal_limit_oracle(const VectorXd& gamma, const MatrixXd& genotype_cov);

/// Correlation matrix of a covariance matrix (exactly symmetric, unit diagonal).
MatrixXd covariance_to_correlation(const MatrixXd& cov);

}  // namespace stamp
