#include "stamp/summary_core.hpp"

#include <cmath>
#include <sstream>

#include "stamp/errors.hpp"
#include "stamp/log.hpp"

namespace stamp {

namespace {

void symmetrize(MatrixXd& m) {
  const MatrixXd t = m.transpose();
  m = 0.5 * (m + t);
}

MatrixXd omega_from(const MatrixXd& upsilon, const VectorXd& snp_var) {
  const VectorXd sd = snp_var.cwiseSqrt();
  // V^{-1/2} Y V^{1/2}
  return sd.cwiseInverse().asDiagonal() * upsilon * sd.asDiagonal();
}

bool has_unit_diagonal(const MatrixXd& m, double tol = 1e-10) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (std::abs(m(i, i) - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace

MatrixXd covariance_to_correlation(const MatrixXd& cov) {
  const VectorXd inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
  MatrixXd cor = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
  symmetrize(cor);
  cor.diagonal().setOnes();
  return cor;
}

StudyRegionData make_study(std::string study_id, std::vector<std::string> snp_ids,
                           VectorXd beta_hat, VectorXd se, const MatrixXd& ld,
                           bool is_control) {
  if (ld.rows() != ld.cols() || ld.rows() != beta_hat.size()) {
    throw ValidationError("study '" + study_id + "': LD matrix is " + std::to_string(ld.rows()) +
                          "x" + std::to_string(ld.cols()) + " but there are " +
                          std::to_string(beta_hat.size()) + " SNPs");
  }
  StudyRegionData d;
  d.study_id = std::move(study_id);
  d.snp_ids = std::move(snp_ids);
  d.beta_hat = std::move(beta_hat);
  d.se = std::move(se);
  d.is_control = is_control;
  if (has_unit_diagonal(ld)) {
    d.upsilon = ld;
    symmetrize(d.upsilon);
    d.snp_var = VectorXd::Ones(ld.rows());
  } else {
    if ((ld.diagonal().array() <= 0.0).any()) {
      throw ValidationError("study '" + d.study_id + "': genotype covariance has a non-positive variance");
    }
    d.upsilon = covariance_to_correlation(ld);
    d.snp_var = ld.diagonal();
  }
  d.omega = omega_from(d.upsilon, d.snp_var);
  return d;
}

void validate(const StudyRegionData& d) {
  const auto fail = [&](const std::string& what) {
    throw ValidationError("study '" + d.study_id + "': " + what);
  };
  const Eigen::Index p = d.beta_hat.size();
  if (p < 1) fail("no SNPs");
  if (d.se.size() != p || static_cast<Eigen::Index>(d.snp_ids.size()) != p) {
    fail("beta, se and snp_id lengths differ");
  }
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!std::isfinite(d.se[j]) || d.se[j] <= 0.0) fail("se of SNP '" + d.snp_ids[j] + "' is not positive and finite");
    if (!std::isfinite(d.beta_hat[j])) fail("beta of SNP '" + d.snp_ids[j] + "' is not finite");
  }
  if (d.upsilon.rows() != p || d.upsilon.cols() != p) fail("correlation matrix has wrong dimension");
  if (d.omega.rows() != p || d.omega.cols() != p) fail("omega has wrong dimension");
  if (d.snp_var.size() != p || (d.snp_var.array() <= 0.0).any()) fail("SNP variances must be positive");
  if (!d.upsilon.allFinite() || !d.omega.allFinite()) fail("LD matrix has non-finite entries");
  for (Eigen::Index i = 0; i < p; ++i) {
    if (std::abs(d.upsilon(i, i) - 1.0) > 1e-10) fail("correlation matrix must have unit diagonal");
    if (std::abs(d.omega(i, i) - 1.0) > 1e-10) fail("omega must have unit diagonal");
    for (Eigen::Index j = 0; j < i; ++j) {
      const double a = d.upsilon(i, j);
      if (std::abs(a - d.upsilon(j, i)) > 1e-10) fail("correlation matrix is not symmetric");
      if (a < -1.0 - 1e-12 || a > 1.0 + 1e-12) fail("correlation entries must lie in [-1, 1]");
    }
  }
}

StudyRegionData subset(const StudyRegionData& d, const std::vector<Eigen::Index>& keep) {
  const auto n = static_cast<Eigen::Index>(keep.size());
  StudyRegionData out;
  out.study_id = d.study_id;
  out.is_control = d.is_control;
  out.beta_hat.resize(n);
  out.se.resize(n);
  out.snp_var.resize(n);
  out.upsilon.resize(n, n);
  out.snp_ids.reserve(keep.size());
  for (Eigen::Index a = 0; a < n; ++a) {
    const Eigen::Index i = keep[a];
    out.snp_ids.push_back(d.snp_ids[i]);
    out.beta_hat[a] = d.beta_hat[i];
    out.se[a] = d.se[i];
    out.snp_var[a] = d.snp_var[i];
    for (Eigen::Index b = 0; b < n; ++b) out.upsilon(a, b) = d.upsilon(i, keep[b]);
  }
  out.omega = omega_from(out.upsilon, out.snp_var);
  return out;
}

StudyRegionData drop_nonfinite(const StudyRegionData& d) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < d.beta_hat.size(); ++j) {
    if (std::isfinite(d.beta_hat[j]) && std::isfinite(d.se[j])) {
      keep.push_back(j);
    } else {
      log::warn("study '" + d.study_id + "': dropping SNP '" + d.snp_ids[j] + "' with missing beta/se");
    }
  }
  if (static_cast<Eigen::Index>(keep.size()) == d.beta_hat.size()) return d;
  return subset(d, keep);
}

MatrixXd build_sigma(const StudyRegionData& d) {
  MatrixXd sigma = d.se.asDiagonal() * d.upsilon * d.se.asDiagonal();
  symmetrize(sigma);
  sigma.diagonal() = d.se.cwiseAbs2();
  return sigma;
}

RotatedEffects rotate(const StudyRegionData& d) {
  validate(d);
  const Eigen::Index p = d.p();

  // omega and upsilon are similar matrices, so conditioning is judged on the
  // symmetric one.
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(d.upsilon, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmin > 0.0) || lmax / lmin > kSingularConditionThreshold) {
    std::ostringstream msg;
    msg << "study '" << d.study_id << "': omega is singular (eigenvalues in [" << lmin << ", " << lmax
        << "]); prune the region harder";
    throw SingularOmega(msg.str());
  }

  RotatedEffects out;
  out.p = p;
  MatrixXd conditioned = d.upsilon;
  if (lmax / lmin > kRidgeConditionThreshold) {
    const double eps = kRidgeScale * d.upsilon.trace() / static_cast<double>(p);
    conditioned.diagonal().array() += eps;
    out.ridge_applied = true;
  }
  Eigen::LLT<MatrixXd> llt(conditioned);
  if (llt.info() != Eigen::Success) {
    throw SingularOmega("study '" + d.study_id + "': Cholesky of conditioned omega failed");
  }

  const VectorXd sd = d.snp_var.cwiseSqrt();
  // omega^{-1} = V^{-1/2} Y^{-1} V^{1/2}
  MatrixXd omega_inv = llt.solve(MatrixXd(sd.asDiagonal()));
  omega_inv = sd.cwiseInverse().asDiagonal() * omega_inv;

  out.beta_star = omega_inv * d.beta_hat;
  out.sigma_star = omega_inv * build_sigma(d) * omega_inv.transpose();
  symmetrize(out.sigma_star);

  Eigen::LLT<MatrixXd> sllt(out.sigma_star);
  if (sllt.info() != Eigen::Success) {
    throw SingularOmega("study '" + d.study_id + "': rotated covariance is not positive definite");
  }
  out.precision = sllt.solve(MatrixXd::Identity(p, p));
  symmetrize(out.precision);
  return out;
}

VectorXd marginal_limit_oracle(const VectorXd& gamma, const MatrixXd& genotype_cov) {
  if (genotype_cov.rows() != genotype_cov.cols() || genotype_cov.rows() != gamma.size()) {
    throw ValidationError("marginal_limit_oracle: dimension mismatch");
  }
  const VectorXd var = genotype_cov.diagonal();
  if ((var.array() <= 0.0).any()) {
    throw ValidationError("marginal_limit_oracle: SNP with zero genotype variance");
  }
  return var.cwiseInverse().asDiagonal() * (genotype_cov * gamma);
}

}  // namespace stamp
