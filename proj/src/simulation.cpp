#include "stamp/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <gsl/gsl_cdf.h>

#include "json.hpp"
#include "stamp/errors.hpp"
#include "stamp/log.hpp"
#include "stamp/rng.hpp"

namespace stamp::sim {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

// stream tags
constexpr std::uint64_t kTagMaf = 0x6d6166;
constexpr std::uint64_t kTagEffects = 0x656666;
constexpr std::uint64_t kTagGenotypes = 0x67656e;
constexpr std::uint64_t kTagOutcome = 0x6f7574;
constexpr std::uint64_t kTagReference = 0x726566;
constexpr std::uint64_t kTagTest = 0x747374;

constexpr int kCohortDoublings = 3;
constexpr int kCohortBatch = 8192;

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

const char* to_string(SimTest test) {
  switch (test) {
    case SimTest::LinearMix: return "TL_Mix";
    case SimTest::QuadraticMix: return "TQ_Mix";
    case SimTest::LinearHetmeta: return "TL_Hetmeta";
    case SimTest::QuadraticHetmeta: return "TQ_Hetmeta";
    case SimTest::Hotelling: return "T_Hotmeta";
  }
  return "?";
}

const char* to_string(Outcome outcome) { return outcome == Outcome::Binary ? "binary" : "continuous"; }

void validate(const SimulationDesign& d) {
  const auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("simulation design: " + what);
  };
  need(d.n_studies >= 1, "n_studies must be >= 1");
  need(d.n_causal_studies >= 0 && d.n_causal_studies <= d.n_studies, "n_causal_studies must lie in [0, n_studies]");
  need(d.p >= 1, "p must be >= 1");
  need(d.p_causal >= 0 && d.p_causal <= d.p, "p_causal must lie in [0, p]");
  need(d.n_samples >= 2 && d.n_cases >= 2 && d.n_controls >= 2, "sample sizes must be >= 2");
  need(d.cohort_size >= 2, "cohort_size must be >= 2");
  need(d.e_tau >= 0 && std::isfinite(d.e_tau), "e_tau must be >= 0");
  need(std::isfinite(d.e_mu), "e_mu must be finite");
  need(d.heterogeneity_of_null_studies() >= 0, "null_e_tau must be >= 0");
  need(d.ld_block_size >= 1, "ld_block_size must be >= 1");
  need(d.maf_min > 0 && d.maf_min <= d.maf_max && d.maf_max <= 0.5, "need 0 < maf_min <= maf_max <= 0.5");
  need(d.reference_size >= 2, "reference_size must be >= 2");
  need(d.replications >= 1, "replications must be >= 1");
  need(d.bootstrap_replicates >= 1, "bootstrap_replicates must be >= 1");
  need(d.restarts >= 1 && d.bootstrap_restarts >= 1, "restarts must be >= 1");
  need(d.alpha > 0 && d.alpha < 1, "alpha must lie in (0, 1)");
  need(d.threshold > 0 && d.threshold < 1, "threshold must lie in (0, 1)");
  need(!d.tests.empty(), "no tests requested");
  if (d.null_regime == NullRegime::Weak) {
    need(d.n_causal_studies < d.n_studies, "the weak null needs at least one non-causal study as control");
  }
  if (d.ld_profile == LdProfile::Explicit) {
    need(d.ld_matrix.rows() == d.p && d.ld_matrix.cols() == d.p, "ld_matrix must be p x p");
  }
  if (d.ld_profile == LdProfile::Panel) {
    need(d.panel.cols() == d.p && d.panel.rows() >= 2, "genotype panel must have p columns and >= 2 rows");
  }
}

Eigen::MatrixXd read_genotype_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open genotype panel '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t width = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<double> row;
    bool numeric = true;
    while (std::getline(ss, cell, '\t')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) numeric = false;
        row.push_back(v);
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (first) {  // header of SNP ids
        first = false;
        continue;
      }
      throw ValidationError("genotype panel '" + path + "': non-numeric row " + std::to_string(rows.size() + 1));
    }
    first = false;
    for (double v : row) {
      if (v != 0.0 && v != 1.0 && v != 2.0) throw ValidationError("genotype panel '" + path + "': values must be 0, 1 or 2");
    }
    if (width == 0) width = row.size();
    if (row.size() != width) throw ValidationError("genotype panel '" + path + "': ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("genotype panel '" + path + "' is empty");
  MatrixXd g(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) g(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return g;
}

std::vector<Index> prune_columns(const MatrixXd& g, double max_r2) {
  const MatrixXd cov = sample_covariance(g);
  std::vector<Index> keep;
  for (Index j = 0; j < g.cols(); ++j) {
    if (!(cov(j, j) > 0)) continue;
    bool ok = true;
    for (Index k : keep) {
      const double r = cov(j, k) / std::sqrt(cov(j, j) * cov(k, k));
      if (r * r > max_r2) {
        ok = false;
        break;
      }
    }
    if (ok) keep.push_back(j);
  }
  return keep;
}

SimulationDesign parse_design(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("simulation design is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("simulation design must be a JSON object");

  static const std::set<std::string> known{
      "n_studies", "n_causal_studies", "p", "p_causal", "outcome", "n_samples", "n_cases", "n_controls",
      "cohort_size", "e_mu", "e_tau", "null_e_tau", "ld_profile", "ld_block_size", "genotype_panel", "prune_r2",
      "maf_min", "maf_max", "omega_mode", "reference_size", "null_regime", "replications", "bootstrap_replicates",
      "restarts", "bootstrap_restarts", "alpha", "threshold", "tests", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError("simulation design: unknown key '" + key + "'");
  }

  SimulationDesign d;
  try {
    const auto get_int = [&](const char* key, int& out) {
      if (j.contains(key)) out = j.at(key).get<int>();
    };
    const auto get_double = [&](const char* key, double& out) {
      if (j.contains(key)) out = j.at(key).get<double>();
    };
    get_int("n_studies", d.n_studies);
    get_int("n_causal_studies", d.n_causal_studies);
    get_int("p", d.p);
    get_int("p_causal", d.p_causal);
    get_int("n_samples", d.n_samples);
    get_int("n_cases", d.n_cases);
    get_int("n_controls", d.n_controls);
    get_int("cohort_size", d.cohort_size);
    get_double("e_mu", d.e_mu);
    get_double("e_tau", d.e_tau);
    if (j.contains("null_e_tau")) d.null_e_tau = j.at("null_e_tau").get<double>();
    get_int("ld_block_size", d.ld_block_size);
    get_double("maf_min", d.maf_min);
    get_double("maf_max", d.maf_max);
    get_int("reference_size", d.reference_size);
    get_int("replications", d.replications);
    get_int("bootstrap_replicates", d.bootstrap_replicates);
    get_int("restarts", d.restarts);
    get_int("bootstrap_restarts", d.bootstrap_restarts);
    get_double("alpha", d.alpha);
    get_double("threshold", d.threshold);
    if (j.contains("seed")) {
      d.seed = j.at("seed").get<std::uint64_t>();
      d.seed_set = true;
    }

    if (j.contains("outcome")) {
      const auto v = j.at("outcome").get<std::string>();
      if (v == "continuous") d.outcome = Outcome::Continuous;
      else if (v == "binary") d.outcome = Outcome::Binary;
      else throw ValidationError("simulation design: outcome must be 'continuous' or 'binary'");
    }
    if (j.contains("omega_mode")) {
      const auto v = j.at("omega_mode").get<std::string>();
      if (v == "internal") d.omega_mode = OmegaMode::Internal;
      else if (v == "external") d.omega_mode = OmegaMode::External;
      else throw ValidationError("simulation design: omega_mode must be 'internal' or 'external'");
    }
    if (j.contains("null_regime")) {
      const auto v = j.at("null_regime").get<std::string>();
      if (v == "strong") d.null_regime = NullRegime::Strong;
      else if (v == "weak") d.null_regime = NullRegime::Weak;
      else throw ValidationError("simulation design: null_regime must be 'strong' or 'weak'");
    }
    if (j.contains("ld_profile")) {
      const json& v = j.at("ld_profile");
      if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "low") d.ld_profile = LdProfile::Low;
        else if (s == "high") d.ld_profile = LdProfile::High;
        else throw ValidationError("simulation design: ld_profile must be 'low', 'high' or a matrix");
      } else {
        const auto rows = v.get<std::vector<std::vector<double>>>();
        d.ld_profile = LdProfile::Explicit;
        d.ld_matrix.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
          if (rows[r].size() != rows.size()) throw ValidationError("simulation design: ld_profile matrix must be square");
          for (std::size_t c = 0; c < rows.size(); ++c) d.ld_matrix(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
        }
        if (!j.contains("p")) d.p = static_cast<int>(rows.size());
      }
    }
    if (j.contains("genotype_panel")) {
      if (j.contains("ld_profile")) throw ValidationError("simulation design: give either ld_profile or genotype_panel");
      std::filesystem::path path = j.at("genotype_panel").get<std::string>();
      if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
      MatrixXd panel = read_genotype_panel(path.string());
      if (j.contains("prune_r2")) {
        const double r2 = j.at("prune_r2").get<double>();
        if (!(r2 > 0 && r2 <= 1)) throw ValidationError("simulation design: prune_r2 must lie in (0, 1]");
        const std::vector<Index> keep = prune_columns(panel, r2);
        MatrixXd pruned(panel.rows(), static_cast<Index>(keep.size()));
        for (std::size_t k = 0; k < keep.size(); ++k) pruned.col(static_cast<Index>(k)) = panel.col(keep[k]);
        panel = std::move(pruned);
      }
      d.ld_profile = LdProfile::Panel;
      d.panel = std::move(panel);
      d.p = static_cast<int>(d.panel.cols());
    } else if (j.contains("prune_r2")) {
      throw ValidationError("simulation design: prune_r2 only applies to a genotype_panel");
    }
    if (j.contains("tests")) {
      d.tests.clear();
      for (const auto& name : j.at("tests").get<std::vector<std::string>>()) {
        bool found = false;
        for (SimTest t : {SimTest::LinearMix, SimTest::QuadraticMix, SimTest::LinearHetmeta, SimTest::QuadraticHetmeta,
                          SimTest::Hotelling}) {
          if (name == to_string(t)) {
            d.tests.push_back(t);
            found = true;
          }
        }
        if (!found) throw ValidationError("simulation design: unknown test '" + name + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("simulation design: ") + e.what());
  }
  validate(d);
  return d;
}

SimulationDesign load_design(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open design file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_design(ss.str(), std::filesystem::path(path).parent_path().string());
}

MatrixXd latent_correlation(const SimulationDesign& d) {
  if (d.ld_profile == LdProfile::Explicit) return d.ld_matrix;
  const double rho = d.ld_profile == LdProfile::High ? kHighLdRho : kLowLdRho;
  MatrixXd r = MatrixXd::Identity(d.p, d.p);
  for (Index i = 0; i < d.p; ++i)
    for (Index j = 0; j < d.p; ++j)
      if (i != j && i / d.ld_block_size == j / d.ld_block_size) r(i, j) = rho;
  return r;
}

GenotypeModel make_genotype_model(const SimulationDesign& d) {
  validate(d);
  GenotypeModel m;
  if (d.ld_profile == LdProfile::Panel) {
    m.panel = d.panel;
    return m;
  }
  const MatrixXd r = latent_correlation(d);
  Eigen::LLT<MatrixXd> llt(r);
  if (llt.info() != Eigen::Success) throw ValidationError("latent LD matrix is not positive definite");
  m.latent_chol = llt.matrixL();
  std::mt19937_64 rng = make_stream(d.seed, {kTagMaf});
  std::uniform_real_distribution<double> maf(d.maf_min, d.maf_max);
  m.maf.resize(d.p);
  m.threshold.resize(d.p);
  for (Index j = 0; j < d.p; ++j) {
    m.maf[j] = d.maf_min == d.maf_max ? d.maf_min : maf(rng);
    m.threshold[j] = gsl_cdf_ugaussian_Pinv(m.maf[j]);
  }
  return m;
}

MatrixXd generate_genotypes(const GenotypeModel& m, int n, std::mt19937_64& rng) {
  if (m.panel.size() > 0) {
    std::uniform_int_distribution<Index> pick(0, m.panel.rows() - 1);
    MatrixXd g(n, m.panel.cols());
    for (int i = 0; i < n; ++i) g.row(i) = m.panel.row(pick(rng));
    return g;
  }
  const Index p = m.maf.size();
  std::normal_distribution<double> normal;
  MatrixXd z(2 * static_cast<Index>(n), p);
  for (Index i = 0; i < z.rows(); ++i)
    for (Index j = 0; j < p; ++j) z(i, j) = normal(rng);
  const MatrixXd latent = z * m.latent_chol.transpose();
  MatrixXd g(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j)
      g(i, j) = static_cast<double>(latent(2 * i, j) < m.threshold[j]) + static_cast<double>(latent(2 * i + 1, j) < m.threshold[j]);
  return g;
}

double truncated_normal(double mean, double sd, std::mt19937_64& rng) {
  if (mean == 0.0 && sd == 0.0) return 0.0;
  if (sd == 0.0) return std::max(mean, 0.0);
  std::normal_distribution<double> normal(mean, sd);
  for (;;) {
    const double x = normal(rng);
    if (x >= 0.0) return x;
  }
}

Effects generate_effects(const SimulationDesign& d, bool is_causal, std::mt19937_64& rng) {
  Effects e;
  e.gamma = VectorXd::Zero(d.p);
  std::normal_distribution<double> normal;
  if (is_causal) {
    std::vector<int> all(static_cast<std::size_t>(d.p));
    std::iota(all.begin(), all.end(), 0);
    // partial Fisher-Yates; std::sample's draw order is library specific
    for (int k = 0; k < d.p_causal; ++k) {
      std::uniform_int_distribution<int> pick(k, d.p - 1);
      std::swap(all[static_cast<std::size_t>(k)], all[static_cast<std::size_t>(pick(rng))]);
    }
    e.causal_positions.assign(all.begin(), all.begin() + d.p_causal);
    std::sort(e.causal_positions.begin(), e.causal_positions.end());
    for (int j : e.causal_positions) {
      const double mu = d.e_mu + std::abs(d.e_mu) / 4.0 * normal(rng);
      const double tau = truncated_normal(d.e_tau, d.e_tau / 2.0, rng);
      e.gamma[j] = mu + std::sqrt(tau) * normal(rng);
    }
  } else if (d.null_regime == NullRegime::Weak) {
    const double et = d.heterogeneity_of_null_studies();
    for (Index j = 0; j < d.p; ++j) {
      const double tau = truncated_normal(et, et / 2.0, rng);
      e.gamma[j] = std::sqrt(tau) * normal(rng);
    }
  }
  return e;
}

VectorXd continuous_outcome(const MatrixXd& x, const VectorXd& gamma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  VectorXd y = x * gamma;
  for (Index i = 0; i < y.size(); ++i) y[i] += normal(rng);
  return y;
}

VectorXd logistic_outcome(const MatrixXd& x, const VectorXd& gamma, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const VectorXd eta = (x * gamma).array() + kBaselineLogit;
  VectorXd y(eta.size());
  for (Index i = 0; i < y.size(); ++i) y[i] = u(rng) < expit(eta[i]) ? 1.0 : 0.0;
  return y;
}

CaseControlSample case_control_sample(const SimulationDesign& d, const GenotypeModel& model, const VectorXd& gamma,
                                      std::mt19937_64& rng) {
  const int n = d.n_cases + d.n_controls;
  CaseControlSample out;
  out.genotypes.resize(n, gamma.size());
  out.outcome.resize(n);
  if (gamma.isZero(0.0)) {
    out.genotypes = generate_genotypes(model, n, rng);
    for (int i = 0; i < n; ++i) out.outcome[i] = i < d.n_cases ? 1.0 : 0.0;
    return out;
  }

  // Individuals are drawn in batches and the first cases/controls kept, which
  // is a prefix of one large cohort.
  const long cap = static_cast<long>(d.cohort_size) << kCohortDoublings;
  int cases = 0, controls = 0;
  long drawn = 0;
  while (cases < d.n_cases || controls < d.n_controls) {
    if (drawn >= cap) {
      throw InsufficientCases("cohort of " + std::to_string(cap) + " yielded " + std::to_string(cases) + " cases, " +
                              std::to_string(d.n_cases) + " requested");
    }
    const int batch = static_cast<int>(std::min<long>(kCohortBatch, cap - drawn));
    const MatrixXd g = generate_genotypes(model, batch, rng);
    const VectorXd y = logistic_outcome(g, gamma, rng);
    for (int i = 0; i < batch; ++i) {
      if (y[i] > 0.5 && cases < d.n_cases) {
        out.genotypes.row(cases) = g.row(i);
        out.outcome[cases++] = 1.0;
      } else if (y[i] < 0.5 && controls < d.n_controls) {
        out.genotypes.row(d.n_cases + controls) = g.row(i);
        out.outcome[d.n_cases + controls++] = 0.0;
      }
    }
    drawn += batch;
  }
  long cohort = d.cohort_size;
  while (cohort < drawn) cohort *= 2;
  out.cohort_size = static_cast<int>(cohort);
  return out;
}

SnpFit ols_slope(const VectorXd& x, const VectorXd& y) {
  const Index n = x.size();
  if (n < 3) throw ValidationError("least squares needs at least 3 observations");
  const VectorXd xc = x.array() - x.mean();
  const VectorXd yc = y.array() - y.mean();
  const double sxx = xc.squaredNorm();
  if (!(sxx > 0)) throw ValidationError("monomorphic SNP");
  SnpFit f;
  f.beta = xc.dot(yc) / sxx;
  const double rss = (yc - f.beta * xc).squaredNorm();
  f.se = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  return f;
}

SnpFit logistic_slope(const VectorXd& x, const VectorXd& y) {
  const double ybar = y.mean();
  if (!(ybar > 0 && ybar < 1)) throw SeparationError("outcome has a single class");
  double b0 = std::log(ybar / (1 - ybar)), b1 = 0;
  for (int it = 0; it < 25; ++it) {
    double g0 = 0, g1 = 0, h00 = 0, h01 = 0, h11 = 0;
    for (Index i = 0; i < x.size(); ++i) {
      const double pr = expit(b0 + b1 * x[i]);
      const double w = pr * (1 - pr);
      const double r = y[i] - pr;
      g0 += r;
      g1 += r * x[i];
      h00 += w;
      h01 += w * x[i];
      h11 += w * x[i] * x[i];
    }
    const double det = h00 * h11 - h01 * h01;
    if (!(det > 0) || !std::isfinite(det)) throw SeparationError("singular information matrix");
    const double d0 = (h11 * g0 - h01 * g1) / det;
    const double d1 = (h00 * g1 - h01 * g0) / det;
    b0 += d0;
    b1 += d1;
    if (!std::isfinite(b1)) break;
    if (std::max(std::abs(d0), std::abs(d1)) < 1e-8) {
      double i00 = 0, i01 = 0, i11 = 0;
      for (Index i = 0; i < x.size(); ++i) {
        const double pr = expit(b0 + b1 * x[i]);
        const double w = pr * (1 - pr);
        i00 += w;
        i01 += w * x[i];
        i11 += w * x[i] * x[i];
      }
      return {b1, std::sqrt(i00 / (i00 * i11 - i01 * i01))};
    }
  }
  throw SeparationError("logistic regression did not converge in 25 iterations");
}

MatrixXd sample_covariance(const MatrixXd& x) {
  const MatrixXd c = x.rowwise() - x.colwise().mean();
  MatrixXd cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

std::string study_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "study%03d", index + 1);
  return buf;
}

StudyRegionData fit_marginals(const MatrixXd& x, const VectorXd& y, Outcome outcome, std::string study_id,
                              bool is_control, const MatrixXd* reference_cov) {
  if (x.rows() != y.size()) throw ValidationError("genotype and outcome lengths differ");
  std::vector<Index> keep;
  std::vector<std::string> ids;
  std::vector<SnpFit> fits;
  for (Index j = 0; j < x.cols(); ++j) {
    const auto col = x.col(j);
    if (col.maxCoeff() == col.minCoeff()) continue;
    if (reference_cov && !((*reference_cov)(j, j) > 0)) continue;
    char id[32];
    std::snprintf(id, sizeof id, "snp%03d", static_cast<int>(j + 1));
    try {
      fits.push_back(outcome == Outcome::Continuous ? ols_slope(col, y) : logistic_slope(col, y));
    } catch (const SeparationError& e) {
      log::warn("study '" + study_id + "' " + id + ": " + e.what() + "; SNP dropped");
      continue;
    }
    keep.push_back(j);
    ids.emplace_back(id);
  }
  if (keep.empty()) throw NumericalError("study '" + study_id + "' has no usable SNPs");

  const auto n = static_cast<Index>(keep.size());
  VectorXd beta(n), se(n);
  MatrixXd xs(x.rows(), n);
  for (Index k = 0; k < n; ++k) {
    beta[k] = fits[static_cast<std::size_t>(k)].beta;
    se[k] = fits[static_cast<std::size_t>(k)].se;
    xs.col(k) = x.col(keep[static_cast<std::size_t>(k)]);
  }
  MatrixXd cov;
  if (reference_cov) {
    cov.resize(n, n);
    for (Index a = 0; a < n; ++a)
      for (Index b = 0; b < n; ++b) cov(a, b) = (*reference_cov)(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
  } else {
    cov = sample_covariance(xs);
  }
  return make_study(std::move(study_id), std::move(ids), std::move(beta), std::move(se), cov, is_control);
}

std::vector<GeneratedStudy> generate_replication(const SimulationDesign& d, const GenotypeModel& model,
                                                 std::size_t replication) {
  const auto rep = static_cast<std::uint64_t>(replication);
  MatrixXd reference;
  if (d.omega_mode == OmegaMode::External) {
    std::mt19937_64 rng = make_stream(d.seed, {rep, kTagReference});
    reference = sample_covariance(generate_genotypes(model, d.reference_size, rng));
  }
  std::vector<GeneratedStudy> out;
  out.reserve(static_cast<std::size_t>(d.n_studies));
  for (int s = 0; s < d.n_studies; ++s) {
    const auto key = static_cast<std::uint64_t>(s);
    GeneratedStudy g;
    g.causal = s < d.n_causal_studies;
    const bool control = d.null_regime == NullRegime::Weak && s == d.n_studies - 1;
    std::mt19937_64 erng = make_stream(d.seed, {rep, key, kTagEffects});
    g.effects = generate_effects(d, g.causal, erng);

    std::mt19937_64 grng = make_stream(d.seed, {rep, key, kTagGenotypes});
    MatrixXd x;
    VectorXd y;
    if (d.outcome == Outcome::Continuous) {
      x = generate_genotypes(model, d.n_samples, grng);
      std::mt19937_64 orng = make_stream(d.seed, {rep, key, kTagOutcome});
      y = continuous_outcome(x, g.effects.gamma, orng);
    } else {
      CaseControlSample cc = case_control_sample(d, model, g.effects.gamma, grng);
      x = std::move(cc.genotypes);
      y = std::move(cc.outcome);
    }
    g.data = fit_marginals(x, y, d.outcome, study_name(s), control,
                           d.omega_mode == OmegaMode::External ? &reference : nullptr);
    out.push_back(std::move(g));
  }
  return out;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  double pos = 0, neg = 0, wins = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    pos += 1;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  for (bool l : labels) neg += l ? 0 : 1;
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  return wins / (pos * neg);
}

ReplicationRecord run_replication(const SimulationDesign& d, const GenotypeModel& model, std::size_t replication) {
  ReplicationRecord rec;
  try {
    const std::vector<GeneratedStudy> gen = generate_replication(d, model, replication);
    std::vector<StudyRegionData> data;
    for (const auto& g : gen) {
      data.push_back(g.data);
      rec.causal.push_back(g.causal);
    }
    if (d.null_regime == NullRegime::Weak) rec.control = data.size() - 1;
    const std::vector<StudyEffects> rotated = rotate_all(data);

    std::vector<RotatedEffects> eff;
    std::vector<RegionStatistic> lin, quad;
    for (const auto& r : rotated) {
      eff.push_back(r.effects);
      lin.push_back(t_linear(r.effects, r.study_id));
      quad.push_back(t_quadratic(r.effects, r.study_id));
    }

    for (std::size_t t = 0; t < d.tests.size(); ++t) {
      const SimTest test = d.tests[t];
      std::vector<double> post;
      double p = 1;
      switch (test) {
        case SimTest::LinearMix:
        case SimTest::QuadraticMix: {
          StampOptions o;
          o.kind = test == SimTest::LinearMix ? StatKind::Linear : StatKind::Quadratic;
          o.null_regime = d.null_regime;
          o.threshold = d.threshold;
          o.restarts = d.restarts;
          o.bootstrap.replicates = d.bootstrap_replicates;
          o.bootstrap.restarts = d.bootstrap_restarts;
          o.bootstrap.seed = make_stream(d.seed, {static_cast<std::uint64_t>(replication), kTagTest, t})();
          const StampResult r = run_stamp(data, rotated, o);
          p = r.p_value;
          post = r.posteriors;
          break;
        }
        case SimTest::LinearHetmeta: p = het_meta_linear(lin).p_value; break;
        case SimTest::QuadraticHetmeta: p = het_meta_quadratic(quad).p_value; break;
        case SimTest::Hotelling: p = hotelling_meta(eff).p_value; break;
      }
      rec.p_values.push_back(p);
      double auc = std::numeric_limits<double>::quiet_NaN();
      if (!post.empty()) {
        std::vector<double> sc;
        std::vector<bool> lab;
        for (std::size_t s = 0; s < post.size(); ++s) {
          if (rec.control && *rec.control == s) continue;
          sc.push_back(post[s]);
          lab.push_back(rec.causal[s]);
        }
        auc = roc_auc(sc, lab);
      }
      rec.auc.push_back(auc);
      rec.posteriors.push_back(std::move(post));
    }
    rec.ok = true;
  } catch (const NumericalError& e) {
    rec = ReplicationRecord{};
    rec.error = e.what();
  }
  return rec;
}

ExperimentResult run_experiment(const SimulationDesign& d, int jobs, const std::function<void(int, int)>& progress) {
  validate(d);
  const GenotypeModel model = make_genotype_model(d);
  const auto n = static_cast<std::size_t>(d.replications);

  ExperimentResult res;
  res.replications.resize(n);
  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0};
  std::mutex mtx;
  const auto worker = [&] {
    for (std::size_t r = next++; r < n; r = next++) {
      res.replications[r] = run_replication(d, model, r);
      const int k = ++done;
      if (progress) {
        std::lock_guard lock(mtx);
        progress(k, d.replications);
      }
    }
  };
  const int threads = std::clamp(jobs, 1, d.replications);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (const auto& rec : res.replications) {
    if (!rec.ok) ++res.n_failed;
  }
  for (std::size_t t = 0; t < d.tests.size(); ++t) {
    ResultRow row;
    row.test = d.tests[t];
    row.n_causal_studies = d.n_causal_studies;
    row.regime = d.null_regime;
    double rej = 0, pc = 0, pn = 0, auc = 0;
    int nc = 0, nn = 0, na = 0;
    for (const auto& rec : res.replications) {
      if (!rec.ok) continue;
      ++row.n_used;
      rej += rec.p_values[t] < d.alpha ? 1 : 0;
      const auto& post = rec.posteriors[t];
      for (std::size_t s = 0; s < post.size(); ++s) {
        if (rec.control && *rec.control == s) continue;
        if (rec.causal[s]) {
          pc += post[s];
          ++nc;
        } else {
          pn += post[s];
          ++nn;
        }
      }
      if (std::isfinite(rec.auc[t])) {
        auc += rec.auc[t];
        ++na;
      }
    }
    if (row.n_used > 0) {
      row.rejection_rate = rej / row.n_used;
      row.mc_se = std::sqrt(row.rejection_rate * (1 - row.rejection_rate) / row.n_used);
    }
    if (nc > 0) row.mean_posterior_causal = pc / nc;
    if (nn > 0) row.mean_posterior_null = pn / nn;
    if (na > 0) row.mean_auc = auc / na;
    res.rows.push_back(row);
  }
  return res;
}

}  // namespace stamp::sim
