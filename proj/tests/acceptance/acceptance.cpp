// Acceptance checks. Each criterion prints exactly one line:
//   criterion <n> PASS|FAIL <details>
// Usage: stamp_acceptance [--criterion N]... (all criteria when none given)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracle.hpp"
#include "stamp/inference.hpp"
#include "stamp/mixture.hpp"
#include "stamp/region_stats.hpp"
#include "stamp/rng.hpp"
#include "stamp/simulation.hpp"

using namespace stamp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

void progress(const std::string& what, int done, int total) {
  if (done % std::max(1, total / 10) == 0 || done == total) {
    std::cerr << "  " << what << " " << done << "/" << total << "\n";
  }
}

// Sigma_star scaled like squared standard errors of marginal estimates.
MatrixXd sigma_star(std::mt19937_64& rng) { return 0.0025 * oracle::random_spd(5, rng, 0.3); }

RotatedEffects effects_of(const MatrixXd& sig) {
  RotatedEffects e;
  e.beta_star = VectorXd::Zero(sig.rows());
  e.sigma_star = sig;
  e.precision = sig.inverse();
  e.p = sig.rows();
  return e;
}

// 1. strong-null moments of Q against Monte Carlo
Outcome criterion1() {
  std::mt19937_64 rng(101);
  const int draws = 100000;
  double worst_mean = 0, worst_var = 0;
  for (int m = 0; m < 20; ++m) {
    const MatrixXd sig = sigma_star(rng);
    const RegionStatistic q = t_quadratic(effects_of(sig));
    const StatMoments th = quadratic_raw_moments(q.geometry, {});
    const MatrixXd a = sig.inverse();
    const MatrixXd a2 = a * a;
    const MatrixXd l = sig.llt().matrixL();
    std::vector<double> x(draws);
    for (int r = 0; r < draws; ++r) {
      const VectorXd b = oracle::mvn(l, rng);
      x[r] = b.dot(a2 * b);
    }
    const oracle::Summary s = oracle::summarize(x);
    worst_mean = std::max(worst_mean, std::abs(s.mean / th.mean - 1));
    worst_var = std::max(worst_var, std::abs(s.var / th.variance - 1));
    // the implementation's moments reduce to tr(A) and 2 tr(A^2)
    if (std::abs(th.mean - a.trace()) > 1e-9 * a.trace() || std::abs(th.variance - 2 * a2.trace()) > 1e-9 * a2.trace()) {
      return {false, "strong-null moments differ from tr(A), 2tr(A^2)"};
    }
  }
  return {worst_mean <= 0.01 && worst_var <= 0.03, "max |rel err| E(Q) " + fmt("%.4f", worst_mean) + " (tol 0.01), Var(Q) " +
                                                      fmt("%.4f", worst_var) + " (tol 0.03), 20 matrices x 100000 draws"};
}

// 2. weak-null moments with inverse-gamma heterogeneity
Outcome criterion2() {
  std::mt19937_64 rng(202);
  const int draws = 100000;
  double worst = 0;
  int checks = 0, failed = 0;
  for (int m = 0; m < 20; ++m) {
    const MatrixXd sig = sigma_star(rng);
    const double e_tau = sig.diagonal().mean() * (0.5 + 0.1 * (m % 5));
    const double v_tau = e_tau * e_tau / 4.0;  // inverse-gamma shape 6
    const auto ig = inverse_gamma_from_moments(e_tau, v_tau);
    std::gamma_distribution<double> gamma(ig->shape, 1.0 / ig->scale);
    std::normal_distribution<double> z;
    const RotatedEffects e = effects_of(sig);
    const RegionStatistic q = t_quadratic(e), l = t_linear(e);
    const MatrixXd a = sig.inverse();
    const MatrixXd a2 = a * a;
    const MatrixXd chol = sig.llt().matrixL();
    const double d1 = a.diagonal().sum();
    std::vector<double> xq(draws), xl(draws);
    for (int r = 0; r < draws; ++r) {
      VectorXd b = oracle::mvn(chol, rng);
      for (int j = 0; j < 5; ++j) b[j] += std::sqrt(1.0 / gamma(rng)) * z(rng);
      xq[r] = b.dot(a2 * b);
      xl[r] = (a * b).sum() / std::sqrt(d1);
    }
    SuperPopulationMoments w;
    w.e_tau = e_tau;
    w.var_tau = v_tau;
    const StatMoments mq = quadratic_raw_moments(q.geometry, resolve(w, Regime::WeakNull, StatKind::Quadratic));
    const StatMoments ml = t_linear_moments(l, w, Regime::WeakNull);
    const auto test = [&](double est, double want, double se) {
      const double zscore = std::abs(est - want) / se;
      worst = std::max(worst, zscore);
      ++checks;
      failed += zscore > 3 ? 1 : 0;
    };
    const oracle::Summary sq = oracle::summarize(xq), sl = oracle::summarize(xl);
    test(sq.mean, mq.mean, sq.se);
    test(sq.var, mq.variance, oracle::variance_se(xq));
    test(sl.mean, ml.mean, sl.se);
    test(sl.var, ml.variance, oracle::variance_se(xl));
  }
  return {failed == 0, std::to_string(checks - failed) + "/" + std::to_string(checks) +
                           " weak-null moments within 3 MC SE (max " + fmt("%.2f", worst) + " SE), T^Q and T^L"};
}

// 3. marginal estimates converge to Omega gamma; rotation recovers gamma
Outcome criterion3() {
  sim::SimulationDesign d;
  d.p = 2;
  d.p_causal = 1;
  d.ld_profile = sim::LdProfile::Explicit;
  d.ld_matrix = (MatrixXd(2, 2) << 1, 0.6, 0.6, 1).finished();
  d.maf_min = d.maf_max = 0.3;
  d.seed = 303;
  const sim::GenotypeModel model = sim::make_genotype_model(d);
  VectorXd gamma(2);
  gamma << 0.1, 0.0;

  std::mt19937_64 big = make_stream(d.seed, {1});
  const MatrixXd pop = sim::sample_covariance(sim::generate_genotypes(model, 4000000, big));
  const VectorXd target = marginal_limit_oracle(gamma, pop);

  const int reps = 100;
  std::vector<std::vector<double>> marg(2), rot(2);
  for (int r = 0; r < reps; ++r) {
    std::mt19937_64 rng = make_stream(d.seed, {2, static_cast<std::uint64_t>(r)});
    const MatrixXd x = sim::generate_genotypes(model, 50000, rng);
    const VectorXd y = sim::continuous_outcome(x, gamma, rng);
    const StudyRegionData s = sim::fit_marginals(x, y, sim::Outcome::Continuous, "s");
    const RotatedEffects e = rotate(s);
    for (int j = 0; j < 2; ++j) {
      marg[j].push_back(s.beta_hat[j]);
      rot[j].push_back(e.beta_star[j]);
    }
  }
  double worst = 0;
  std::ostringstream det;
  for (int j = 0; j < 2; ++j) {
    const oracle::Summary m = oracle::summarize(marg[j]), g = oracle::summarize(rot[j]);
    worst = std::max({worst, std::abs(m.mean - target[j]) / m.se, std::abs(g.mean - gamma[j]) / g.se});
    det << " snp" << j + 1 << ": marginal " << fmt("%.5f", m.mean) << " vs " << fmt("%.5f", target[j]) << ", rotated "
        << fmt("%.5f", g.mean) << " vs " << fmt("%.2f", gamma[j]) << ";";
  }
  return {worst <= 3, "max deviation " + fmt("%.2f", worst) + " MC SE (tol 3), N=50000 x " + std::to_string(reps) + " reps;" +
                          det.str()};
}

// 4. heterogeneity moment estimator
Outcome criterion4() {
  const double e_tau = 0.02;
  std::mt19937_64 rng(404);
  std::gamma_distribution<double> tau(4.0, e_tau / 4.0);
  std::uniform_real_distribution<double> se(0.05, 0.15);
  std::normal_distribution<double> z;
  double sum = 0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    std::vector<StudyRegionData> studies;
    for (int s = 0; s < 20; ++s) {
      VectorXd b(50), e(50);
      for (int j = 0; j < 50; ++j) {
        e[j] = se(rng);
        b[j] = std::sqrt(tau(rng)) * z(rng) + e[j] * z(rng);
      }
      studies.push_back(make_study("s" + std::to_string(s), oracle::snp_ids(50), b, e, MatrixXd::Identity(50, 50)));
    }
    sum += estimate_tau_moments(studies).e_tau;
  }
  const double avg = sum / reps;
  const double rel = std::abs(avg / e_tau - 1);
  return {rel <= 0.2, "mean E(tau) estimate " + fmt("%.5f", avg) + " vs 0.02 (rel err " + fmt("%.3f", rel) +
                          ", tol 0.2), S=20, p=50, 100 reps"};
}

sim::SimulationDesign type1_design(NullRegime regime) {
  sim::SimulationDesign d;
  d.n_studies = 20;
  d.n_causal_studies = 0;
  d.p = 30;
  d.bootstrap_replicates = 199;
  d.replications = 500;
  d.null_regime = regime;
  if (regime == NullRegime::Weak) d.null_e_tau = 0.002;
  d.tests = {sim::SimTest::LinearMix, sim::SimTest::QuadraticMix};
  d.seed = regime == NullRegime::Strong ? 5001 : 5002;
  return d;
}

// 5. type-1 error of the mixture tests
Outcome criterion5() {
  bool ok = true;
  std::ostringstream det;
  for (NullRegime regime : {NullRegime::Strong, NullRegime::Weak}) {
    const sim::SimulationDesign d = type1_design(regime);
    const sim::ExperimentResult res =
        sim::run_experiment(d, workers(), [&](int k, int n) { progress(std::string("type-1 ") + to_string(regime), k, n); });
    const double tl = res.rows[0].rejection_rate, tq = res.rows[1].rejection_rate;
    ok = ok && tl >= 0.032 && tl <= 0.071 && tq <= 0.071 && res.rows[0].n_used >= 1;
    det << to_string(regime) << ": TL_Mix " << fmt("%.3f", tl) << " TQ_Mix " << fmt("%.3f", tq) << " (used "
        << res.rows[0].n_used << "/" << d.replications << "); ";
  }
  det << "need TL_Mix in [0.032, 0.071], TQ_Mix <= 0.071";
  return {ok, det.str()};
}

sim::SimulationDesign power_design(int causal, double e_tau) {
  sim::SimulationDesign d;
  d.n_studies = 20;
  d.n_causal_studies = causal;
  d.p = 50;
  d.p_causal = 5;
  d.e_mu = 0.0;
  d.e_tau = e_tau;
  d.replications = 500;
  d.bootstrap_replicates = 199;
  d.tests = {sim::SimTest::QuadraticMix, sim::SimTest::QuadraticHetmeta};
  d.seed = 6000 + static_cast<std::uint64_t>(causal);
  return d;
}

// E(tau) giving T^Q_Hetmeta power near 0.4 at S_C = 5, by bisection on log E(tau).
double calibrate_e_tau() {
  double lo = std::log(1e-4), hi = std::log(0.1);
  for (int it = 0; it < 10; ++it) {
    const double mid = 0.5 * (lo + hi);
    sim::SimulationDesign d = power_design(5, std::exp(mid));
    d.replications = 200;
    d.seed = 6100;
    d.tests = {sim::SimTest::QuadraticHetmeta};
    const double pw = sim::run_experiment(d, workers()).rows[0].rejection_rate;
    std::cerr << "  calibration E(tau)=" << std::exp(mid) << " power " << pw << "\n";
    (pw < 0.4 ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

struct Ci {
  double rate, lo, hi;
};
Ci ci(const sim::ResultRow& r) { return {r.rejection_rate, r.rejection_rate - 1.96 * r.mc_se, r.rejection_rate + 1.96 * r.mc_se}; }

// 6. power ordering
Outcome criterion6() {
  const double e_tau = calibrate_e_tau();
  std::ostringstream det;
  det << "E(tau)=" << fmt("%.5g", e_tau) << "; ";
  const auto run = [&](int causal) {
    return sim::run_experiment(power_design(causal, e_tau), workers(),
                               [&](int k, int n) { progress("power S_C=" + std::to_string(causal), k, n); });
  };
  const sim::ExperimentResult five = run(5);
  const Ci m5 = ci(five.rows[0]), h5 = ci(five.rows[1]);
  const bool first = m5.rate - h5.rate >= 0.05 && m5.lo > h5.hi;
  det << "S_C=5: TQ_Mix " << fmt("%.3f", m5.rate) << " [" << fmt("%.3f", m5.lo) << ", " << fmt("%.3f", m5.hi)
      << "], TQ_Hetmeta " << fmt("%.3f", h5.rate) << " [" << fmt("%.3f", h5.lo) << ", " << fmt("%.3f", h5.hi) << "]; ";
  const sim::ExperimentResult fifteen = run(15);
  const Ci m15 = ci(fifteen.rows[0]), h15 = ci(fifteen.rows[1]);
  // "ties": the 95% intervals overlap
  const bool second = h15.rate >= m15.rate || m15.lo <= h15.hi;
  det << "S_C=15: TQ_Mix " << fmt("%.3f", m15.rate) << " [" << fmt("%.3f", m15.lo) << ", " << fmt("%.3f", m15.hi)
      << "], TQ_Hetmeta " << fmt("%.3f", h15.rate) << " [" << fmt("%.3f", h15.lo) << ", " << fmt("%.3f", h15.hi) << "]";
  return {first && second, det.str()};
}

// 7. posterior discrimination in the S_C = 5 power setting
Outcome criterion7() {
  const double e_tau = calibrate_e_tau();
  sim::SimulationDesign d = power_design(5, e_tau);
  // posteriors come from the observed fit and do not depend on R
  d.bootstrap_replicates = 1;
  d.tests = {sim::SimTest::QuadraticMix};
  const sim::ExperimentResult res = sim::run_experiment(d, workers(), [&](int k, int n) { progress("posteriors", k, n); });
  const auto& row = res.rows[0];
  const double auc = row.mean_auc.value_or(std::nan(""));
  return {auc >= 0.8, "mean ROC AUC " + fmt("%.3f", auc) + " (need >= 0.8) over " + std::to_string(row.n_used) +
                          " replications, E(tau)=" + fmt("%.5g", e_tau)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 8. byte-identical goldens across runs and worker counts
Outcome criterion8() {
  const std::string bin = STAMP_BINARY;
  const std::string data = STAMP_TEST_DATA;
  const std::string man = data + "/fixture/manifest.json";
  const fs::path tmp = fs::temp_directory_path() / "stamp_acceptance_c8";
  fs::create_directories(tmp);
  struct Case {
    std::string golden, args;
  };
  const std::vector<Case> cases = {
      {"test_quadratic_strong.tsv", "test --manifest " + man + " --seed 42 --replicates 49"},
      {"test_linear_weak.tsv", "test --manifest " + man + " --statistic linear --null weak --seed 42 --replicates 49"},
      {"test_quadratic_weak.json", "test --manifest " + man + " --null weak --format json --seed 42 --replicates 49"},
      {"compare.tsv", "compare --manifest " + man + " --seed 42 --replicates 49"},
      {"simulate.tsv", "simulate " + data + "/smoke_design.json"},
  };
  int total = 0, same = 0;
  std::string bad;
  for (const auto& c : cases) {
    const std::string want = slurp(data + "/golden/" + c.golden);
    for (const char* jobs : {"1", "1", "4"}) {
      const fs::path out = tmp / c.golden;
      const std::string cmd = bin + " " + c.args + " --jobs " + jobs + " --quiet --out " + out.string();
      ++total;
      if (std::system(cmd.c_str()) == 0 && slurp(out) == want && !want.empty()) {
        ++same;
      } else {
        bad += " " + c.golden + "(jobs " + jobs + ")";
      }
    }
  }
  fs::remove_all(tmp);
  return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                             " runs byte-identical to the goldens (two runs at --jobs 1, one at --jobs 4)" +
                             (bad.empty() ? "" : "; differing:" + bad)};
}

// 9. posterior formula and threshold rule
Outcome criterion9() {
  const double direct = posterior_probability(0.2, 1.0, 4.0);
  const std::vector<bool> cls = classify(std::vector<double>{1.00, 0.61, 0.36}, 0.5);
  const bool ok = direct == 0.5 && cls == std::vector<bool>{true, true, false};
  return {ok, "p=" + fmt("%.17g", direct) + " for pi=0.2, ratio 4; classes (1.00, 0.61, 0.36) at 0.5 -> (" +
                  (cls[0] ? "yes" : "no") + ", " + (cls[1] ? "yes" : "no") + ", " + (cls[2] ? "yes" : "no") + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Outcome()>> all = {{1, criterion1}, {2, criterion2}, {3, criterion3},
                                                       {4, criterion4}, {5, criterion5}, {6, criterion6},
                                                       {7, criterion7}, {8, criterion8}, {9, criterion9}};
  std::vector<int> pick;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) {
      pick.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: stamp_acceptance [--criterion N]...\n";
      return 2;
    }
  }
  if (pick.empty())
    for (const auto& [k, _] : all) pick.push_back(k);

  bool ok = true;
  for (int k : pick) {
    const auto it = all.find(k);
    if (it == all.end()) {
      std::cerr << "unknown criterion " << k << "\n";
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << k << " " << (o.pass ? "PASS" : "FAIL") << " " << o.detail << " [" << fmt("%.1f", secs)
              << " s]" << std::endl;
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
