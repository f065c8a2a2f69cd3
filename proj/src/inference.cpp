#include "stamp/inference.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include <gsl/gsl_cdf.h>

#include "stamp/errors.hpp"
#include "stamp/rng.hpp"

namespace stamp {

TauMoments estimate_tau_moments(std::span<const StudyRegionData> studies) {
  if (studies.empty()) throw ValidationError("estimate_tau_moments needs at least one study");
  double num1 = 0, den1 = 0;
  for (const auto& d : studies) {
    for (Eigen::Index j = 0; j < d.p(); ++j) {
      const double b = d.beta_hat[j], s2 = d.se[j] * d.se[j];
      if (!std::isfinite(b) || !std::isfinite(s2) || s2 <= 0) continue;
      num1 += b * b / s2 - 1.0;
      den1 += 1.0 / s2;
    }
  }
  TauMoments t;
  if (den1 <= 0) return t;
  t.e_tau = std::max(0.0, num1 / den1);

  double num2 = 0, den2 = 0;
  for (const auto& d : studies) {
    for (Eigen::Index j = 0; j < d.p(); ++j) {
      const double b = d.beta_hat[j], s2 = d.se[j] * d.se[j];
      if (!std::isfinite(b) || !std::isfinite(s2) || s2 <= 0) continue;
      const double b2 = b * b / s2;
      num2 += b2 * b2 - 1.0 - 6.0 * t.e_tau / s2;
      den2 += 3.0 / (s2 * s2);
    }
  }
  t.e_tau2 = std::max(0.0, num2 / den2);
  t.v_tau = std::max(0.0, t.e_tau2 - t.e_tau * t.e_tau);
  return t;
}

std::optional<InverseGamma> inverse_gamma_from_moments(double mean, double variance) {
  if (!(mean > 0.0) || !(variance > 0.0)) return std::nullopt;
  InverseGamma ig;
  ig.shape = 2.0 + mean * mean / variance;
  ig.scale = mean * (ig.shape - 1.0);
  return ig;
}

BootstrapContext::BootstrapContext(std::vector<StudyEffects> studies, MixtureSpec spec)
    : studies_(std::move(studies)), spec_(spec) {
  observed_.reserve(studies_.size());
  chol_.reserve(studies_.size());
  for (std::size_t i = 0; i < studies_.size(); ++i) {
    const StudyEffects& s = studies_[i];
    RegionStatistic stat = spec_.kind == StatKind::Linear ? t_linear(s.effects, s.study_id)
                                                          : t_quadratic(s.effects, s.study_id);
    stat.is_control = spec_.null_regime == NullRegime::Weak && spec_.control_index && *spec_.control_index == i;
    observed_.push_back(std::move(stat));
    Eigen::LLT<MatrixXd> llt(s.effects.sigma_star);
    if (llt.info() != Eigen::Success) throw NumericalError("study '" + s.study_id + "': sigma_star is not positive definite");
    chol_.push_back(MatrixXd(llt.matrixL()));
  }
  validate(spec_, observed_);
}

std::vector<RegionStatistic> BootstrapContext::draw(const NullGenerator& gen, std::uint64_t seed,
                                                    std::size_t replicate, int attempt) const {
  if (gen.kind == GeneratorKind::WeakLinear && spec_.kind != StatKind::Linear) {
    throw ValidationError("the direct T^L generator only applies to the linear statistic");
  }
  std::optional<InverseGamma> ig;
  if (gen.kind == GeneratorKind::WeakQuadratic) ig = inverse_gamma_from_moments(gen.e_tau, gen.e_tau2 - gen.e_tau * gen.e_tau);

  std::vector<RegionStatistic> out = observed_;
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < studies_.size(); ++i) {
    const RotatedEffects& e = studies_[i].effects;
    std::mt19937_64 rng = make_stream(seed, {static_cast<std::uint64_t>(replicate), static_cast<std::uint64_t>(attempt),
                                             fnv1a64(studies_[i].study_id)});
    normal.reset();
    RegionStatistic& st = out[i];

    if (gen.kind == GeneratorKind::WeakLinear) {
      const Geometry& g = st.geometry;
      const double var = (g.ones1 + gen.e_tau * g.ones2) / g.diag_sum1;
      st.value = st.raw = std::sqrt(var) * normal(rng);
      continue;
    }

    VectorXd beta(e.p);
    if (gen.kind == GeneratorKind::WeakQuadratic && gen.e_tau > 0.0) {
      VectorXd tau(e.p);
      if (ig) {
        std::gamma_distribution<double> gamma(ig->shape, 1.0 / ig->scale);
        for (Eigen::Index j = 0; j < e.p; ++j) tau[j] = 1.0 / gamma(rng);
      } else {
        tau.setConstant(gen.e_tau);
      }
      MatrixXd cov = e.sigma_star;
      cov.diagonal() += tau;
      Eigen::LLT<MatrixXd> llt(cov);
      for (Eigen::Index j = 0; j < e.p; ++j) beta[j] = normal(rng);
      beta = llt.matrixL() * beta;
    } else {
      for (Eigen::Index j = 0; j < e.p; ++j) beta[j] = normal(rng);
      beta = chol_[i].triangularView<Eigen::Lower>() * beta;
    }

    const VectorXd u = e.precision * beta;
    if (spec_.kind == StatKind::Linear) {
      st.value = st.raw = u.sum() / std::sqrt(st.geometry.diag_sum1);
    } else {
      st.raw = u.squaredNorm();
      st.value = st.raw / std::sqrt(static_cast<double>(e.p));
    }
  }
  return out;
}

double bootstrap_pvalue(double lrt_observed, std::span<const double> lrts) {
  if (lrts.empty()) throw ValidationError("bootstrap needs at least one replicate");
  std::size_t hits = 0;
  for (double l : lrts) hits += lrt_observed <= l ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(lrts.size());
}

double bootstrap_pvalue_adjusted(double lrt_observed, std::span<const double> lrts) {
  if (lrts.empty()) throw ValidationError("bootstrap needs at least one replicate");
  std::size_t hits = 0;
  for (double l : lrts) hits += lrt_observed <= l ? 1 : 0;
  return static_cast<double>(hits + 1) / static_cast<double>(lrts.size() + 1);
}

BootstrapResult run_bootstrap(const BootstrapContext& ctx, const NullGenerator& gen, double lrt_observed,
                              const BootstrapConfig& config) {
  if (config.replicates < 1) throw ValidationError("bootstrap replicates must be >= 1");
  const auto R = static_cast<std::size_t>(config.replicates);

  BootstrapResult out;
  out.replicate_lrts.assign(R, 0.0);
  out.degenerate_heterogeneity =
      gen.kind == GeneratorKind::WeakQuadratic && gen.e_tau > 0 && gen.e_tau2 <= gen.e_tau * gen.e_tau;

  std::atomic<std::size_t> next{0};
  std::atomic<int> nonconverged{0}, redrawn{0}, failed{0}, done{0};
  std::mutex progress_mutex;
  const int step = std::max(1, config.replicates / 10);

  const auto worker = [&] {
    for (std::size_t r = next++; r < R; r = next++) {
      double lrt = std::numeric_limits<double>::infinity();
      for (int attempt = 0; attempt < 2; ++attempt) {
        try {
          const std::vector<RegionStatistic> stats = ctx.draw(gen, config.seed, r, attempt);
          FitOptions opt;
          opt.restarts = config.restarts;
          opt.seed = make_stream(config.seed, {r, static_cast<std::uint64_t>(attempt), 0x6669u})();
          if (gen.kind == GeneratorKind::WeakQuadratic) {
            opt.e_tau_hint = gen.e_tau;
            opt.var_tau_hint = std::max(0.0, gen.e_tau2 - gen.e_tau * gen.e_tau);
          }
          const MixtureFit f = fit(stats, ctx.spec(), Hypothesis::Mixture, opt);
          if (!std::isfinite(f.lrt())) throw NumericalError("non-finite LRT");
          if (!f.converged) ++nonconverged;
          lrt = f.lrt();
          break;
        } catch (const NumericalError&) {
          if (attempt == 0) ++redrawn;
          else ++failed;
        }
      }
      out.replicate_lrts[r] = lrt;
      const int d = ++done;
      if (config.progress && (d % step == 0 || d == config.replicates)) {
        std::lock_guard lock(progress_mutex);
        config.progress(d, config.replicates);
      }
    }
  };

  const int jobs = std::clamp(config.jobs, 1, config.replicates);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  out.n_nonconverged = nonconverged;
  out.n_redrawn = redrawn;
  out.n_failed = failed;
  out.p_value = bootstrap_pvalue(lrt_observed, out.replicate_lrts);
  out.p_value_adjusted = bootstrap_pvalue_adjusted(lrt_observed, out.replicate_lrts);
  return out;
}

BootstrapResult bootstrap_strong(const BootstrapContext& ctx, double lrt_observed, const BootstrapConfig& config) {
  if (ctx.spec().null_regime != NullRegime::Strong) throw ValidationError("strong-null bootstrap needs a strong-null spec");
  return run_bootstrap(ctx, {GeneratorKind::Strong, 0, 0}, lrt_observed, config);
}

BootstrapResult bootstrap_weak_linear(const BootstrapContext& ctx, double e_tau, double lrt_observed,
                                      const BootstrapConfig& config) {
  if (ctx.spec().kind != StatKind::Linear) throw ValidationError("weak linear bootstrap needs the linear statistic");
  return run_bootstrap(ctx, {GeneratorKind::WeakLinear, std::max(0.0, e_tau), 0}, lrt_observed, config);
}

BootstrapResult bootstrap_weak_quadratic(const BootstrapContext& ctx, const TauMoments& tau, double lrt_observed,
                                         const BootstrapConfig& config) {
  if (ctx.spec().kind != StatKind::Quadratic) throw ValidationError("weak quadratic bootstrap needs the quadratic statistic");
  return run_bootstrap(ctx, {GeneratorKind::WeakQuadratic, tau.e_tau, tau.e_tau2}, lrt_observed, config);
}

TestResult het_meta_linear(std::span<const RegionStatistic> stats) {
  double num = 0, den = 0;
  for (const auto& s : stats) {
    const double v0 = s.geometry.ones1 / s.geometry.diag_sum1;
    num += s.value / v0;
    den += 1.0 / v0;
  }
  TestResult r;
  r.statistic = num / std::sqrt(den);
  r.p_value = 2.0 * gsl_cdf_ugaussian_Q(std::abs(r.statistic));
  return r;
}

TestResult het_meta_quadratic(std::span<const RegionStatistic> stats) {
  double t = 0, mean = 0, var = 0;
  for (const auto& s : stats) {
    t += s.raw;
    mean += s.geometry.trace1;
    var += 2.0 * s.geometry.trace2;
  }
  return {t, gsl_cdf_ugaussian_Q((t - mean) / std::sqrt(var))};
}

TestResult hotelling_meta(std::span<const RotatedEffects> effects) {
  double t = 0;
  double df = 0;
  for (const auto& e : effects) {
    t += e.beta_star.dot(e.precision * e.beta_star);
    df += static_cast<double>(e.p);
  }
  return {t, gsl_cdf_chisq_Q(t, df)};
}

double single_study_pvalue(const RegionStatistic& s) {
  const Geometry& g = s.geometry;
  if (s.kind == StatKind::Linear) {
    return 2.0 * gsl_cdf_ugaussian_Q(std::abs(s.value) / std::sqrt(g.ones1 / g.diag_sum1));
  }
  return gsl_cdf_ugaussian_Q((s.raw - g.trace1) / std::sqrt(2.0 * g.trace2));
}

std::vector<StudyEffects> rotate_all(std::span<const StudyRegionData> studies) {
  std::vector<StudyEffects> out;
  out.reserve(studies.size());
  for (const auto& d : studies) out.push_back({d.study_id, d.is_control, rotate(d)});
  return out;
}

std::size_t find_control(std::span<const StudyRegionData> studies) {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < studies.size(); ++i) {
    if (!studies[i].is_control) continue;
    if (found) throw ValidationError("more than one study is flagged as control; pick one with --control");
    found = i;
  }
  if (!found) throw ValidationError("the weak null model needs a control study (--control)");
  return *found;
}

StampResult run_stamp(std::span<const StudyRegionData> studies, const StampOptions& options) {
  std::vector<StudyRegionData> cleaned;
  cleaned.reserve(studies.size());
  for (const auto& d : studies) cleaned.push_back(drop_nonfinite(d));
  const std::vector<StudyEffects> rotated = rotate_all(cleaned);
  return run_stamp(cleaned, rotated, options);
}

StampResult run_stamp(std::span<const StudyRegionData> studies, std::span<const StudyEffects> rotated,
                      const StampOptions& options) {
  if (studies.size() != rotated.size()) throw ValidationError("studies and rotated effects differ in length");
  if (!(options.threshold > 0.0 && options.threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");

  MixtureSpec spec{options.kind, options.null_regime, std::nullopt};
  if (options.null_regime == NullRegime::Weak) spec.control_index = find_control(studies);

  const BootstrapContext ctx(std::vector<StudyEffects>(rotated.begin(), rotated.end()), spec);

  StampResult res;
  res.stats = ctx.observed();
  for (const auto& d : studies) {
    res.study_ids.push_back(d.study_id);
    res.n_snps.push_back(d.p());
  }

  FitOptions fo;
  fo.restarts = options.restarts;
  fo.seed = make_stream(options.bootstrap.seed, {0x0b5e7u})();
  if (options.null_regime == NullRegime::Weak) {
    res.tau_hat = estimate_tau_moments(studies);
    if (options.kind == StatKind::Quadratic) {
      fo.e_tau_hint = res.tau_hat->e_tau;
      fo.var_tau_hint = res.tau_hat->v_tau;
    }
  }

  res.fit = fit(res.stats, spec, Hypothesis::Mixture, fo);
  res.lrt_observed = res.fit.lrt();
  res.posteriors = posteriors(res.stats, res.fit, spec);
  res.associated = classify(res.posteriors, options.threshold);
  for (const auto& s : res.stats) res.single_study_p.push_back(single_study_pvalue(s));

  NullGenerator gen;
  if (options.null_regime == NullRegime::Strong) {
    gen = {GeneratorKind::Strong, 0, 0};
  } else if (options.kind == StatKind::Linear) {
    // T^L is generated directly with E(tau) estimated from the linear
    // statistics themselves (single-density fit).
    gen = {GeneratorKind::WeakLinear, res.fit.single_params.null.e_tau, 0};
  } else {
    gen = {GeneratorKind::WeakQuadratic, res.tau_hat->e_tau, res.tau_hat->e_tau2};
  }
  res.bootstrap = run_bootstrap(ctx, gen, res.lrt_observed, options.bootstrap);
  res.p_value = res.bootstrap.p_value;
  res.p_value_adjusted = res.bootstrap.p_value_adjusted;
  return res;
}

}  // namespace stamp
