#include "stamp/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "stamp/errors.hpp"

namespace stamp {

const char* to_string(NullRegime regime) { return regime == NullRegime::Strong ? "strong" : "weak"; }

double normal_logpdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + d * d / variance);
}

void validate(const MixtureSpec& spec, std::span<const RegionStatistic> stats) {
  if (stats.empty()) throw ValidationError("no study statistics to fit");
  for (const auto& s : stats) {
    if (s.kind != spec.kind) throw ValidationError("statistic kind does not match the mixture spec");
    if (s.p < 1 || !std::isfinite(s.value)) throw ValidationError("study '" + s.study_id + "' has an invalid statistic");
  }
  if (spec.null_regime == NullRegime::Weak) {
    if (!spec.control_index) throw ValidationError("the weak null model requires a negative-control study");
    if (*spec.control_index >= stats.size()) throw ValidationError("control study index out of range");
    if (!stats[*spec.control_index].is_control) {
      throw ValidationError("study '" + stats[*spec.control_index].study_id + "' is not flagged as a control");
    }
  }
}

namespace {

constexpr double kLogClamp = 40.0;
constexpr double kBadCost = 1e300;

enum class Slot { Pi, EMu, Psi, VarMu, Skew, Excess4, NullTau, NullVarTau };

bool is_log_slot(Slot s) { return s != Slot::Pi && s != Slot::Skew; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

struct Layout {
  std::vector<Slot> slots;
  StatKind kind{};
  NullRegime regime{};
  bool mixture = false;
  double var_scale = 1;

  [[nodiscard]] std::size_t dim() const { return slots.size(); }

  [[nodiscard]] MixtureParams map(const double* theta) const {
    MixtureParams p;
    double skew_unit = 0;
    double excess4 = 0;
    const double mean_scale = std::sqrt(var_scale);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const double th = std::clamp(theta[i], -kLogClamp, kLogClamp);
      switch (slots[i]) {
        case Slot::Pi: p.pi = kPiClip + (1.0 - 2.0 * kPiClip) * sigmoid(theta[i]); break;
        // signed for T^L; for Q the sign is absorbed by the free skew sign
        case Slot::EMu: p.alt.e_mu = mean_scale * (kind == StatKind::Linear ? th : std::exp(th)); break;
        case Slot::Psi:
        case Slot::VarMu: p.alt.var_mu = var_scale * std::exp(th); break;
        case Slot::Skew: skew_unit = std::tanh(theta[i]); break;
        case Slot::Excess4: excess4 = var_scale * var_scale * std::exp(th); break;
        case Slot::NullTau: p.null.e_tau = var_scale * std::exp(th); break;
        case Slot::NullVarTau: p.null.var_tau = var_scale * var_scale * std::exp(th); break;
      }
    }
    if (mixture && kind == StatKind::Quadratic) {
      // Realizable fourth/third central moments by construction:
      // E(mu_c^4) >= E(mu_c^2)^2 and E(mu_c^3)^2 <= E(mu_c^2){E(mu_c^4) - E(mu_c^2)^2}.
      p.alt.kurt_mu = p.alt.var_mu * p.alt.var_mu + excess4;
      p.alt.skew_mu = skew_unit * std::sqrt(p.alt.var_mu * excess4);
    }
    if (regime == NullRegime::Weak) {
      p.alt.e_tau = p.null.e_tau;
      p.alt.var_tau = p.null.var_tau;
    }
    if (!mixture) p.pi = 0;
    return p;
  }
};

Layout make_layout(StatKind kind, NullRegime regime, Hypothesis hyp, bool aliased, double var_scale) {
  Layout l;
  l.kind = kind;
  l.regime = regime;
  l.mixture = hyp == Hypothesis::Mixture;
  l.var_scale = var_scale;
  const bool quad = kind == StatKind::Quadratic;
  if (!l.mixture) {
    if (regime == NullRegime::Weak) {
      l.slots.push_back(Slot::NullTau);
      if (quad) l.slots.push_back(Slot::NullVarTau);
    }
    return l;
  }
  l.slots.push_back(Slot::Pi);
  if (!(quad && aliased)) l.slots.push_back(Slot::EMu);
  if (regime == NullRegime::Strong) {
    l.slots.push_back(Slot::Psi);
    if (quad) {
      l.slots.push_back(Slot::Skew);
      l.slots.push_back(Slot::Excess4);
    }
  } else {
    l.slots.push_back(Slot::VarMu);
    if (quad) {
      l.slots.push_back(Slot::Skew);
      l.slots.push_back(Slot::Excess4);
    }
    l.slots.push_back(Slot::NullTau);
    if (quad) l.slots.push_back(Slot::NullVarTau);
  }
  return l;
}

// Likelihood over statistics in a fixed (canonical) order.
class Evaluator {
 public:
  Evaluator(std::span<const RegionStatistic> stats, NullRegime regime) : stats_(stats), regime_(regime) {
    strong_.reserve(stats.size());
    for (const auto& s : stats) strong_.push_back(component_moments(s, MomentValues{}));
  }

  // NaN when a component variance is not positive.
  [[nodiscard]] double operator()(const MixtureParams& p, bool mixture) const noexcept {
    double total = 0;
    const double log_pi = std::log(p.pi);
    const double log_1mpi = std::log1p(-p.pi);
    for (std::size_t i = 0; i < stats_.size(); ++i) {
      const RegionStatistic& s = stats_[i];
      const StatMoments m0 = regime_ == NullRegime::Strong ? strong_[i] : component_moments(s, p.null);
      if (!(m0.variance > 0) || !std::isfinite(m0.variance)) return std::numeric_limits<double>::quiet_NaN();
      const double l0 = normal_logpdf(s.value, m0.mean, std::max(m0.variance, kVarianceFloor));
      if (!mixture || s.is_control) {
        total += l0;
        continue;
      }
      const StatMoments m1 = component_moments(s, p.alt);
      if (!(m1.variance > 0) || !std::isfinite(m1.variance)) return std::numeric_limits<double>::quiet_NaN();
      const double l1 = normal_logpdf(s.value, m1.mean, std::max(m1.variance, kVarianceFloor));
      const double a = log_1mpi + l0;
      const double b = log_pi + l1;
      const double hi = std::max(a, b);
      total += hi + std::log1p(std::exp(std::min(a, b) - hi));
    }
    return total;
  }

  [[nodiscard]] StatMoments null_moments(std::size_t i, const MixtureParams& p) const {
    return regime_ == NullRegime::Strong ? strong_[i] : component_moments(stats_[i], p.null);
  }

 private:
  std::span<const RegionStatistic> stats_;
  NullRegime regime_;
  std::vector<StatMoments> strong_;
};

struct NmResult {
  std::vector<double> theta;
  double cost = kBadCost;
  bool converged = false;
  std::vector<double> trace;
};

struct GslObjective {
  const std::function<double(const double*)>* f;
};

double gsl_trampoline(const gsl_vector* x, void* params) {
  const auto* obj = static_cast<const GslObjective*>(params);
  const double v = (*obj->f)(x->data);
  return std::isfinite(v) ? v : kBadCost;
}

NmResult nelder_mead(const std::function<double(const double*)>& f, const std::vector<double>& x0,
                     const std::vector<double>& step, bool record_trace) {
  static const bool handler_off = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  (void)handler_off;

  const std::size_t n = x0.size();
  NmResult out;
  GslObjective obj{&f};
  gsl_multimin_function fn{&gsl_trampoline, n, &obj};

  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* ss = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) {
    gsl_vector_set(x, i, x0[i]);
    gsl_vector_set(ss, i, step[i]);
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(s, &fn, x, ss);

  const int max_iter = 150 + 250 * static_cast<int>(n);
  // Flat directions (e.g. alternative moments when pi -> 0) keep the simplex
  // wide; a long run without improvement of the best value also counts.
  const int plateau = 25 * static_cast<int>(n);
  double last_best = std::numeric_limits<double>::infinity();
  int since_improved = 0;
  for (int it = 0; it < max_iter; ++it) {
    if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
    if (record_trace) out.trace.push_back(-s->fval);
    const double size = gsl_multimin_fminimizer_size(s);
    if (gsl_multimin_test_size(size, 1e-4) == GSL_SUCCESS) {
      out.converged = true;
      break;
    }
    if (s->fval < last_best - 1e-10) {
      last_best = s->fval;
      since_improved = 0;
    } else if (++since_improved >= plateau) {
      out.converged = true;
      break;
    }
  }
  out.cost = s->fval;
  out.theta.assign(s->x->data, s->x->data + n);
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(ss);
  gsl_vector_free(x);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double log_scaled(double x, double scale) { return std::log(std::max(x, 1e-8 * scale) / scale); }

// Method-of-moments starting point expressed in the layout's coordinates.
std::vector<double> moment_start(const Layout& layout, std::span<const RegionStatistic> stats,
                                 const Evaluator& eval, const FitOptions& opt) {
  const double scale = layout.var_scale;
  const bool quad = layout.kind == StatKind::Quadratic;

  // weak-null nuisance
  double tau = 0;
  double var_tau = 0;
  if (layout.regime == NullRegime::Weak) {
    double num = 0, den = 0;
    for (const auto& s : stats) {
      const Geometry& g = s.geometry;
      if (quad) {
        num += s.raw - g.trace1;
        den += g.trace2;
      } else {
        num += s.value * s.value * g.diag_sum1 - g.ones1;
        den += g.ones2;
      }
    }
    tau = opt.e_tau_hint.value_or(std::max(0.0, num / den));
    var_tau = opt.var_tau_hint.value_or(0.25 * tau * tau);
  }

  MixtureParams nullp;
  nullp.null.e_tau = tau;
  nullp.null.var_tau = var_tau;

  // standardized deviations from the null component
  std::vector<std::pair<double, std::size_t>> z;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (stats[i].is_control && layout.regime == NullRegime::Weak) continue;
    const StatMoments m0 = eval.null_moments(i, nullp);
    z.emplace_back((stats[i].value - m0.mean) / std::sqrt(std::max(m0.variance, kVarianceFloor)), i);
  }
  const double n = static_cast<double>(std::max<std::size_t>(z.size(), 1));
  double pi0 = static_cast<double>(std::count_if(z.begin(), z.end(), [](auto& e) { return std::abs(e.first) > 2.0; })) / n;
  pi0 = std::clamp(pi0, 0.05, 0.95);

  if (!quad) {
    for (auto& e : z) e.first = std::abs(e.first);
  }
  std::sort(z.begin(), z.end(), std::greater<>());
  std::size_t n_sig = static_cast<std::size_t>(std::count_if(z.begin(), z.end(), [](auto& e) { return e.first > 2.0; }));
  n_sig = std::clamp<std::size_t>(n_sig, 1, std::max<std::size_t>(z.size(), 1));

  double e_mu = 0, var_mu = 0;
  if (!z.empty()) {
    if (quad) {
      double excess = 0, ratio = 0;
      for (std::size_t k = 0; k < n_sig; ++k) {
        const RegionStatistic& s = stats[z[k].second];
        const Geometry& g = s.geometry;
        excess += (s.raw - g.trace1 - tau * g.trace2) / g.trace2;
        ratio += g.ones2 / g.trace2;
      }
      excess = std::max(excess / static_cast<double>(n_sig), 0.0);
      ratio /= static_cast<double>(n_sig);
      var_mu = 0.5 * excess;
      e_mu = std::sqrt(0.5 * excess / ratio);
    } else {
      double mean = 0;
      for (std::size_t k = 0; k < n_sig; ++k) {
        const RegionStatistic& s = stats[z[k].second];
        mean += s.value * std::sqrt(s.geometry.diag_sum1) / s.geometry.ones1;
      }
      e_mu = mean / static_cast<double>(n_sig);
      double ex = 0;
      for (std::size_t k = 0; k < n_sig; ++k) {
        const RegionStatistic& s = stats[z[k].second];
        const Geometry& g = s.geometry;
        const double d = s.value - e_mu * g.ones1 / std::sqrt(g.diag_sum1);
        ex += (d * d * g.diag_sum1 - g.ones1 - tau * g.ones2) / g.ones2;
      }
      var_mu = std::max(ex / static_cast<double>(n_sig), 0.0);
    }
  }
  var_mu = std::max(var_mu, 1e-2 * scale);

  std::vector<double> theta;
  for (Slot slot : layout.slots) {
    switch (slot) {
      case Slot::Pi: theta.push_back(logit(pi0)); break;
      case Slot::EMu: theta.push_back(quad ? log_scaled(e_mu, std::sqrt(scale)) : e_mu / std::sqrt(scale)); break;
      case Slot::Psi:
      case Slot::VarMu: theta.push_back(log_scaled(var_mu, scale)); break;
      case Slot::Skew: theta.push_back(0.0); break;
      case Slot::Excess4: theta.push_back(log_scaled(2.0 * var_mu * var_mu, scale * scale)); break;
      case Slot::NullTau: theta.push_back(log_scaled(tau, scale)); break;
      case Slot::NullVarTau: theta.push_back(log_scaled(var_tau, scale * scale)); break;
    }
  }
  return theta;
}

struct OptimResult {
  MixtureParams params;
  double loglik = 0;
  bool converged = true;
  int restarts = 0;
  std::vector<double> trace;
};

OptimResult optimize(const Layout& layout, std::span<const RegionStatistic> stats, const Evaluator& eval,
                     const FitOptions& opt, std::mt19937_64& rng) {
  OptimResult best;
  if (layout.dim() == 0) {
    best.params = layout.map(nullptr);
    best.loglik = eval(best.params, layout.mixture);
    return best;
  }

  const std::function<double(const double*)> cost = [&](const double* th) {
    const double ll = eval(layout.map(th), layout.mixture);
    return std::isfinite(ll) ? -ll : kBadCost;
  };

  const std::vector<double> start = moment_start(layout, stats, eval, opt);
  std::vector<double> step;
  for (Slot s : layout.slots) step.push_back(s == Slot::Skew ? 0.5 : 1.0);

  std::uniform_real_distribution<double> jitter(-3.0, 3.0);
  std::uniform_real_distribution<double> pi_draw(logit(0.05), logit(0.95));
  std::uniform_real_distribution<double> skew_draw(-1.5, 1.5);

  const int restarts = std::max(1, opt.restarts);
  NmResult winner;
  for (int r = 0; r < restarts; ++r) {
    std::vector<double> x0 = start;
    if (r > 0) {
      for (std::size_t i = 0; i < layout.dim(); ++i) {
        const Slot s = layout.slots[i];
        if (s == Slot::Pi) {
          x0[i] = pi_draw(rng);
        } else if (s == Slot::Skew) {
          x0[i] = skew_draw(rng);
        } else if (is_log_slot(s)) {
          x0[i] = std::clamp(start[i] + jitter(rng), -kLogClamp, kLogClamp);
        }
      }
    }
    NmResult res = nelder_mead(cost, x0, step, opt.record_trace);
    if (r == 0 || res.cost < winner.cost) winner = std::move(res);
  }
  best.params = layout.map(winner.theta.data());
  best.loglik = -winner.cost;
  best.converged = winner.converged && winner.cost < kBadCost;
  best.restarts = restarts;
  best.trace = std::move(winner.trace);
  return best;
}

bool same_geometry(const Geometry& a, const Geometry& b) {
  const auto close = [](double x, double y) { return std::abs(x - y) <= 1e-9 * std::max(std::abs(x), std::abs(y)); };
  return close(a.trace1, b.trace1) && close(a.trace2, b.trace2) && close(a.ones2, b.ones2) &&
         close(a.trace2_diag2, b.trace2_diag2);
}

SuperPopulationMoments report_alt(const MixtureParams& p, StatKind kind) {
  SuperPopulationMoments m;
  m.e_mu = p.alt.e_mu;
  m.var_mu = p.alt.var_mu;
  m.e_tau = p.alt.e_tau;
  m.var_tau = p.alt.var_tau;
  if (kind == StatKind::Quadratic) {
    m.skew_mu = p.alt.skew_mu;
    m.kurt_mu = p.alt.kurt_mu;
  }
  return m;
}

}  // namespace

double loglikelihood(std::span<const RegionStatistic> stats, const MixtureSpec& spec, const MixtureParams& params) {
  validate(spec, stats);
  if (!(params.pi >= 0.0 && params.pi <= 1.0)) throw ValidationError("mixing proportion outside [0, 1]");
  std::vector<RegionStatistic> local(stats.begin(), stats.end());
  for (std::size_t i = 0; i < local.size(); ++i) {
    local[i].is_control = spec.null_regime == NullRegime::Weak && *spec.control_index == i;
  }
  const Evaluator eval(local, spec.null_regime);
  const double ll = eval(params, params.pi > 0.0);
  if (!std::isfinite(ll)) throw NonFiniteLikelihood("component variance is not positive for these parameters");
  return ll;
}

MixtureFit fit(std::span<const RegionStatistic> stats, const MixtureSpec& spec, Hypothesis hypothesis,
               const FitOptions& options) {
  validate(spec, stats);

  // Canonical order by study id makes the fit exactly invariant to study
  // permutation.
  std::vector<std::size_t> order(stats.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return stats[a].study_id < stats[b].study_id; });
  std::vector<RegionStatistic> canon;
  canon.reserve(stats.size());
  for (std::size_t i : order) {
    canon.push_back(stats[i]);
    canon.back().is_control = spec.null_regime == NullRegime::Weak && spec.control_index && *spec.control_index == i;
  }

  const bool quad = spec.kind == StatKind::Quadratic;
  if (quad && hypothesis == Hypothesis::Mixture) {
    const bool distinct = std::any_of(canon.begin() + 1, canon.end(),
                                      [&](const RegionStatistic& s) { return !same_geometry(s.geometry, canon[0].geometry); });
    if (canon.size() < 2 || !distinct) {
      throw IdentifiabilityError("the quadratic mixture needs at least two studies with different rotated covariance");
    }
  }
  const bool aliased = quad && std::all_of(canon.begin(), canon.end(),
                                           [](const RegionStatistic& s) { return aliased_geometry(s.geometry); });

  std::vector<double> ratios;
  for (const auto& s : canon) {
    const Geometry& g = s.geometry;
    ratios.push_back(quad ? g.trace1 / g.trace2 : g.ones1 / g.ones2);
  }
  const double var_scale = median(ratios);

  const Evaluator eval(canon, spec.null_regime);
  std::mt19937_64 rng(options.seed);

  MixtureFit out;
  out.aliased = aliased;

  const Layout single_layout = make_layout(spec.kind, spec.null_regime, Hypothesis::SingleDensity, aliased, var_scale);
  OptimResult single = optimize(single_layout, canon, eval, options, rng);
  out.single_params = single.params;
  out.loglik_single = single.loglik;

  if (hypothesis == Hypothesis::SingleDensity) {
    out.params = single.params;
    out.loglik_mixture = single.loglik;
    out.converged = single.converged;
    out.n_restarts_used = single.restarts;
    out.trace = std::move(single.trace);
  } else {
    const Layout mix_layout = make_layout(spec.kind, spec.null_regime, Hypothesis::Mixture, aliased, var_scale);
    OptimResult mix = optimize(mix_layout, canon, eval, options, rng);
    out.converged = mix.converged;
    out.n_restarts_used = mix.restarts;
    out.trace = std::move(mix.trace);
    // no real gain over one density: report the pi = 0 embedding
    const double gain_tol = 1e-9 * std::max(1.0, std::abs(single.loglik));
    if (mix.loglik > single.loglik + gain_tol) {
      out.params = mix.params;
      out.loglik_mixture = mix.loglik;
    } else {
      // the single density is the pi = 0 corner of the mixture
      out.params = mix.params;
      out.params.pi = 0;
      out.params.null = single.params.null;
      if (spec.null_regime == NullRegime::Weak) {
        out.params.alt.e_tau = single.params.null.e_tau;
        out.params.alt.var_tau = single.params.null.var_tau;
      }
      out.loglik_mixture = single.loglik;
    }
    if (out.params.pi < kPiClip + kPiSnap) out.params.pi = 0;
    if (out.params.pi > 1.0 - kPiClip - kPiSnap) out.params.pi = 1;
  }

  out.pi = out.params.pi;
  if (hypothesis == Hypothesis::Mixture) out.moments = report_alt(out.params, spec.kind);
  if (spec.null_regime == NullRegime::Weak) {
    out.null_moments.e_tau = out.params.null.e_tau;
    if (quad) out.null_moments.var_tau = out.params.null.var_tau;
  }
  return out;
}

double posterior_probability(double pi, double phi0, double phi1) {
  const double num = pi * phi1;
  const double den = (1.0 - pi) * phi0 + num;
  return den > 0.0 ? num / den : 0.0;
}

std::vector<double> posteriors(std::span<const RegionStatistic> stats, const MixtureFit& fit, const MixtureSpec& spec) {
  std::vector<double> out(stats.size(), 0.0);
  const MixtureParams& p = fit.params;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (spec.null_regime == NullRegime::Weak && spec.control_index && *spec.control_index == i) continue;
    if (p.pi <= 0.0) continue;
    if (p.pi >= 1.0) {
      out[i] = 1.0;
      continue;
    }
    const RegionStatistic& s = stats[i];
    const StatMoments m0 = component_moments(s, spec.null_regime == NullRegime::Strong ? MomentValues{} : p.null);
    const StatMoments m1 = component_moments(s, p.alt);
    const double l0 = normal_logpdf(s.value, m0.mean, std::max(m0.variance, kVarianceFloor));
    const double l1 = normal_logpdf(s.value, m1.mean, std::max(m1.variance, kVarianceFloor));
    // pi phi1 / {(1-pi) phi0 + pi phi1} = 1 / {1 + (1-pi)/pi * exp(l0 - l1)}
    const double log_odds_null = std::log1p(-p.pi) - std::log(p.pi) + l0 - l1;
    out[i] = log_odds_null > 0 ? std::exp(-log_odds_null) / (1.0 + std::exp(-log_odds_null))
                               : 1.0 / (1.0 + std::exp(log_odds_null));
  }
  return out;
}

std::vector<bool> classify(std::span<const double> posteriors, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("posterior threshold must lie in (0, 1)");
  std::vector<bool> out;
  out.reserve(posteriors.size());
  for (double p : posteriors) out.push_back(p > threshold);
  return out;
}

}  // namespace stamp
