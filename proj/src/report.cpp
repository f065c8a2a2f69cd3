#include "stamp/report.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "json.hpp"

namespace stamp::report {

using ojson = nlohmann::ordered_json;

std::string number(double x) {
  if (std::isnan(x)) return "NA";
  if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x == 0.0 ? 0.0 : x);  // no "-0"
  return buf;
}

std::string pvalue(double p) {
  if (!(p > 0.0) || p >= 1e-4) return number(p);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5E", p);
  std::string s(buf);
  const std::size_t e = s.find('E');
  std::string mant = s.substr(0, e);
  while (mant.back() == '0') mant.pop_back();
  if (mant.back() == '.') mant.pop_back();
  return mant + s.substr(e);
}

std::string header_line(const RunInfo& info) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(info.config_hash));
  return std::string("# stamp ") + kVersion + " command=" + info.command + " seed=" + std::to_string(info.seed) +
         " config=" + hash;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? number(*v) : "NA"; }

ojson jopt(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

ojson jnum(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

ojson jheader(const RunInfo& info) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(info.config_hash));
  return {{"tool", "stamp"}, {"version", kVersion}, {"command", info.command}, {"seed", info.seed}, {"config", hash}};
}

struct Global {
  std::string name;
  std::optional<double> value;
  bool is_p = false;
};

std::vector<Global> globals(const StampOptions& o, const StampResult& r) {
  const SuperPopulationMoments& m = r.fit.moments;
  std::vector<Global> g{
      {"lrt", r.lrt_observed},
      {"p_value", r.p_value, true},
      {"p_value_adjusted", r.p_value_adjusted, true},
      {"pi", r.fit.pi},
      {"e_mu", m.e_mu},
      {"var_mu", m.var_mu},
  };
  if (o.kind == StatKind::Quadratic) {
    g.push_back({"skew_mu", m.skew_mu});
    g.push_back({"kurt_mu", m.kurt_mu});
  }
  if (o.null_regime == NullRegime::Weak) {
    g.push_back({"e_tau", r.fit.null_moments.e_tau});
    if (o.kind == StatKind::Quadratic) g.push_back({"var_tau", r.fit.null_moments.var_tau});
  }
  g.push_back({"e_psi", m.e_psi()});
  if (o.kind == StatKind::Quadratic) g.push_back({"e_zeta", m.e_zeta()});
  if (r.tau_hat) {
    g.push_back({"moment_e_tau", r.tau_hat->e_tau});
    g.push_back({"moment_e_tau2", r.tau_hat->e_tau2});
  }
  g.push_back({"loglik_mixture", r.fit.loglik_mixture});
  g.push_back({"loglik_single", r.fit.loglik_single});
  g.push_back({"converged", r.fit.converged ? 1.0 : 0.0});
  g.push_back({"bootstrap_replicates", static_cast<double>(r.bootstrap.replicate_lrts.size())});
  g.push_back({"bootstrap_failed", static_cast<double>(r.bootstrap.n_failed)});
  return g;
}

}  // namespace

void write_test(std::ostream& out, Format format, const RunInfo& info, const StampOptions& o, const StampResult& r) {
  const std::vector<Global> g = globals(o, r);
  if (format == Format::Json) {
    ojson j = jheader(info);
    j["statistic"] = to_string(o.kind);
    j["null"] = to_string(o.null_regime);
    j["threshold"] = o.threshold;
    ojson studies = ojson::array();
    for (std::size_t i = 0; i < r.study_ids.size(); ++i) {
      studies.push_back({{"study", r.study_ids[i]},
                         {"n_snps", r.n_snps[i]},
                         {"statistic", jnum(r.stats[i].value)},
                         {"posterior", jnum(r.posteriors[i])},
                         {"associated", static_cast<bool>(r.associated[i])},
                         {"single_study_p", jnum(r.single_study_p[i])}});
    }
    j["studies"] = studies;
    ojson glob = ojson::object();
    for (const auto& e : g) glob[e.name] = jopt(e.value);
    j["global"] = glob;
    out << j.dump(2) << '\n';
    return;
  }
  out << header_line(info) << '\n';
  out << "# statistic=" << to_string(o.kind) << " null=" << to_string(o.null_regime)
      << " replicates=" << o.bootstrap.replicates << " threshold=" << number(o.threshold) << '\n';
  out << "study\tn_snps\tstatistic\tposterior\tassociated\tsingle_study_p\n";
  for (std::size_t i = 0; i < r.study_ids.size(); ++i) {
    out << r.study_ids[i] << '\t' << r.n_snps[i] << '\t' << number(r.stats[i].value) << '\t' << number(r.posteriors[i])
        << '\t' << (r.associated[i] ? "yes" : "no") << '\t' << pvalue(r.single_study_p[i]) << '\n';
  }
  out << '\n' << "quantity\tvalue\n";
  for (const auto& e : g) out << e.name << '\t' << (e.is_p && e.value ? pvalue(*e.value) : opt(e.value)) << '\n';
}

void write_compare(std::ostream& out, Format format, const RunInfo& info, const std::vector<CompareRow>& rows) {
  if (format == Format::Json) {
    ojson j = jheader(info);
    ojson arr = ojson::array();
    for (const auto& r : rows) arr.push_back({{"test", r.test}, {"statistic", jopt(r.statistic)}, {"p_value", jopt(r.p_value)}});
    j["tests"] = arr;
    out << j.dump(2) << '\n';
    return;
  }
  out << header_line(info) << '\n';
  out << "test\tstatistic\tp_value\n";
  for (const auto& r : rows) {
    out << r.test << '\t' << opt(r.statistic) << '\t' << (r.p_value ? pvalue(*r.p_value) : "NA") << '\n';
  }
}

void write_simulation(std::ostream& out, Format format, const RunInfo& info, const sim::SimulationDesign& d,
                      const sim::ExperimentResult& res) {
  const int used = d.replications - res.n_failed;
  if (format == Format::Json) {
    ojson j = jheader(info);
    j["replications"] = d.replications;
    j["failed_replications"] = res.n_failed;
    ojson arr = ojson::array();
    for (const auto& r : res.rows) {
      arr.push_back({{"test", sim::to_string(r.test)},
                     {"S_C", r.n_causal_studies},
                     {"regime", to_string(r.regime)},
                     {"rejection_rate", jnum(r.rejection_rate)},
                     {"mc_se", jnum(r.mc_se)},
                     {"mean_posterior_causal", jopt(r.mean_posterior_causal)},
                     {"mean_posterior_null", jopt(r.mean_posterior_null)},
                     {"mean_auc", jopt(r.mean_auc)}});
    }
    j["results"] = arr;
    out << j.dump(2) << '\n';
    return;
  }
  out << header_line(info) << '\n';
  out << "# replications=" << d.replications << " used=" << used << " failed=" << res.n_failed
      << " alpha=" << number(d.alpha) << '\n';
  out << "test\tS_C\tregime\trejection_rate\tmc_se\tmean_posterior_causal\tmean_posterior_null\n";
  for (const auto& r : res.rows) {
    out << sim::to_string(r.test) << '\t' << r.n_causal_studies << '\t' << to_string(r.regime) << '\t'
        << number(r.rejection_rate) << '\t' << number(r.mc_se) << '\t' << opt(r.mean_posterior_causal) << '\t'
        << opt(r.mean_posterior_null) << '\n';
  }
}

}  // namespace stamp::report
