#include "stamp/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "stamp/errors.hpp"
#include "stamp/io.hpp"
#include "stamp/log.hpp"
#include "stamp/report.hpp"
#include "stamp/rng.hpp"

namespace stamp::cli {

namespace {

struct Options {
  std::string manifest;
  std::string design;
  std::string statistic = "quadratic";
  std::string null = "strong";
  std::string control;
  int replicates = 199;
  std::string seed;
  double threshold = 0.5;
  std::string omega = "internal";
  std::string out;
  std::string format = "tsv";
  int jobs = 1;
  bool quiet = false;
  bool replicates_given = false;
};

std::optional<std::uint64_t> parse_seed(const std::string& text, const char* origin) {
  if (text.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    if (text[0] == '-') throw std::invalid_argument("negative");
    const unsigned long long v = std::stoull(text, &used, 10);
    if (used == text.size()) return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
  }
  throw ValidationError(std::string(origin) + ": seed must be an unsigned 64-bit integer, got '" + text + "'");
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("STAMP_SEED");
  if (!v || !*v) return std::nullopt;
  return parse_seed(v, "STAMP_SEED");
}

StatKind parse_kind(const std::string& s) {
  if (s == "linear") return StatKind::Linear;
  if (s == "quadratic") return StatKind::Quadratic;
  throw ValidationError("--statistic must be 'linear' or 'quadratic'");
}

NullRegime parse_null(const std::string& s) {
  if (s == "strong") return NullRegime::Strong;
  if (s == "weak") return NullRegime::Weak;
  throw ValidationError("--null must be 'strong' or 'weak'");
}

report::Format parse_format(const std::string& s) {
  if (s == "tsv") return report::Format::Tsv;
  if (s == "json") return report::Format::Json;
  throw ValidationError("--format must be 'tsv' or 'json'");
}

void emit(const Options& o, std::ostream& out, const std::string& text) {
  if (o.out.empty() || o.out == "-") {
    out << text;
    out.flush();
    return;
  }
  std::ofstream f(o.out, std::ios::binary);
  if (!f) throw ValidationError("cannot write --out '" + o.out + "'");
  f << text;
  if (!f) throw ValidationError("failed writing --out '" + o.out + "'");
}

struct Loaded {
  std::vector<StudyRegionData> studies;
  std::uint64_t content_hash = 0;
};

// Studies plus a hash of every input byte, so the config hash identifies data.
Loaded load(const Options& o) {
  if (o.manifest.empty()) throw ValidationError("--manifest is required");
  const io::Manifest m = io::load_manifest(o.manifest);
  const io::OmegaSource omega = io::parse_omega(o.omega);
  const std::optional<std::string> control = o.control.empty() ? std::nullopt : std::optional(o.control);
  Loaded l;
  l.studies = io::load_studies(m, omega, control);
  std::string all = io::read_file(o.manifest);
  for (const auto& s : m.studies) {
    all += '\x1f' + s.id + '\x1f' + io::read_file(s.summary);
    if (!omega.external) all += '\x1f' + io::read_file(s.ld);
  }
  if (omega.external) all += '\x1f' + io::read_file(omega.path);
  l.content_hash = fnv1a64(all);
  return l;
}

void require_control(const Options& o, const std::vector<StudyRegionData>& studies) {
  if (parse_null(o.null) != NullRegime::Weak) return;
  int n = 0;
  for (const auto& s : studies) n += s.is_control ? 1 : 0;
  if (n == 0) throw ValidationError("--null weak needs a negative-control study: pass --control <study_id>");
  if (n > 1) throw ValidationError("several studies are flagged as control; choose one with --control <study_id>");
}

std::uint64_t resolve_seed(const Options& o) {
  if (auto s = parse_seed(o.seed, "--seed")) return *s;
  return env_seed().value_or(0);
}

std::string config_string(const Options& o, const char* command) {
  std::ostringstream ss;
  ss << command << '|' << o.statistic << '|' << o.null << '|' << o.control << '|' << o.replicates << '|'
     << report::number(o.threshold) << '|' << (io::parse_omega(o.omega).external ? "external" : "internal");
  return ss.str();
}

std::function<void(int, int)> progress_logger(const char* what) {
  return [what](int done, int total) {
    log::info(std::string(what) + " " + std::to_string(done) + "/" + std::to_string(total));
  };
}

StampOptions stamp_options(const Options& o, StatKind kind, std::uint64_t seed) {
  StampOptions so;
  so.kind = kind;
  so.null_regime = parse_null(o.null);
  so.threshold = o.threshold;
  so.bootstrap.replicates = o.replicates;
  so.bootstrap.seed = seed;
  so.bootstrap.jobs = o.jobs;
  so.bootstrap.progress = progress_logger("bootstrap");
  return so;
}

void check_common(const Options& o) {
  if (o.replicates < 1) throw ValidationError("--replicates must be >= 1");
  if (!(o.threshold > 0 && o.threshold < 1)) throw ValidationError("--threshold must lie in (0, 1)");
  if (o.jobs < 1) throw ValidationError("--jobs must be >= 1");
  parse_format(o.format);
}

int cmd_test(const Options& o, std::ostream& out) {
  check_common(o);
  const StatKind kind = parse_kind(o.statistic);
  const Loaded l = load(o);
  require_control(o, l.studies);
  const std::uint64_t seed = resolve_seed(o);
  const StampOptions so = stamp_options(o, kind, seed);
  const StampResult r = run_stamp(l.studies, so);

  const report::RunInfo info{"test", seed, fnv1a64(config_string(o, "test") + std::to_string(l.content_hash))};
  std::ostringstream ss;
  report::write_test(ss, parse_format(o.format), info, so, r);
  emit(o, out, ss.str());
  return kExitOk;
}

int cmd_compare(const Options& o, std::ostream& out) {
  check_common(o);
  const Loaded l = load(o);
  require_control(o, l.studies);
  const std::uint64_t seed = resolve_seed(o);

  std::vector<StudyRegionData> cleaned;
  for (const auto& s : l.studies) cleaned.push_back(drop_nonfinite(s));
  const std::vector<StudyEffects> rotated = rotate_all(cleaned);

  std::vector<report::CompareRow> rows;
  for (StatKind kind : {StatKind::Linear, StatKind::Quadratic}) {
    const char* name = kind == StatKind::Linear ? "TL_Mix" : "TQ_Mix";
    try {
      const StampResult r = run_stamp(cleaned, rotated, stamp_options(o, kind, seed));
      rows.push_back({name, r.lrt_observed, r.p_value});
    } catch (const NumericalError& e) {
      log::warn(std::string(name) + " not available: " + e.what());
      rows.push_back({name, std::nullopt, std::nullopt});
    }
  }
  std::vector<RegionStatistic> lin, quad;
  std::vector<RotatedEffects> eff;
  for (const auto& r : rotated) {
    lin.push_back(t_linear(r.effects, r.study_id));
    quad.push_back(t_quadratic(r.effects, r.study_id));
    eff.push_back(r.effects);
  }
  const TestResult hl = het_meta_linear(lin);
  const TestResult hq = het_meta_quadratic(quad);
  const TestResult ho = hotelling_meta(eff);
  rows.push_back({"TL_Hetmeta", hl.statistic, hl.p_value});
  rows.push_back({"TQ_Hetmeta", hq.statistic, hq.p_value});
  rows.push_back({"T_Hotmeta", ho.statistic, ho.p_value});

  const report::RunInfo info{"compare", seed, fnv1a64(config_string(o, "compare") + std::to_string(l.content_hash))};
  std::ostringstream ss;
  report::write_compare(ss, parse_format(o.format), info, rows);
  emit(o, out, ss.str());
  return kExitOk;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  if (o.jobs < 1) throw ValidationError("--jobs must be >= 1");
  const report::Format format = parse_format(o.format);
  if (o.design.empty()) throw ValidationError("simulate needs a design file");
  sim::SimulationDesign d = sim::load_design(o.design);
  if (auto s = parse_seed(o.seed, "--seed")) {
    d.seed = *s;
  } else if (!d.seed_set) {
    d.seed = env_seed().value_or(0);
  }
  if (o.replicates_given) d.bootstrap_replicates = o.replicates;
  sim::validate(d);

  const int step = std::max(1, d.replications / 10);
  const sim::ExperimentResult res = sim::run_experiment(d, o.jobs, [&](int done, int total) {
    if (done % step == 0 || done == total) log::info("replication " + std::to_string(done) + "/" + std::to_string(total));
  });

  const std::string cfg = io::read_file(o.design) + "|R=" + std::to_string(d.bootstrap_replicates);
  const report::RunInfo info{"simulate", d.seed, fnv1a64(cfg)};
  std::ostringstream ss;
  report::write_simulation(ss, format, info, d, res);
  emit(o, out, ss.str());
  return kExitOk;
}

void add_common(CLI::App* c, Options& o) {
  c->add_option("--manifest", o.manifest, "JSON manifest listing the studies");
  c->add_option("--statistic", o.statistic, "linear or quadratic");
  c->add_option("--null", o.null, "strong or weak");
  c->add_option("--control", o.control, "negative-control study id (weak null)");
  c->add_option("--threshold", o.threshold, "posterior threshold p*");
  c->add_option("--omega", o.omega, "internal or external:<path>");
}

void add_output(CLI::App* c, Options& o) {
  c->add_option("--replicates", o.replicates, "bootstrap replicates R");
  c->add_option("--seed", o.seed, "random seed (default: $STAMP_SEED, else 0)");
  c->add_option("--out", o.out, "output path (default: stdout)");
  c->add_option("--format", o.format, "tsv or json");
  c->add_option("--jobs", o.jobs, "parallel workers");
  c->add_flag("--quiet", o.quiet, "only warnings and errors on stderr");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"stamp: region-based multi-phenotype mixture test"};
  app.require_subcommand(1);
  Options o;

  CLI::App* test = app.add_subcommand("test", "mixture test with bootstrap p-value");
  add_common(test, o);
  add_output(test, o);
  CLI::App* compare = app.add_subcommand("compare", "mixture tests next to the meta-analysis statistics");
  add_common(compare, o);
  add_output(compare, o);
  CLI::App* simulate = app.add_subcommand("simulate", "type-1 error and power experiment");
  simulate->add_option("design,--design", o.design, "JSON simulation design")->required();
  add_output(simulate, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "stamp: " << e.what() << '\n';
    return kExitValidation;
  }

  const CLI::App* active = app.get_subcommands().front();
  o.replicates_given = active->count("--replicates") > 0;
  log::set_level(o.quiet ? log::Level::Warn : log::Level::Info);

  try {
    if (active == test) return cmd_test(o, out);
    if (active == compare) return cmd_compare(o, out);
    return cmd_simulate(o, out);
  } catch (const ValidationError& e) {
    err << "stamp: error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError& e) {
    err << "stamp: numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "stamp: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace stamp::cli
