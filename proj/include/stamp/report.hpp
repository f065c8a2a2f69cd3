#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stamp/inference.hpp"
#include "stamp/simulation.hpp"

namespace stamp::report {

inline constexpr const char* kVersion = "0.1.0";

enum class Format { Tsv, Json };

/// Six significant digits.
std::string number(double x);
/// Like number(), but scientific ("1.45E-05") below 1e-4.
std::string pvalue(double p);

struct RunInfo {
  std::string command;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

/// "# stamp <version> command=<cmd> seed=<seed> config=<hex>"
std::string header_line(const RunInfo& info);

void write_test(std::ostream& out, Format format, const RunInfo& info, const StampOptions& options,
                const StampResult& result);

struct CompareRow {
  std::string test;
  std::optional<double> statistic;
  std::optional<double> p_value;
};

void write_compare(std::ostream& out, Format format, const RunInfo& info, const std::vector<CompareRow>& rows);

void write_simulation(std::ostream& out, Format format, const RunInfo& info, const sim::SimulationDesign& design,
                      const sim::ExperimentResult& result);

}  // namespace stamp::report
