#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stamp/summary_core.hpp"

namespace stamp::io {

struct ManifestStudy {
  std::string id;
  std::string summary;  // resolved path
  std::string ld;       // resolved path; empty when an external panel is used
  bool control = false;
};

struct Manifest {
  std::vector<ManifestStudy> studies;
};

/// {"studies": [{"id", "summary", "ld", "control"}]}; paths relative to base_dir.
Manifest parse_manifest(const std::string& json_text, const std::string& base_dir = ".");
Manifest load_manifest(const std::string& path);

struct SummaryTable {
  std::vector<std::string> snp_ids;
  std::vector<double> beta;
  std::vector<double> se;  // "NA" cells become NaN and are dropped downstream
};

/// Tab-separated with a header naming snp_id, beta and se (any order).
SummaryTable read_summary(const std::string& path);

struct LdMatrix {
  std::vector<std::string> snp_ids;
  MatrixXd values;
};

/// Square TSV with a header row and a leading column of SNP ids.
LdMatrix read_ld(const std::string& path);

struct OmegaSource {
  bool external = false;
  std::string path;
};

/// "internal" or "external:<path>".
OmegaSource parse_omega(const std::string& flag);

/// Reads every study. SNPs missing from the LD matrix are dropped with a
/// warning; the LD matrix is reordered to the summary's SNP order. When
/// control_id is given it replaces the manifest's control flags.
std::vector<StudyRegionData> load_studies(const Manifest& manifest, const OmegaSource& omega,
                                          const std::optional<std::string>& control_id = std::nullopt);

/// Whole file as a string; ValidationError when unreadable.
std::string read_file(const std::string& path);

}  // namespace stamp::io
