#include "stamp/io.hpp"

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "stamp/errors.hpp"
#include "stamp/log.hpp"

namespace stamp::io {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, '\t')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, const std::string& where) {
  if (cell == "NA" || cell == "NaN" || cell == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used == cell.size()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError(where + ": cannot parse '" + cell + "' as a number");
}

std::string resolve(const std::string& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = std::filesystem::path(base) / path;
  return path.lexically_normal().string();
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Manifest parse_manifest(const std::string& text, const std::string& base_dir) {
  using json = nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("studies") || !j.at("studies").is_array()) {
    throw ValidationError("manifest must be an object with a 'studies' list");
  }
  Manifest m;
  std::set<std::string> seen;
  try {
    for (const json& s : j.at("studies")) {
      if (!s.is_object()) throw ValidationError("manifest: each study must be an object");
      for (const auto& [key, _] : s.items()) {
        if (key != "id" && key != "summary" && key != "ld" && key != "control") {
          throw ValidationError("manifest: unknown study key '" + key + "'");
        }
      }
      if (!s.contains("id") || !s.contains("summary")) throw ValidationError("manifest: each study needs 'id' and 'summary'");
      ManifestStudy st;
      st.id = s.at("id").get<std::string>();
      if (st.id.empty()) throw ValidationError("manifest: empty study id");
      if (!seen.insert(st.id).second) throw ValidationError("manifest: duplicate study id '" + st.id + "'");
      st.summary = resolve(base_dir, s.at("summary").get<std::string>());
      if (s.contains("ld")) st.ld = resolve(base_dir, s.at("ld").get<std::string>());
      if (s.contains("control")) st.control = s.at("control").get<bool>();
      m.studies.push_back(std::move(st));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  if (m.studies.empty()) throw ValidationError("manifest lists no studies");
  return m;
}

Manifest load_manifest(const std::string& path) {
  return parse_manifest(read_file(path), std::filesystem::path(path).parent_path().string());
}

SummaryTable read_summary(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ": empty summary file");
  const std::vector<std::string> header = split_tabs(line);
  int c_id = -1, c_beta = -1, c_se = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "snp_id") c_id = static_cast<int>(i);
    if (header[i] == "beta") c_beta = static_cast<int>(i);
    if (header[i] == "se") c_se = static_cast<int>(i);
  }
  if (c_id < 0 || c_beta < 0 || c_se < 0) throw ValidationError(path + ": header must name snp_id, beta and se");

  SummaryTable t;
  std::set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_tabs(line);
    if (cells.size() != header.size()) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " columns");
    }
    const std::string where = path + ":" + std::to_string(lineno);
    const std::string& id = cells[static_cast<std::size_t>(c_id)];
    if (!seen.insert(id).second) throw ValidationError(where + ": duplicate snp_id '" + id + "'");
    t.snp_ids.push_back(id);
    t.beta.push_back(parse_number(cells[static_cast<std::size_t>(c_beta)], where));
    t.se.push_back(parse_number(cells[static_cast<std::size_t>(c_se)], where));
  }
  if (t.snp_ids.empty()) throw ValidationError(path + ": no SNP rows");
  return t;
}

LdMatrix read_ld(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ": empty LD file");
  std::vector<std::string> header = split_tabs(line);
  if (header.size() < 2) throw ValidationError(path + ": LD header needs a corner cell and SNP ids");
  LdMatrix ld;
  ld.snp_ids.assign(header.begin() + 1, header.end());
  const auto p = static_cast<Eigen::Index>(ld.snp_ids.size());
  ld.values.resize(p, p);
  Eigen::Index row = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_tabs(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (row >= p) throw ValidationError(where + ": more rows than SNP ids in the header");
    if (static_cast<Eigen::Index>(cells.size()) != p + 1) throw ValidationError(where + ": expected " + std::to_string(p + 1) + " columns");
    if (cells[0] != ld.snp_ids[static_cast<std::size_t>(row)]) {
      throw ValidationError(where + ": row id '" + cells[0] + "' does not match header id '" + ld.snp_ids[static_cast<std::size_t>(row)] + "'");
    }
    for (Eigen::Index c = 0; c < p; ++c) {
      const double v = parse_number(cells[static_cast<std::size_t>(c + 1)], where);
      if (!std::isfinite(v)) throw ValidationError(where + ": LD values must be finite");
      ld.values(row, c) = v;
    }
    ++row;
  }
  if (row != p) throw ValidationError(path + ": LD matrix is not square");
  if (!ld.values.isApprox(ld.values.transpose(), 1e-8)) throw ValidationError(path + ": LD matrix is not symmetric");
  return ld;
}

OmegaSource parse_omega(const std::string& flag) {
  if (flag == "internal") return {};
  const std::string prefix = "external:";
  if (flag.rfind(prefix, 0) == 0 && flag.size() > prefix.size()) return {true, flag.substr(prefix.size())};
  throw ValidationError("--omega must be 'internal' or 'external:<path>'");
}

std::vector<StudyRegionData> load_studies(const Manifest& manifest, const OmegaSource& omega,
                                          const std::optional<std::string>& control_id) {
  if (control_id) {
    bool found = false;
    for (const auto& s : manifest.studies) found = found || s.id == *control_id;
    if (!found) throw ValidationError("--control names study '" + *control_id + "', which is not in the manifest");
  }
  std::optional<LdMatrix> shared;
  if (omega.external) shared = read_ld(omega.path);

  std::vector<StudyRegionData> out;
  for (const auto& st : manifest.studies) {
    const SummaryTable sum = read_summary(st.summary);
    if (!shared && st.ld.empty()) throw ValidationError("study '" + st.id + "' has no 'ld' file and --omega is internal");
    const LdMatrix own = shared ? LdMatrix{} : read_ld(st.ld);
    const LdMatrix& ld = shared ? *shared : own;

    std::unordered_map<std::string, Eigen::Index> pos;
    for (std::size_t i = 0; i < ld.snp_ids.size(); ++i) pos.emplace(ld.snp_ids[i], static_cast<Eigen::Index>(i));
    std::vector<Eigen::Index> idx;
    std::vector<std::string> ids;
    std::vector<double> beta, se;
    for (std::size_t j = 0; j < sum.snp_ids.size(); ++j) {
      const auto it = pos.find(sum.snp_ids[j]);
      if (it == pos.end()) {
        log::warn("study '" + st.id + "': SNP '" + sum.snp_ids[j] + "' is not in the LD matrix; dropped");
        continue;
      }
      idx.push_back(it->second);
      ids.push_back(sum.snp_ids[j]);
      beta.push_back(sum.beta[j]);
      se.push_back(sum.se[j]);
    }
    if (idx.empty()) throw ValidationError("study '" + st.id + "': no SNP overlaps the LD matrix");
    const auto n = static_cast<Eigen::Index>(idx.size());
    MatrixXd m(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < n; ++b) m(a, b) = ld.values(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
    const bool control = control_id ? st.id == *control_id : st.control;
    out.push_back(make_study(st.id, std::move(ids), Eigen::Map<VectorXd>(beta.data(), n),
                             Eigen::Map<VectorXd>(se.data(), n), m, control));
  }
  return out;
}

}  // namespace stamp::io
