#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "saelab/common.hpp"
#include "saelab/metrics.hpp"

namespace saelab {

// One line per call, written whole so concurrent appenders never interleave.
inline void append_jsonl(const std::string& path, const nlohmann::json& record) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  require(out.good(), "cannot open " + path);
  out << record.dump() << '\n';
}

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw ParseError("cannot open " + path);
  std::vector<nlohmann::json> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json node = nlohmann::json::parse(line, nullptr, false);
    if (node.is_discarded()) throw ParseError("invalid JSON", line_no);
    records.push_back(std::move(node));
  }
  return records;
}

inline void save_metrics_jsonl(const std::string& path,
                               const std::vector<MetricsReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open " + path);
  for (const MetricsReport& r : reports) out << r.to_json().dump() << '\n';
}

inline std::vector<MetricsReport> load_metrics_jsonl(const std::string& path) {
  std::vector<MetricsReport> reports;
  for (const nlohmann::json& node : read_jsonl(path))
    reports.push_back(MetricsReport::from_json(node));
  return reports;
}

inline void save_metrics_csv(const std::string& path, const std::vector<MetricsReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open " + path);
  out << metrics_csv_header() << '\n';
  for (const MetricsReport& r : reports) out << metrics_csv_row(r) << '\n';
}

// Content inventory of a run directory: relative path, size, and FNV-1a hash
// per file, sorted by path. No timestamps, so identical content gives an
// identical manifest.
inline nlohmann::json write_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), "not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
      files.push_back(entry.path());
  std::vector<std::string> rels;
  for (const fs::path& p : files) rels.push_back(fs::relative(p, dir).generic_string());
  std::sort(rels.begin(), rels.end());

  nlohmann::json manifest;
  manifest["files"] = nlohmann::json::array();
  for (const std::string& rel : rels) {
    std::ifstream in(fs::path(dir) / rel, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    manifest["files"].push_back({{"path", rel},
                                 {"bytes", bytes.size()},
                                 {"fnv1a64", to_hex(fnv1a64(bytes))}});
  }
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  return manifest;
}

}  // namespace saelab
