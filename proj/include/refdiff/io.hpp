#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace refdiff::io {

/// Shortest-safe round trip: 17 significant digits.
std::string fmt(double x);

std::uint64_t fnv1a(const std::string& bytes);
/// FNV-1a of the compact dump (keys are sorted, so the hash is stable).
std::string config_hash(const nlohmann::json& config);

struct ArtifactMeta {
  std::string command;
  std::string hash;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

class CsvWriter {
 public:
  CsvWriter(std::ostream& out, const ArtifactMeta& meta, const std::vector<std::string>& columns);
  void row(const std::vector<double>& values);
  /// Mixed row: strings are written verbatim (they must not contain commas).
  void row(const std::vector<std::string>& cells);
  std::size_t rows() const { return rows_; }

 private:
  std::ostream& out_;
  std::size_t cols_;
  std::size_t rows_ = 0;
};

/// Adds a "_meta" block and writes with 2-space indentation.
void write_json(std::ostream& out, nlohmann::json body, const ArtifactMeta& meta);

struct CsvTable {
  std::vector<std::string> meta_lines;  // without the leading '#'
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(std::istream& in);

}  // namespace refdiff::io
