#include "refdiff/io.hpp"

#include "refdiff/core.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace refdiff::io {

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_hash(const nlohmann::json& config) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config.dump())));
  return buf;
}

CsvWriter::CsvWriter(std::ostream& out, const ArtifactMeta& meta, const std::vector<std::string>& columns)
    : out_(out), cols_(columns.size()) {
  out_ << "# command: " << meta.command << "\n";
  out_ << "# config_hash: " << meta.hash << "\n";
  out_ << "# seed: " << meta.seed << "\n";
  for (auto it = meta.extra.begin(); it != meta.extra.end(); ++it) out_ << "# " << it.key() << ": " << it.value().dump() << "\n";
  for (size_t k = 0; k < columns.size(); ++k) out_ << (k ? "," : "") << columns[k];
  out_ << "\n";
}

void CsvWriter::row(const std::vector<double>& values) {
  if (values.size() != cols_) throw Error(ErrorCode::InvalidArgument, "csv row has the wrong width");
  for (size_t k = 0; k < values.size(); ++k) out_ << (k ? "," : "") << fmt(values[k]);
  out_ << "\n";
  ++rows_;
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != cols_) throw Error(ErrorCode::InvalidArgument, "csv row has the wrong width");
  for (size_t k = 0; k < cells.size(); ++k) out_ << (k ? "," : "") << cells[k];
  out_ << "\n";
  ++rows_;
}

void write_json(std::ostream& out, nlohmann::json body, const ArtifactMeta& meta) {
  nlohmann::json m = meta.extra;
  m["command"] = meta.command;
  m["config_hash"] = meta.hash;
  m["seed"] = meta.seed;
  body["_meta"] = m;
  out << body.dump(2) << "\n";
}

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.meta_lines.push_back(line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1));
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!header) {
      t.columns = std::move(cells);
      header = true;
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

}  // namespace refdiff::io
