#include "support.hpp"

#include "refdiff/io.hpp"

#include <limits>
#include <sstream>

using namespace refdiff;
using namespace refdiff::test;

TEST_CASE("fnv1a test vectors") {
  CHECK(io::fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(io::fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(io::fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("config hash ignores key order") {
  nlohmann::json a = {{"b", 1}, {"a", {1.5, 2.0}}};
  nlohmann::json b;
  b["a"] = {1.5, 2.0};
  b["b"] = 1;
  CHECK(io::config_hash(a) == io::config_hash(b));
  CHECK(io::config_hash(a).size() == 16);
  b["b"] = 2;
  CHECK(io::config_hash(a) != io::config_hash(b));
}

TEST_CASE("number formatting round trips") {
  Gen g(9);
  for (int t = 0; t < 2000; ++t) {
    double x = g.normal() * std::pow(10.0, g.integer(-300, 300));
    CHECK(std::strtod(io::fmt(x).c_str(), nullptr) == x);
  }
  for (double x : {0.0, -0.0, 1.0, 0.1, 1e-320, std::numeric_limits<double>::max()})
    CHECK(std::strtod(io::fmt(x).c_str(), nullptr) == x);
  CHECK(io::fmt(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(io::fmt(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(io::fmt(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("csv round trip") {
  io::ArtifactMeta meta;
  meta.command = "simulate --preset halfline";
  meta.hash = "0123456789abcdef";
  meta.seed = 42;
  meta.extra["dt"] = 0.001;
  std::ostringstream out;
  io::CsvWriter w(out, meta, {"t", "x0", "tag"});
  Gen g(4);
  std::vector<std::vector<double>> rows;
  for (int k = 0; k < 50; ++k) {
    rows.push_back({k * 0.1, g.normal()});
    w.row(std::vector<std::string>{io::fmt(rows.back()[0]), io::fmt(rows.back()[1]), k % 2 ? "odd" : "even"});
  }
  CHECK(w.rows() == 50);
  CHECK_THROWS_AS(w.row(std::vector<double>{1.0}), Error);

  std::istringstream in(out.str());
  io::CsvTable t = io::read_csv(in);
  REQUIRE(t.meta_lines.size() == 4);
  CHECK(t.meta_lines[0] == "command: simulate --preset halfline");
  CHECK(t.meta_lines[1] == "config_hash: 0123456789abcdef");
  CHECK(t.meta_lines[2] == "seed: 42");
  CHECK(t.meta_lines[3] == "dt: 0.001");
  CHECK(t.columns == std::vector<std::string>{"t", "x0", "tag"});
  REQUIRE(t.rows.size() == rows.size());
  for (size_t k = 0; k < rows.size(); ++k) {
    CHECK(std::stod(t.rows[k][0]) == rows[k][0]);
    CHECK(std::stod(t.rows[k][1]) == rows[k][1]);
    CHECK(t.rows[k][2] == (k % 2 ? "odd" : "even"));
  }
}

TEST_CASE("json artifacts carry metadata") {
  io::ArtifactMeta meta;
  meta.command = "verify-bar";
  meta.hash = "ffff";
  meta.seed = 3;
  std::ostringstream out;
  io::write_json(out, {{"pass", true}}, meta);
  auto j = nlohmann::json::parse(out.str());
  CHECK(j["pass"] == true);
  CHECK(j["_meta"]["command"] == "verify-bar");
  CHECK(j["_meta"]["config_hash"] == "ffff");
  CHECK(j["_meta"]["seed"] == 3);
}
