#include "ffp/config.hpp"
#include "ffp/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

using namespace ffp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base() {
  return json::parse(read_file(fs::path(FFP_CONFIG_DIR) / "constant_power.json"));
}

std::string error_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ffp_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, ShippedConfigsLoad) {
  for (const auto& entry : fs::directory_iterator(FFP_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const RunConfig c = load_config(entry.path());
    EXPECT_NO_THROW(make_problem(c)) << entry.path();
    EXPECT_EQ(c.hash.size(), 16u);
  }
}

TEST(Config, ParsesFields) {
  const RunConfig c = parse_config(base());
  EXPECT_EQ(c.name, "constant_power");
  EXPECT_TRUE(c.utility.is_power());
  EXPECT_DOUBLE_EQ(c.utility.delta(), 0.5);
  EXPECT_EQ(c.grid.nodes[0], 401);
  EXPECT_EQ(c.rho_sequence.size(), 6u);
  EXPECT_EQ(c.mc.seed, 20240601u);
  EXPECT_NEAR(c.market.theta(Vec::Zero(1))[0], 0.4, 1e-15);
}

TEST(Config, MissingFieldNamed) {
  json j = base();
  j["grid"].erase("lower");
  EXPECT_NE(error_of(j).find("'grid.lower'"), std::string::npos) << error_of(j);
  json k = base();
  k.erase("utility");
  EXPECT_NE(error_of(k).find("'utility'"), std::string::npos);
}

TEST(Config, UnknownKeysRejected) {
  json j = base();
  j["grid"]["spacing"] = 0.1;
  EXPECT_NE(error_of(j).find("grid.spacing"), std::string::npos);
  json k = base();
  k["extra"] = 1;
  EXPECT_NE(error_of(k).find("unknown key 'extra'"), std::string::npos);
}

TEST(Config, InvalidValues) {
  json j = base();
  j["solver"]["rho_sequence"] = {0.1, 0.2};
  EXPECT_NE(error_of(j).find("rho_sequence"), std::string::npos);
  json k = base();
  k["grid"]["nodes"] = {10};
  EXPECT_FALSE(error_of(k).empty());
  json m = base();
  m["utility"]["delta"] = 1.5;
  EXPECT_FALSE(error_of(m).empty());
  json n = base();
  n["grid"]["lower"] = "low";
  EXPECT_NE(error_of(n).find("grid.lower"), std::string::npos);
}

TEST(Config, HashTracksContent) {
  json j = base();
  const std::string h1 = parse_config(j).hash;
  EXPECT_EQ(parse_config(base()).hash, h1);
  j["monte_carlo"]["seed"] = 1;
  EXPECT_NE(parse_config(j).hash, h1);
}

TEST(Config, BadFile) {
  const fs::path d = scratch("badcfg");
  write_file(d / "x.json", "{ not json");
  EXPECT_THROW(load_config(d / "x.json"), ValidationError);
  EXPECT_THROW(load_config(d / "missing.json"), ValidationError);
}

TEST(Io, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Io, SolutionCsvRoundTrip) {
  ErgodicSolution s;
  s.grid = Grid::uniform_1d(-1, 1, 21);
  s.lambda = 0.0271817;
  s.v0 = Vec::Zero(1);
  s.y = Vec::LinSpaced(21, -0.3, 0.7);
  s.z = Mat::Random(21, 2);
  s.residual_sup = 1.25e-7;
  const auto text = solution_csv(s, "deadbeef");
  const auto back = parse_solution_csv(text);
  EXPECT_EQ(back.metadata.at("config_hash"), "deadbeef");
  EXPECT_EQ(back.solution.lambda, s.lambda);
  EXPECT_EQ(back.solution.grid.nodes, s.grid.nodes);
  EXPECT_EQ(back.solution.y, s.y);
  EXPECT_EQ(back.solution.z, s.z);
  EXPECT_EQ(solution_csv(back.solution, "deadbeef"), text);
}

TEST(Io, SolutionCsvCorruption) {
  ErgodicSolution s;
  s.grid = Grid::uniform_1d(-1, 1, 20);
  s.v0 = Vec::Zero(1);
  s.y = Vec::Zero(20);
  s.z = Mat::Zero(20, 1);
  std::string text = solution_csv(s, "h");
  EXPECT_THROW(parse_solution_csv(text.substr(0, text.size() / 2)), IntegrityError);
  const auto pos = text.rfind("0");
  text[pos] = 'x';
  EXPECT_THROW(parse_solution_csv(text), IntegrityError);
}

TEST(Io, ManifestDetectsTampering) {
  const fs::path d = scratch("manifest");
  Manifest m("abc123", "test");
  m.add(d, "a.csv", "1,2\n");
  m.add(d, "b.txt", "0.08\n");
  m.write(d);
  const auto names = Manifest::verify(d, "abc123");
  EXPECT_EQ(names.size(), 2u);
  EXPECT_THROW(Manifest::verify(d, "other"), IntegrityError);
  write_file(d / "a.csv", "1,3\n");
  try {
    Manifest::verify(d, "abc123");
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("a.csv"), std::string::npos);
  }
  fs::remove(d / "manifest.json");
  EXPECT_THROW(Manifest::verify(d, "abc123"), IntegrityError);
}

TEST(Io, MetadataBlock) {
  EXPECT_EQ(metadata_block({{"kind", "x"}, {"seed", "7"}}), "# kind=x\n# seed=7\n");
}
