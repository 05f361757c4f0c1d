#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "orbitcurv/io.hpp"
#include "orbitcurv/pipeline.hpp"

using namespace orbitcurv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(ORBITCURV_SCRATCH_DIR) / "io" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
}

std::string config_error(const std::string& text) {
  try {
    pipeline::parse_experiment(io::parse_config_text(text, "cfg.json"), std::nullopt);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

const char* kMinimal = R"({
  "seed": 3,
  "manifold": {"profile": "sin", "u_min": 0.0, "u_max": 3.14159}
})";

}  // namespace

// ---------------------------------------------------------------------------
// Formatting and hashing.

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(io::format_double(0.1), "0.1");
  EXPECT_EQ(io::format_double(1.0), "1");
  EXPECT_EQ(io::format_double(-2.5e-17), "-2.5e-17");
  EXPECT_EQ(io::format_double(std::nan("")), "nan");
  EXPECT_EQ(io::format_double(-INFINITY), "-inf");
  const double x = 0.1 + 0.2;
  EXPECT_EQ(std::stod(io::format_double(x)), x);
}

TEST(Fnv1a, KnownValues) {
  EXPECT_EQ(io::fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(io::fnv1a_hex("a"), "af63dc4c8601ec8c");
  EXPECT_NE(io::fnv1a_hex("ab"), io::fnv1a_hex("ba"));
}

// ---------------------------------------------------------------------------
// Source locations.

TEST(LocationIndex, LinesOfNestedValues) {
  const std::string text = "{\n  \"a\": 1,\n  \"b\": {\n    \"c\": [\n      1,\n      2\n    ]\n  }\n}\n";
  const io::LocationIndex idx(text);
  EXPECT_EQ(idx.line_of("a"), 2);
  EXPECT_EQ(idx.line_of("b"), 3);
  EXPECT_EQ(idx.line_of("b.c"), 4);
  EXPECT_EQ(idx.line_of("b.c[1]"), 6);
  EXPECT_EQ(idx.key_line_of("b.c"), 4);
  EXPECT_EQ(idx.line_of("missing"), 1);
}

TEST(LocationIndex, EscapedKeysAndStrings) {
  const std::string text = "{\"x\\\"y\": \"a\\nb\",\n\"z\": 2}";
  const io::LocationIndex idx(text);
  EXPECT_EQ(idx.line_of("z"), 2);
}

TEST(ParseConfigText, MalformedJsonNamesLine) {
  try {
    io::parse_config_text("{\n  \"seed\": 1,\n  \"x\": ,\n}", "bad.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("bad.json:3: malformed JSON", 0), 0u) << e.what();
  }
  EXPECT_THROW(io::parse_config_text("[1, 2]", "arr.json"), ConfigError);
}

TEST(LoadConfig, MissingFile) {
  try {
    io::load_config("/nonexistent/x.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/x.json:1:"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Experiment parsing.

TEST(ParseExperiment, MinimalConfigGetsDefaults) {
  const auto cfg = pipeline::parse_experiment(io::parse_config_text(kMinimal, "m.json"), std::nullopt);
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.manifold.profile, "sin");
  EXPECT_EQ(cfg.manifold.fiber_dim, 1);
  EXPECT_EQ(cfg.n_u, 256u);
  EXPECT_EQ(cfg.n_theta, 128u);
  EXPECT_FALSE(cfg.transport.has_value());
  EXPECT_FALSE(cfg.certify.has_value());
}

TEST(ParseExperiment, SeedOverride) {
  const auto cfg = pipeline::parse_experiment(io::parse_config_text(kMinimal, "m.json"), 99);
  EXPECT_EQ(cfg.seed, 99u);
  const std::string no_seed = R"({"manifold": {"profile": "sin", "u_min": 0, "u_max": 3}})";
  EXPECT_NE(config_error(no_seed).find("missing required key 'seed'"), std::string::npos);
  EXPECT_EQ(pipeline::parse_experiment(io::parse_config_text(no_seed, "s.json"), 5).seed, 5u);
}

TEST(ParseExperiment, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(ORBITCURV_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(pipeline::parse_experiment(io::load_config(entry.path()), std::nullopt)) << entry.path();
  }
}

TEST(ParseExperiment, UnknownKeyIsLineAnchored) {
  const std::string text = "{\n  \"seed\": 1,\n  \"manifold\": {\"profile\": \"sin\", \"u_min\": 0, \"u_max\": 3},\n  \"grdi\": {}\n}";
  EXPECT_EQ(config_error(text), "cfg.json:4: grdi: unknown key");
  const std::string nested = "{\n  \"seed\": 1,\n  \"manifold\": {\n    \"profile\": \"sin\",\n    \"u_min\": 0,\n    \"u_max\": 3,\n    \"colour\": 1\n  }\n}";
  EXPECT_EQ(config_error(nested), "cfg.json:7: manifold.colour: unknown key");
}

TEST(ParseExperiment, TypeAndRangeErrorsAreLineAnchored) {
  const std::string wrong_type = "{\n  \"seed\": 1,\n  \"manifold\": {\n    \"profile\": \"sin\",\n    \"u_min\": \"zero\",\n    \"u_max\": 3\n  }\n}";
  EXPECT_EQ(config_error(wrong_type), "cfg.json:5: manifold.u_min: expected a number");

  const std::string bad_profile = "{\"seed\": 1,\n\"manifold\": {\"profile\": \"torus\", \"u_min\": 0, \"u_max\": 3}}";
  EXPECT_NE(config_error(bad_profile).find("cfg.json:2: manifold.profile: unknown value 'torus'"), std::string::npos);

  const std::string small_grid = "{\"seed\": 1,\n\"manifold\": {\"profile\": \"sin\", \"u_min\": 0, \"u_max\": 3},\n\"grid\": {\"n_u\": 4}}";
  EXPECT_EQ(config_error(small_grid), "cfg.json:3: grid.n_u: must be >= 16");

  const std::string big_theta =
      "{\"seed\": 1,\n\"manifold\": {\"profile\": \"sin\", \"u_min\": 0, \"u_max\": 3},\n\"certify\": {\"K\": 1,\n"
      "\"sampler\": {\"thetas\": [0.1,\n 0.7]}}}";
  EXPECT_NE(config_error(big_theta).find("cfg.json:5: certify.sampler.thetas[1]"), std::string::npos) << config_error(big_theta);

  const std::string neg_seed = "{\"seed\": -1, \"manifold\": {\"profile\": \"sin\", \"u_min\": 0, \"u_max\": 3}}";
  EXPECT_NE(config_error(neg_seed).find("seed: must be >= 0"), std::string::npos);

  const std::string reversed = "{\"seed\": 1, \"manifold\": {\"profile\": \"sin\", \"u_min\": 2, \"u_max\": 1}}";
  EXPECT_NE(config_error(reversed).find("manifold.u_max: must exceed u_min"), std::string::npos);
}

TEST(ParseExperiment, CertifySection) {
  const std::string text = R"({"seed": 4,
    "manifold": {"profile": "cosh", "u_min": -1, "u_max": 1},
    "certify": {"K": "estimate", "tolerance": 0.05,
                "sampler": {"count": 10, "region": [-0.5, 0.5], "n_time": 16, "t_values": [0.25, 0.5]}}})";
  const auto cfg = pipeline::parse_experiment(io::parse_config_text(text, "c.json"), std::nullopt);
  ASSERT_TRUE(cfg.certify.has_value());
  EXPECT_FALSE(cfg.certify->k.has_value());
  EXPECT_EQ(cfg.certify->tolerance, 0.05);
  EXPECT_EQ(cfg.certify->sampler.count, 10u);
  EXPECT_EQ(cfg.certify->sampler.seed, 4u);
  EXPECT_EQ(*cfg.certify->sampler.region_lo, -0.5);

  const std::string missing_k = R"({"seed": 4, "manifold": {"profile": "cosh", "u_min": -1, "u_max": 1}, "certify": {}})";
  EXPECT_NE(config_error(missing_k).find("missing required key 'K'"), std::string::npos);
  const std::string off_grid_t = R"({"seed": 4, "manifold": {"profile": "cosh", "u_min": -1, "u_max": 1},
    "certify": {"K": 0, "sampler": {"n_time": 4, "t_values": [0.3]}}})";
  EXPECT_NE(config_error(off_grid_t).find("certify.sampler.t_values"), std::string::npos);
}

TEST(ParseExperiment, TransportSection) {
  const std::string text = R"({"seed": 4,
    "manifold": {"profile": "cosh", "u_min": -1, "u_max": 1},
    "transport": {"source": {"source": "gaussian", "center": -0.2, "sigma": 0.1},
                  "target": {"source": "gaussian", "center": 0.3, "sigma": 0.2},
                  "lp": true, "lp_atoms": 600}})";
  EXPECT_NE(config_error(text).find("transport.lp_atoms: must be <= 512"), std::string::npos) << config_error(text);
}

// ---------------------------------------------------------------------------
// CSV.

TEST(CsvWriter, FormatsCells) {
  io::CsvWriter w({"i", "x", "flag", "name"});
  w.row(std::size_t{3}, 0.25, true, std::string("a"));
  w.row(-1, 1e-20, false, "b");
  EXPECT_EQ(w.str(), "i,x,flag,name\n3,0.25,1,a\n-1,1e-20,0,b\n");
  EXPECT_THROW(w.row(1, 2), ShapeError);
}

TEST(ReadNumericCsv, HeaderOptionalAndRoundTrip) {
  const auto dir = scratch("csv");
  io::CsvWriter w({"u", "theta", "rho"});
  w.row(0.1, 0.2, 1.0 / 3.0);
  w.row(0.5, 0.6, 2.0);
  write_text(dir / "a.csv", w.str());
  const auto t = io::read_numeric_csv(dir / "a.csv", 3);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.header[2], "rho");
  EXPECT_EQ(t.rows[0][2], 1.0 / 3.0);
  EXPECT_EQ(t.lines[1], 3);

  write_text(dir / "b.csv", "# comment\n1, 2\n\n3,4\r\n");
  const auto b = io::read_numeric_csv(dir / "b.csv", 2);
  EXPECT_TRUE(b.header.empty());
  ASSERT_EQ(b.rows.size(), 2u);
  EXPECT_EQ(b.rows[1][1], 4.0);
}

TEST(ReadNumericCsv, ErrorsNameTheLine) {
  const auto dir = scratch("csv_bad");
  write_text(dir / "cols.csv", "u,rho\n1,2\n3\n");
  try {
    io::read_numeric_csv(dir / "cols.csv", 2);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cols.csv:3: expected 2 columns, found 1"), std::string::npos);
  }
  write_text(dir / "text.csv", "u,rho\n1,2\n3,x\n");
  try {
    io::read_numeric_csv(dir / "text.csv", 2);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("text.csv:3: non-numeric cell"), std::string::npos);
  }
  EXPECT_THROW(io::read_numeric_csv(dir / "none.csv", 2), ConfigError);
}

// ---------------------------------------------------------------------------
// Atomic output.

TEST(AtomicWrite, ReplacesContentAndLeavesNoTemporary) {
  const auto dir = scratch("atomic");
  io::atomic_write(dir / "sub" / "f.txt", "one");
  io::atomic_write(dir / "sub" / "f.txt", "two");
  EXPECT_EQ(io::read_file(dir / "sub" / "f.txt"), "two");
  for (const auto& e : fs::directory_iterator(dir / "sub")) EXPECT_NE(e.path().extension(), ".tmp");
}

TEST(OutputSet, NothingWrittenBeforeCommit) {
  const auto dir = scratch("outset") / "run";
  io::OutputSet out(dir);
  out.add("a.csv", "x\n");
  out.add_json("r.json", io::Json{{"k", 1}});
  out.add("a.csv", "y\n");
  EXPECT_FALSE(fs::exists(dir));
  EXPECT_EQ(out.names(), (std::vector<std::string>{"a.csv", "r.json"}));
  out.commit();
  EXPECT_EQ(io::read_file(dir / "a.csv"), "y\n");
  EXPECT_EQ(io::read_file(dir / "r.json"), "{\n  \"k\": 1\n}\n");
}

TEST(Pipeline, AnchorDetection) {
  EXPECT_TRUE(pipeline::is_anchored("cfg.json:3: grid.n_u: must be >= 16"));
  EXPECT_TRUE(pipeline::is_anchored("/a/b/density.csv:12: non-numeric cell"));
  EXPECT_FALSE(pipeline::is_anchored("sampler: could not place a localized geodesic"));
}
