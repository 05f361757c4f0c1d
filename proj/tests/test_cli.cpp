#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "orbitcurv/io.hpp"

namespace fs = std::filesystem;
using orbitcurv::io::Json;
using orbitcurv::io::read_file;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(ORBITCURV_SCRATCH_DIR) / "cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path config(const std::string& name) { return fs::path(ORBITCURV_CONFIG_DIR) / name; }

Result run(const std::string& args, const fs::path& work) {
  const auto out = work / "stdout.txt";
  const auto err = work / "stderr.txt";
  const std::string cmd = std::string("\"") + ORBITCURV_TOOL + "\" " + args + " >\"" + out.string() +
                          "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
}

Json read_json(const fs::path& file) { return Json::parse(read_file(file)); }

std::vector<std::string> listing(const fs::path& dir) {
  std::vector<std::string> names;
  if (!fs::exists(dir)) return names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

bool no_temporaries(const fs::path& dir) {
  for (const auto& n : listing(dir)) {
    if (n.size() >= 4 && n.substr(n.size() - 4) == ".tmp") return false;
  }
  return true;
}

std::string small_certify(double k, std::uint64_t seed = 21) {
  return R"({"seed": )" + std::to_string(seed) + R"(,
  "manifold": {"profile": "cosh", "u_min": -1.0, "u_max": 1.0},
  "certify": {"K": )" + orbitcurv::io::format_double(k) + R"(,
    "sampler": {"count": 12, "n_u": 128, "n_time": 16, "t_values": [0.25, 0.5, 0.75]}}
})";
}

}  // namespace

TEST(Cli, DisintegrateAnnulus) {
  const auto work = scratch("annulus");
  const auto r = run("disintegrate --config \"" + config("annulus.json").string() + "\" --out \"" +
                         (work / "run").string() + "\"",
                     work);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto files = listing(work / "run");
  for (const char* f : {"manifest.json", "report.json", "density.csv", "quotient.csv", "conditionals.csv"}) {
    EXPECT_NE(std::find(files.begin(), files.end(), f), files.end()) << f;
  }
  EXPECT_TRUE(no_temporaries(work / "run"));
  const auto rep = read_json(work / "run" / "report.json");
  EXPECT_LE(rep.at("gluing_residual").get<double>(), 1e-10);
  EXPECT_NEAR(rep.at("band_volume").get<double>(), std::numbers::pi * (1.5 * 1.5 - 0.5 * 0.5), 1e-9);
  const auto man = read_json(work / "run" / "manifest.json");
  EXPECT_EQ(man.at("command"), "disintegrate");
  EXPECT_EQ(man.at("files").back(), "manifest.json");
  EXPECT_TRUE(man.at("timing").contains("total_seconds"));
  EXPECT_EQ(man.at("config_hash").get<std::string>().size(), 16u);
}

TEST(Cli, TransportTranslation) {
  const auto work = scratch("translation");
  const auto r = run("transport --config \"" + config("translation.json").string() + "\" --out \"" +
                         (work / "run").string() + "\"",
                     work);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = read_json(work / "run" / "report.json");
  EXPECT_NEAR(rep.at("w2").get<double>(), 0.75, 1e-9);
  EXPECT_LE(rep.at("geodesic_defect").get<double>(), 1e-9);
  EXPECT_TRUE(fs::exists(work / "run" / "map.csv"));
  EXPECT_TRUE(fs::exists(work / "run" / "jacobians.csv"));
}

TEST(Cli, TransportLinearProgramCheck) {
  const auto work = scratch("lp");
  const auto r = run("transport --config \"" + config("lp_check.json").string() + "\" --out \"" +
                         (work / "run").string() + "\"",
                     work);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = read_json(work / "run" / "report.json");
  EXPECT_LE(rep.at("lp").at("abs_difference").get<double>(), 1e-8);
  EXPECT_TRUE(fs::exists(work / "run" / "plan.csv"));
}

TEST(Cli, CertifyPassAndFailExitCodes) {
  const auto work = scratch("certify");
  write_text(work / "pass.json", small_certify(-1.0));
  write_text(work / "fail.json", small_certify(-0.5));
  const auto pass = run("certify --jobs 4 --config \"" + (work / "pass.json").string() + "\" --out \"" +
                            (work / "pass").string() + "\"",
                        work);
  ASSERT_EQ(pass.code, 0) << pass.err;
  EXPECT_NE(pass.out.find("PASS"), std::string::npos);
  const auto fail = run("certify --jobs 4 --config \"" + (work / "fail.json").string() + "\" --out \"" +
                            (work / "fail").string() + "\"",
                        work);
  ASSERT_EQ(fail.code, 1) << fail.err;
  EXPECT_NE(fail.out.find("FAIL"), std::string::npos);
  EXPECT_NE(fail.out.find("witness"), std::string::npos);
  const auto rep = read_json(work / "fail" / "report.json");
  EXPECT_FALSE(rep.at("pass").get<bool>());
  EXPECT_LT(rep.at("witness").at("residual").get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(work / "fail" / "k_samples.csv"));
}

TEST(Cli, OutputsAreDeterministicAcrossRunsAndJobs) {
  const auto work = scratch("determinism");
  write_text(work / "c.json", small_certify(-1.0, 5));
  const std::string base = "certify --config \"" + (work / "c.json").string() + "\" --out \"";
  ASSERT_EQ(run(base + (work / "a").string() + "\" --jobs 1", work).code, 0);
  ASSERT_EQ(run(base + (work / "b").string() + "\" --jobs 1", work).code, 0);
  ASSERT_EQ(run(base + (work / "c").string() + "\" --jobs 6", work).code, 0);
  for (const char* f : {"report.json", "k_samples.csv"}) {
    const auto a = read_file(work / "a" / f);
    EXPECT_EQ(a, read_file(work / "b" / f)) << f;
    EXPECT_EQ(a, read_file(work / "c" / f)) << f;
  }
  const auto d = "disintegrate --config \"" + config("random_density.json").string() + "\" --out \"";
  ASSERT_EQ(run(d + (work / "d1").string() + "\"", work).code, 0);
  ASSERT_EQ(run(d + (work / "d2").string() + "\" --jobs 3", work).code, 0);
  for (const char* f : {"report.json", "density.csv", "quotient.csv", "conditionals.csv"}) {
    EXPECT_EQ(read_file(work / "d1" / f), read_file(work / "d2" / f)) << f;
  }
}

TEST(Cli, SeedOverrideChangesSamples) {
  const auto work = scratch("seed");
  write_text(work / "c.json", small_certify(-1.0, 5));
  const std::string base = "certify --config \"" + (work / "c.json").string() + "\" --out \"";
  ASSERT_EQ(run(base + (work / "a").string() + "\"", work).code, 0);
  ASSERT_EQ(run(base + (work / "b").string() + "\" --seed 77", work).code, 0);
  EXPECT_NE(read_file(work / "a" / "k_samples.csv"), read_file(work / "b" / "k_samples.csv"));
  EXPECT_EQ(read_json(work / "b" / "manifest.json").at("seed").get<int>(), 77);
}

TEST(Cli, MalformedInputsExitTwoWithLocation) {
  const auto work = scratch("malformed");
  write_text(work / "syntax.json", "{\n  \"seed\": 1,\n  \"manifold\": {\n}}}\n");
  write_text(work / "unknown.json",
             "{\n  \"seed\": 1,\n  \"manifold\": {\"profile\": \"sin\", \"u_min\": 0, \"u_max\": 3},\n"
             "  \"certify\": {\"K\": 0,\n    \"sampler\": {\"cuont\": 3}}\n}\n");
  const auto r1 = run("certify --config \"" + (work / "syntax.json").string() + "\" --out \"" +
                          (work / "o1").string() + "\"",
                      work);
  EXPECT_EQ(r1.code, 2);
  EXPECT_EQ(r1.err.rfind((work / "syntax.json").string() + ":4:", 0), 0u) << r1.err;
  const auto r2 = run("certify --config \"" + (work / "unknown.json").string() + "\" --out \"" +
                          (work / "o2").string() + "\"",
                      work);
  EXPECT_EQ(r2.code, 2);
  EXPECT_NE(r2.err.find("unknown.json:5: certify.sampler.cuont: unknown key"), std::string::npos) << r2.err;
  EXPECT_FALSE(fs::exists(work / "o1"));
  EXPECT_FALSE(fs::exists(work / "o2"));

  EXPECT_EQ(run("certify --config /nonexistent.json --out x", work).code, 2);
  EXPECT_EQ(run("certify --out x", work).code, 2);
  EXPECT_EQ(run("certify --config a.json --jobs 0", work).code, 2);
  EXPECT_EQ(run("frobnicate", work).code, 2);
  const auto no_section = run("transport --config \"" + config("annulus.json").string() + "\" --out \"" +
                                  (work / "o3").string() + "\"",
                              work);
  EXPECT_EQ(no_section.code, 2);
  EXPECT_NE(no_section.err.find("annulus.json:1: missing required section 'transport'"), std::string::npos)
      << no_section.err;
}

TEST(Cli, StageErrorExitsThreeAndWritesNothing) {
  const auto work = scratch("stage");
  write_text(work / "pole.json", R"({"seed": 2,
  "manifold": {"profile": "sin", "u_min": 0.0, "u_max": 3.141592653589793},
  "certify": {"K": 0.9,
    "sampler": {"count": 4, "n_u": 64, "n_time": 8, "t_values": [0.5], "region": [0.8, 2.3]},
    "taylor": {"base": 0.05, "thetas": [0.2, 0.1]}}
})");
  const auto r = run("certify --config \"" + (work / "pole.json").string() + "\" --out \"" +
                         (work / "run").string() + "\"",
                     work);
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("stage 'convexity'"), std::string::npos) << r.err;
  EXPECT_TRUE(listing(work / "run").empty());
}

TEST(Cli, ReportCommand) {
  const auto work = scratch("report");
  const auto empty = run("report --out \"" + (work / "nothing").string() + "\"", work);
  EXPECT_EQ(empty.code, 2);
  EXPECT_NE(empty.err.find("manifest.json:1: missing manifest"), std::string::npos) << empty.err;

  write_text(work / "c.json", small_certify(-1.0, 5));
  ASSERT_EQ(run("certify --config \"" + (work / "c.json").string() + "\" --out \"" + (work / "run").string() + "\"",
                work)
                .code,
            0);
  const auto r = run("report --out \"" + (work / "run").string() + "\"", work);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"k_histogram.csv", "k_bins.csv", "residual_vs_t.csv"}) {
    EXPECT_TRUE(fs::exists(work / "run" / f)) << f;
  }
  const auto man = read_json(work / "run" / "manifest.json");
  EXPECT_EQ(man.at("report_files").size(), 3u);
  // One histogram row per sample that was not skipped, plus the header.
  const auto rep = read_json(work / "run" / "report.json");
  std::size_t used = 0;
  for (const auto& s : rep.at("samples")) used += s.at("skipped").get<bool>() ? 0 : 1;
  const auto hist = read_file(work / "run" / "k_histogram.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(hist.begin(), hist.end(), '\n')), used + 1);
  EXPECT_TRUE(no_temporaries(work / "run"));
}

TEST(Cli, DensityCsvRoundTrip) {
  const auto work = scratch("csv");
  ASSERT_EQ(run("disintegrate --config \"" + config("random_density.json").string() + "\" --out \"" +
                    (work / "first").string() + "\"",
                work)
                .code,
            0);
  const auto first = read_json(work / "first" / "report.json");
  const auto cfg = read_json(config("random_density.json"));
  Json again;
  again["seed"] = 1;
  again["manifold"] = cfg.at("manifold");
  again["density"] = {{"source", "csv"}, {"path", (work / "first" / "density.csv").string()}};
  write_text(work / "again.json", again.dump(2));
  const auto r = run("disintegrate --config \"" + (work / "again.json").string() + "\" --out \"" +
                         (work / "second").string() + "\"",
                     work);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto second = read_json(work / "second" / "report.json");
  const auto& q1 = first.at("marginal").at("q");
  const auto& q2 = second.at("marginal").at("q");
  ASSERT_EQ(q1.size(), q2.size());
  for (std::size_t i = 0; i < q1.size(); ++i) EXPECT_NEAR(q1[i].get<double>(), q2[i].get<double>(), 1e-12);

  write_text(work / "broken.csv", "u,theta,rho\n0.5,0,1\n0.5,0.1,oops\n");
  again["density"]["path"] = (work / "broken.csv").string();
  write_text(work / "broken.json", again.dump(2));
  const auto b = run("disintegrate --config \"" + (work / "broken.json").string() + "\" --out \"" +
                         (work / "third").string() + "\"",
                     work);
  EXPECT_EQ(b.code, 2);
  EXPECT_NE(b.err.find("broken.csv:3: non-numeric cell"), std::string::npos) << b.err;
}
