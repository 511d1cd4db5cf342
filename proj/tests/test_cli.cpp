#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fliptest/fliptest.hpp"

namespace fs = std::filesystem;
using fliptest::json;

namespace {

const std::string kCli = FLIPTEST_CLI_PATH;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::size_t data_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  std::getline(in, line);
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::path(FLIPTEST_CLI_SCRATCH) / info->name();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  /// Runs the CLI with `args`; returns its exit status.
  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.string() + "' && '" + kCli + "' " + args + " > cli.log 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path path(const std::string& rel) const { return dir_ / rel; }

  void write(const std::string& rel, const std::string& text) const {
    std::ofstream out(path(rel));
    out << text;
  }

  fs::path dir_;
};

TEST_F(Cli, ExactMapOnTwoPointsPerGroup) {
  write("tiny.csv", "x,y,group\n0,0,a\n5,5,a\n5,6,b\n0,1,b\n");
  ASSERT_EQ(run("map --method exact --input tiny.csv --no-normalize --out m"), 0);
  EXPECT_EQ(slurp(path("m/assignment.csv")), "source_index,target_index\n0,3\n1,2\n");
  const json summary = read_json(path("m/map_summary.json"));
  EXPECT_EQ(summary["n"], 2);
  EXPECT_DOUBLE_EQ(summary["total_cost"].get<double>(), 2.0);
  EXPECT_DOUBLE_EQ(summary["mean_cost"].get<double>(), 1.0);
}

TEST_F(Cli, RunJsonEchoesConfigAndDigests) {
  write("tiny.csv", "x,group\n0,a\n5,a\n5,b\n1,b\n");
  ASSERT_EQ(run("--seed 9 map --input tiny.csv --out m --cost l1"), 0);
  const json r = read_json(path("m/run.json"));
  EXPECT_EQ(r["command"], "map");
  EXPECT_EQ(r["seed"], 9);
  EXPECT_EQ(r["cost"], "l1");
  EXPECT_EQ(r["config"]["method"], "exact");
  EXPECT_EQ(r["config"]["source_group"], "a");
  const std::string digest = r["artifacts"]["assignment.csv"];
  std::ostringstream hex;
  hex << std::hex;
  hex.width(16);
  hex.fill('0');
  hex << fliptest::fnv1a64(slurp(path("m/assignment.csv")));
  EXPECT_EQ(digest, hex.str());
}

TEST_F(Cli, SourceGroupFlagSwapsDirection) {
  write("tiny.csv", "x,group\n0,a\n5,a\n5,b\n1,b\n");
  ASSERT_EQ(run("map --input tiny.csv --source-group b --out m --no-normalize"), 0);
  EXPECT_EQ(slurp(path("m/assignment.csv")), "source_index,target_index\n2,1\n3,0\n");
}

TEST_F(Cli, UnequalGroupsAreSubsampled) {
  write("u.csv", "x,group\n0,a\n1,a\n2,a\n3,a\n9,b\n8,b\n");
  ASSERT_EQ(run("map --input u.csv --out m"), 0);
  EXPECT_EQ(data_lines(path("m/assignment.csv")), 2u);
  EXPECT_TRUE(read_json(path("m/map_summary.json"))["subsampled"].get<bool>());
  EXPECT_EQ(run("map --input u.csv --subsample 3 --out m2"), 2);
}

TEST_F(Cli, GanSmokeRunRoundTripsAndIsReproducible) {
  ASSERT_EQ(run("--seed 4 synth --kind hiring --n 200 --out data.csv"), 0);
  ASSERT_EQ(run("--seed 4 map --method gan --steps 10 --batch 16 --input data.csv --out g1"), 0);
  ASSERT_EQ(run("--seed 4 map --method gan --steps 10 --batch 16 --input data.csv --out g2"), 0);
  const auto model = fliptest::load_generator_model(path("g1/generator.json").string());
  EXPECT_EQ(model.config.generator_steps, 10u);
  EXPECT_EQ(model.config.batch_size, 16u);
  EXPECT_EQ(model.feature_names, fliptest::hiring_feature_names());
  EXPECT_EQ(model.source_group, "female");
  ASSERT_TRUE(model.normalizer.has_value());
  EXPECT_EQ(slurp(path("g1/generator.json")), slurp(path("g2/generator.json")));

  // Reloading and saving again gives the same bytes.
  fliptest::save_generator_model(model, path("resaved.json").string());
  EXPECT_EQ(slurp(path("g1/generator.json")), slurp(path("resaved.json")));

  ASSERT_EQ(run("--seed 5 map --method gan --steps 10 --batch 16 --input data.csv --out g3"), 0);
  EXPECT_NE(slurp(path("g1/generator.json")), slurp(path("g3/generator.json")));
}

TEST_F(Cli, RerunIntoSameDirectoryIsByteIdentical) {
  ASSERT_EQ(run("--seed 2 synth --kind geometric --n 300 --out d/geo.csv"), 0);
  ASSERT_EQ(run("--seed 2 map --input d/geo.csv --out m"), 0);
  ASSERT_EQ(run("--seed 2 flipset --input d/geo.csv --map m/assignment.csv --out a"), 0);
  const std::string files[] = {"d/geo.csv", "d/run.json", "m/assignment.csv", "m/run.json",
                               "a/flipset.json", "a/flipped_rows.csv", "a/run.json"};
  std::vector<std::string> first;
  for (const auto& f : files) first.push_back(slurp(path(f)));
  ASSERT_EQ(run("--seed 2 synth --kind geometric --n 300 --out d/geo.csv"), 0);
  ASSERT_EQ(run("--seed 2 map --input d/geo.csv --out m"), 0);
  ASSERT_EQ(run("--seed 2 flipset --input d/geo.csv --map m/assignment.csv --out a"), 0);
  for (std::size_t i = 0; i < std::size(files); ++i) EXPECT_EQ(slurp(path(files[i])), first[i]) << files[i];
}

TEST_F(Cli, IdentityMapAuditHasNoFlips) {
  ASSERT_EQ(run("synth --kind hiring --n 300 --out data.csv"), 0);
  ASSERT_EQ(run("audit --input data.csv --map identity --classifier hiring_fair --out a"), 0);
  const json j = read_json(path("a/flipset.json"));
  EXPECT_EQ(j["flip_pos"], 0);
  EXPECT_EQ(j["flip_neg"], 0);
  EXPECT_EQ(j["n_source"], 300);
  EXPECT_EQ(j["per_side"]["positive"], "empty");
  EXPECT_EQ(j["per_side"]["negative"], "empty");
  EXPECT_EQ(data_lines(path("a/flipped_rows.csv")), 0u);
}

TEST_F(Cli, GeometricPipelineFlipsOnlyPositives) {
  ASSERT_EQ(run("--seed 1 synth --kind geometric --n 600 --out geo.csv"), 0);
  ASSERT_EQ(run("--seed 1 map --input geo.csv --out m"), 0);
  ASSERT_EQ(run("--seed 1 flipset --input geo.csv --map m/assignment.csv --classifier arrests --out a"), 0);
  const json j = read_json(path("a/flipset.json"));
  EXPECT_GT(j["flip_pos"].get<int>(), 0);
  EXPECT_LE(j["flip_neg"].get<int>(), 5);
  EXPECT_EQ(j["net"].get<long long>(), j["positives_source"].get<long long>() - j["positives_target"].get<long long>());
  EXPECT_EQ(j["per_side"]["positive"]["mean_sign"]["arrests"].get<double>(), 1.0);
  EXPECT_EQ(data_lines(path("a/flipped_rows.csv")),
            j["flip_pos"].get<std::size_t>() + j["flip_neg"].get<std::size_t>());
}

TEST_F(Cli, ExcludedFeaturesLeaveTheRankings) {
  ASSERT_EQ(run("synth --kind hiring --n 300 --out data.csv"), 0);
  ASSERT_EQ(run("map --input data.csv --out m"), 0);
  ASSERT_EQ(run("flipset --input data.csv --map m/assignment.csv --classifier hiring_fair --out all"), 0);
  ASSERT_EQ(run("flipset --input data.csv --map m/assignment.csv --classifier hiring_fair "
                "--exclude-feature hair_length --exclude-feature group --out some"),
            0);
  const json all = read_json(path("all/flipset.json"));
  const json some = read_json(path("some/flipset.json"));
  ASSERT_TRUE(all["per_side"]["positive"].is_object());
  EXPECT_EQ(all["per_side"]["positive"]["ranking_by_diff"].size(), 2u);
  const json& side = some["per_side"]["positive"];
  EXPECT_EQ(side["ranking_by_diff"], json::array({"work_exp"}));
  EXPECT_EQ(side["ranking_by_sign"], json::array({"work_exp"}));
  EXPECT_FALSE(side["mean_diff"].contains("hair_length"));
  EXPECT_EQ(side["mean_diff"]["work_exp"], all["per_side"]["positive"]["mean_diff"]["work_exp"]);
  EXPECT_EQ(some["flip_pos"], all["flip_pos"]);
}

TEST_F(Cli, LinearAndPredictionsClassifiersAgree) {
  write("d.csv", "x,group\n0,a\n3,a\n4,b\n1,b\n");
  write("pred.csv", "row,prediction\n0,0\n1,1\n2,1\n3,0\n");
  ASSERT_EQ(run("map --input d.csv --no-normalize --out m"), 0);
  ASSERT_EQ(run("flipset --input d.csv --map m/assignment.csv --classifier linear:1:2 --out lin"), 0);
  ASSERT_EQ(run("flipset --input d.csv --map m/assignment.csv --classifier predictions --predictions pred.csv --out p"),
            0);
  EXPECT_EQ(read_json(path("lin/flipset.json"))["flip_pos"], read_json(path("p/flipset.json"))["flip_pos"]);
  EXPECT_EQ(read_json(path("lin/flipset.json"))["flip_pos"], 0);
}

TEST_F(Cli, ReportHistogramShape) {
  ASSERT_EQ(run("synth --kind hiring --n 200 --out data.csv"), 0);
  ASSERT_EQ(run("map --input data.csv --out m"), 0);
  ASSERT_EQ(run("report --input data.csv --map m/assignment.csv --classifier hiring_fair --histogram --bins 7 --out r"),
            0);
  EXPECT_TRUE(fs::exists(path("r/report.json")));
  for (const char* f : {"r/histogram_positive.csv", "r/histogram_negative.csv"}) {
    EXPECT_EQ(data_lines(path(f)), 14u) << f;
    std::ifstream in(path(f));
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "feature,bin_left,bin_right,count_population,count_flipset");
  }
}

TEST_F(Cli, EqualizedOddsWritesOneBundlePerStratum) {
  ASSERT_EQ(run("synth --kind hiring --n 300 --out data.csv"), 0);
  ASSERT_EQ(run("map --input data.csv --stratum 1 --out m1"), 0);
  ASSERT_EQ(run("map --input data.csv --stratum 0 --out m0"), 0);
  ASSERT_EQ(run("audit --input data.csv --mode equalized_odds --map m1/assignment.csv --map-neg m0/assignment.csv "
                "--classifier hiring_fair --out eo"),
            0);
  for (const char* f : {"eo/flipset_label1.json", "eo/flipset_label0.json", "eo/flipped_rows_label1.csv",
                        "eo/flipped_rows_label0.csv"}) {
    EXPECT_TRUE(fs::exists(path(f))) << f;
  }
  const json l1 = read_json(path("eo/flipset_label1.json"));
  const json l0 = read_json(path("eo/flipset_label0.json"));
  EXPECT_EQ(l1["n_source"].get<std::size_t>(), data_lines(path("m1/assignment.csv")));
  EXPECT_EQ(l0["n_source"].get<std::size_t>(), data_lines(path("m0/assignment.csv")));
}

TEST_F(Cli, ValidateOnIdenticalGroupsIsZero) {
  std::string csv = "u,v,group\n";
  for (int i = 0; i < 40; ++i) {
    const std::string row = std::to_string(i % 7) + "," + std::to_string((i * 13) % 11);
    csv += row + ",a\n" + row + ",b\n";
  }
  write("same.csv", csv);
  ASSERT_EQ(run("validate --input same.csv --generator identity --trials 3 --resample none --out v"), 0);
  std::ifstream in(path("v/validation.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "feature,ks_mean,ks_std,msediff_mean,msediff_std");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::stringstream ss(line);
    std::string name, field;
    std::getline(ss, name, ',');
    while (std::getline(ss, field, ',')) EXPECT_NEAR(std::stod(field), 0.0, 1e-12) << line;
  }
  EXPECT_EQ(rows, 2u);
  const json j = read_json(path("v/validation.json"));
  EXPECT_NEAR(j["dist_exact"].get<double>(), 0.0, 1e-12);
  EXPECT_NEAR(j["dist_gan"].get<double>(), 0.0, 1e-12);
}

TEST_F(Cli, StabilityQuickModeShape) {
  ASSERT_EQ(run("stability --dims 2 --n 100 --draws 10 --steps 20 --out s"), 0);
  std::ifstream in(path("s/stability.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "dim,feature_index,variance_exact,variance_gan");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].rfind("2,0,", 0), 0u);
  EXPECT_EQ(rows[1].rfind("2,1,", 0), 0u);
  const json j = read_json(path("s/stability.json"));
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["variance_exact"].size(), 2u);
  EXPECT_EQ(j[0]["variance_gan"].size(), 2u);
}

TEST_F(Cli, ThreadCapDoesNotChangeOutputs) {
  ASSERT_EQ(run("stability --dims 2 --n 60 --draws 6 --steps 5 --out one"), 0);
  ASSERT_EQ(run("stability --dims 2 --n 60 --draws 6 --steps 5 --out two"), 0);
  const int rc = std::system(("cd '" + dir_.string() + "' && FLIPTEST_THREADS=3 '" + kCli +
                              "' stability --dims 2 --n 60 --draws 6 --steps 5 --out three > /dev/null 2>&1")
                                 .c_str());
  ASSERT_EQ(WEXITSTATUS(rc), 0);
  EXPECT_EQ(slurp(path("one/stability.csv")), slurp(path("two/stability.csv")));
  EXPECT_EQ(slurp(path("one/stability.csv")), slurp(path("three/stability.csv")));
}

TEST_F(Cli, ControlWritesSummary) {
  ASSERT_EQ(run("control --n 200 --anchors 50 --steps 5 --batch 16 --out c"), 0);
  const json j = read_json(path("c/control.json"));
  EXPECT_EQ(j["classified_positive"].get<int>() + j["classified_negative"].get<int>(), 200);
  EXPECT_EQ(j["mean_abs_displacement"].size(), 6u);
}

TEST_F(Cli, ExitCodes) {
  write("tiny.csv", "x,group\n0,a\n1,b\n");
  write("three.csv", "x,group\n0,a\n1,b\n2,c\n");
  write("nolabel.csv", "x,group\n0,a\n1,b\n");
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("map"), 2);                                              // missing --input
  EXPECT_EQ(run("map --input tiny.csv --method magic --out o"), 2);      // bad method
  EXPECT_EQ(run("map --input tiny.csv --cost l7 --out o"), 2);           // bad cost
  EXPECT_EQ(run("map --input tiny.csv --method gan --steps 0 --out o"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("map --input missing.csv --out o"), 3);
  EXPECT_EQ(run("map --input three.csv --out o"), 3);
  EXPECT_EQ(run("audit --input nolabel.csv --mode equalized_odds --map-neg identity --out o"), 3);
  EXPECT_EQ(run("audit --input tiny.csv --map nothere.csv --out o"), 3);
  EXPECT_EQ(run("map --input tiny.csv --method gan --steps 5 --batch 2 --lr 1e200 --out o"), 4);
  EXPECT_NE(slurp(path("cli.log")).find("not finite"), std::string::npos);
}

}  // namespace
