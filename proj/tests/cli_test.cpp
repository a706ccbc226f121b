#include <gtest/gtest.h>

#include <map>

#include <json.hpp>

#include "cforge/autoencoder.hpp"
#include "cforge/cav.hpp"
#include "cforge/dataset.hpp"
#include "cforge/io.hpp"
#include "pipeline.hpp"

using namespace cforge;
using cforge::testing::run_cli;
using cforge::testing::cli_ok;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_text_file(e.path());
  }
  return files;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { pipeline_ = new cforge::testing::TinyPipeline(); }
  static void TearDownTestSuite() { delete pipeline_; }
  static std::string p(const std::string& name) { return pipeline_->p(name); }

  // Runs twice into the same place; every file written must be byte-identical.
  static void expect_deterministic(const std::vector<std::string>& args, const fs::path& out_dir) {
    std::string out1, out2;
    fs::remove_all(out_dir);
    fs::create_directories(out_dir);
    ASSERT_EQ(run_cli(args, &out1), 0);
    const auto first = snapshot(out_dir);
    fs::remove_all(out_dir);
    fs::create_directories(out_dir);
    ASSERT_EQ(run_cli(args, &out2), 0);
    EXPECT_FALSE(first.empty());
    EXPECT_EQ(first, snapshot(out_dir));
    EXPECT_EQ(out1, out2);
  }

  static cforge::testing::TinyPipeline* pipeline_;
};

cforge::testing::TinyPipeline* CliTest::pipeline_ = nullptr;

}  // namespace

TEST_F(CliTest, GenDataIsDeterministic) {
  expect_deterministic({"gen-data", "--out", p("det/gen"), "--cars", "6", "--cuboids", "2", "--ellipsoids", "2",
                        "--bumps", "3", "--points", "32", "--seed", "5"},
                       p("det/gen"));
}

TEST_F(CliTest, TrainingIsDeterministic) {
  expect_deterministic({"train-ae", "--data", p("data"), "--out", p("det/ae/ae.txt"), "--epochs", "5", "--hidden",
                        "48,16", "--seed", "4"},
                       p("det/ae"));
  expect_deterministic({"train-reg", "--ae", p("ae.txt"), "--out", p("det/reg/reg.txt"), "--epochs", "10", "--seed",
                        "4"},
                       p("det/reg"));
  expect_deterministic({"train-cav", "--ae", p("ae.txt"), "--concept", p("cuboid.json"), "--counter", "random:20",
                        "--out", p("det/cav/c.json"), "--seed", "4"},
                       p("det/cav"));
  expect_deterministic({"tcav", "--ae", p("ae.txt"), "--reg", p("reg.txt"), "--concepts", p("concepts"), "--runs",
                        "10", "--sample", "10", "--out", p("det/tcav/report.csv"), "--seed", "4"},
                       p("det/tcav"));
}

TEST_F(CliTest, ExplorationIsDeterministic) {
  expect_deterministic({"blend", "--ae", p("ae.txt"), "--design", "car_0000", "--cavs", p("cavs"), "--term",
                        "cuboid-ellipsoid:0.3", "--term", "ellipsoid:-0.2", "--reg", p("reg.txt"), "--out",
                        p("det/blend")},
                       p("det/blend"));
  expect_deterministic({"grid", "--ae", p("ae.txt"), "--design", "car_0000", "--cav-a", p("cavs/cuboid.cav.json"),
                        "--cav-b", p("cavs/ellipsoid.cav.json"), "--steps", "3", "--out", p("det/grid")},
                       p("det/grid"));
  expect_deterministic({"query", "--cav", p("cavs/cuboid.cav.json"), "--k", "4", "--out", p("det/query/q.json")},
                       p("det/query"));
}

TEST_F(CliTest, BumpStudyIsDeterministic) {
  expect_deterministic({"bump-study", "--mode", "random", "--shapes", "24", "--points", "64", "--epochs", "5",
                        "--hidden", "32,16", "--steps", "5", "--seed", "2", "--save-ae", "--out", p("det/bump")},
                       p("det/bump"));
  const auto summary = nlohmann::json::parse(read_text_file(p("det/bump/summary.json")));
  EXPECT_TRUE(summary.contains("spearman"));

  // Default sweep half-width: the farthest shape from the base along the CAV.
  DatasetConfig dc;
  dc.cars = dc.cuboids = dc.ellipsoids = 0;
  dc.bumps = 24;
  dc.points = 64;
  dc.seed = 2;
  dc.bump_recipe.proportions = BumpRecipe::Proportions::kRandom;
  const auto data = generate_dataset(dc);
  const auto ae = load_autoencoder(p("det/bump/ae.txt"));
  const auto cav = load_cav(p("det/bump/highbump.cav.json"));
  const auto base_id = summary.at("base_design").get<std::string>();
  std::size_t base = data.clouds.size();
  for (std::size_t i = 0; i < data.manifest.entries.size(); ++i) {
    if (data.manifest.entries[i].id == base_id) base = i;
  }
  ASSERT_LT(base, data.clouds.size());
  const auto zb = encode(ae.model, data.clouds[base]);
  double widest = 0.0;
  for (const auto& c : data.clouds) {
    const auto z = encode(ae.model, c);
    double along = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) along += cav.w_hat[k] * (z[k] - zb[k]);
    widest = std::max(widest, std::abs(along));
  }
  EXPECT_GT(widest, 0.0);
  EXPECT_NEAR(summary.at("eps_range").get<double>(), widest, 1e-9);
  const auto sweep = read_text_file(p("det/bump/sweep.csv"));
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 6);
}

TEST_F(CliTest, TcavReportParses) {
  const auto report = TcavReport::from_csv(read_text_file(p("tcav.csv")));
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_EQ(report.rows[0].concept_name, "cuboid");
  EXPECT_EQ(report.rows[0].counter_name, "ellipsoid");
  EXPECT_EQ(report.rows[0].n_runs, 10u);
}

TEST_F(CliTest, QueryTopIsCuboidHeavy) {
  cli_ok({"train-cav", "--ae", p("ae.txt"), "--concept", p("cuboid.json"), "--counter", "random:20", "--out",
          p("cuboid_vs_random.json"), "--seed", "1"});
  std::string out;
  ASSERT_EQ(run_cli({"query", "--cav", p("cuboid_vs_random.json"), "--k", "5"}, &out), 0);
  std::istringstream lines(out);
  std::string line;
  int cuboids = 0;
  while (std::getline(lines, line)) cuboids += line.rfind("top,", 0) == 0 && line.find(",cuboid_") != std::string::npos;
  EXPECT_GE(cuboids, 3) << out;
}

TEST_F(CliTest, ConfigFileSuppliesFlags) {
  write_text_file(p("gen.toml"), "[gen-data]\ncars = 3\ncuboids = 1\nellipsoids = 1\npoints = 16\nseed = 9\n");
  cli_ok({"--config", p("gen.toml"), "gen-data", "--out", p("cfg")});
  EXPECT_EQ(load_manifest(p("cfg")).entries.size(), 5u);
}

TEST_F(CliTest, FailuresExitNonzeroWithOneLine) {
  auto expect_fail = [](const std::vector<std::string>& args) {
    std::string err;
    EXPECT_NE(run_cli(args, nullptr, &err), 0);
    EXPECT_EQ(err.rfind("error: ", 0), 0u) << err;
    EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1) << err;
  };
  expect_fail({"train-ae", "--data", p("missing"), "--out", p("x.txt")});
  expect_fail({"train-reg", "--ae", p("data/manifest.json"), "--out", p("x.txt")});
  expect_fail({"blend", "--ae", p("ae.txt"), "--design", "nope", "--cavs", p("cavs"), "--term", "ellipsoid:0.1",
               "--out", p("xb")});
  expect_fail({"blend", "--ae", p("ae.txt"), "--design", "car_0000", "--cavs", p("cavs"), "--term", "ellipsoid",
               "--out", p("xb")});
  expect_fail({"train-cav", "--ae", p("ae.txt"), "--concept", p("cuboid.json"), "--counter", "random:5000",
               "--out", p("x.json")});
  expect_fail({"bump-study", "--mode", "sideways", "--out", p("xb")});
  expect_fail({"no-such-command"});
  expect_fail({});
}

TEST_F(CliTest, TamperedAutoEncoderIsRejected) {
  fs::copy_file(p("ae.txt"), p("ae_copy.txt"));
  fs::copy_file(p("ae.txt.meta.json"), p("ae_copy.txt.meta.json"));
  auto text = read_text_file(p("ae_copy.txt"));
  const auto pos = text.rfind('1');
  text[pos] = '2';
  write_text_file(p("ae_copy.txt"), text);
  std::string err;
  EXPECT_EQ(run_cli({"train-reg", "--ae", p("ae_copy.txt"), "--out", p("x.txt")}, nullptr, &err), 1);
  EXPECT_NE(err.find("error:"), std::string::npos);
}
