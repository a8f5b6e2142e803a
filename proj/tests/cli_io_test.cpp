#include "aggfair/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace aggfair {
namespace {

namespace fs = std::filesystem;

std::string error_of(std::string_view text) {
  try {
    io::parse_config_text(text);
  } catch (const io::ConfigError& e) {
    return e.what();
  }
  return "";
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("aggfair_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string file(const std::string& name, const std::string& text) {
    std::ofstream(root_ / name) << text;
    return (root_ / name).string();
  }
  std::string path(const std::string& name) const { return (root_ / name).string(); }

  static int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "aggfair");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run_cli(static_cast<int>(argv.size()), argv.data());
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path root_;
};

const char* kMarket = R"({"market": {"price": {"kind": "linear", "c": 0.05}, "rng_seed": 3,
  "tolerances": {"tol_br": 1e-5},
  "aggregators": [
    {"id": 4, "alpha": 1, "users": [{"id": 0, "a": 0.5, "b": 6}, {"id": 1, "a": 0.3, "b": 4}]},
    {"id": 9, "alpha": "inf", "users": [{"id": 2, "a": 0.2, "b": 5, "size_class": "large"}]}]}})";

TEST(ParseConfig, PresetWithOverrides) {
  const auto cfg = io::parse_config_text(R"({"preset": "baseline_400", "base_seed": 7})");
  const auto& s = std::get<ScenarioSpec>(cfg);
  auto expected = build_preset("baseline_400");
  expected.base_seed = 7;
  EXPECT_EQ(s, expected);
}

TEST(ParseConfig, Market) {
  const auto cfg = io::parse_config_text(kMarket);
  const auto& m = std::get<MarketConfig>(cfg);
  ASSERT_EQ(m.aggregators.size(), 2u);
  EXPECT_EQ(m.aggregators[0].id, 4);
  EXPECT_EQ(m.aggregators[1].alpha, kInfinity);
  EXPECT_EQ(m.aggregators[1].users[0].size_class, SizeClass::kLarge);
  EXPECT_EQ(m.tolerances.tol_br, 1e-5);
  EXPECT_EQ(m.rng_seed, 3u);
}

TEST(ParseConfig, ErrorsNameTheField) {
  EXPECT_NE(error_of(R"({"preset": "two_agg_plus_large", "alphas": [-1]})").find("alphas[0]"), std::string::npos);
  EXPECT_NE(error_of(R"({"preset": "two_agg_plus_large", "alphas": [-1]})").find("alpha must be >= 0"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"preset": "nope"})").find("unknown preset"), std::string::npos);
  EXPECT_NE(error_of(R"({"population": {"n_small": 5, "extra": 1}})").find("population.extra"), std::string::npos);
  EXPECT_NE(error_of(R"({"n_runs": 1.5})").find("n_runs"), std::string::npos);
  EXPECT_NE(error_of(R"({"market": {"aggregators": [{"users": [{"id": 0, "a": -1, "b": 2}]}]}})")
                .find("market.aggregators[0].users[0]"),
            std::string::npos);
  EXPECT_NE(error_of("[1, 2]").find("object"), std::string::npos);
}

TEST(ParseConfig, MalformedJsonReportsLineAndColumn) {
  const auto msg = error_of("{\n  \"n_runs\": 3,\n  \"alphas\": [1,,]\n}");
  EXPECT_NE(msg.find("line 3, column 16"), std::string::npos) << msg;
  EXPECT_NE(msg.find("malformed JSON"), std::string::npos);
  EXPECT_NE(error_of("{").find("line 1, column 2"), std::string::npos) << error_of("{");
}

TEST(Serialize, RoundTripsScenarios) {
  for (const auto& name : preset_names()) {
    const io::Config c = build_preset(name);
    EXPECT_EQ(io::config_from_json(io::serialize(c)), c) << name;
  }
  auto s = build_preset("two_agg_plus_large");
  s.alphas = {0.5, kInfinity};
  s.grouping = Grouping::explicit_groups({{1, 0}, {2}});
  s.population = {3, std::nullopt};
  s.tolerances.tol_x = 3e-11;
  s.base_seed = 18446744073709551615ull;
  const io::Config c = s;
  EXPECT_EQ(io::config_from_json(io::serialize(c)), c);
}

TEST(Serialize, RoundTripsMarkets) {
  const auto c = io::parse_config_text(kMarket);
  EXPECT_EQ(io::config_from_json(io::serialize(c)), c);
  const io::Config built = build_market(build_preset("two_agg_plus_large"), 12);
  EXPECT_EQ(io::config_from_json(io::serialize(built)), built);
}

TEST(Format, SpellsOutNonFinite) {
  EXPECT_EQ(io::fmt(kInfinity), "inf");
  EXPECT_EQ(io::fmt(-kInfinity), "-inf");
  EXPECT_EQ(io::fmt(std::nan("")), "nan");
  EXPECT_EQ(std::stod(io::fmt(0.1)), 0.1);
}

TEST_F(TempDir, RunWritesEveryTable) {
  const auto cfg = file("m.json", kMarket);
  ASSERT_EQ(cli({"run", "--config", cfg, "--out", path("out")}), cli::kOk);
  for (const auto* f : {"trajectory.csv", "equilibrium.csv", "users.csv", "summary.csv", "summary.json"})
    EXPECT_TRUE(fs::exists(root_ / "out" / f)) << f;
  const auto users = slurp(root_ / "out" / "users.csv");
  EXPECT_EQ(users.substr(0, users.find('\n')), "run,user_id,aggregator_id,a,b,x,surplus,size_class");
  EXPECT_NE(users.find(",9,"), std::string::npos);
  const auto summary = io::json::parse(slurp(root_ / "out" / "summary.json"));
  EXPECT_EQ(summary["config"], io::serialize(io::parse_config_text(kMarket)));
}

TEST_F(TempDir, ExitCodes) {
  EXPECT_EQ(cli({"run", "--config", file("bad.json", R"({"alphas": [-1]})"), "--out", path("o")}), cli::kConfigError);
  EXPECT_EQ(cli({"run", "--config", file("broken.json", "{"), "--out", path("o")}), cli::kConfigError);
  EXPECT_EQ(cli({"run", "--config", path("missing.json"), "--out", path("o")}), cli::kConfigError);
  EXPECT_EQ(cli({"frobnicate"}), cli::kConfigError);
  EXPECT_EQ(cli({"sweep", "--out", path("o")}), cli::kConfigError);

  const auto slow = file("slow.json", R"({"preset": "two_agg_plus_large", "population": {"n_small": 20, "large_K": 20},
    "tolerances": {"max_br_iters": 1}})");
  EXPECT_EQ(cli({"run", "--config", slow, "--out", path("lax")}), cli::kOk);
  EXPECT_EQ(cli({"run", "--config", slow, "--out", path("strict"), "--strict"}), cli::kNotConverged);
  EXPECT_TRUE(fs::exists(root_ / "strict" / "summary.json"));
}

TEST_F(TempDir, RepeatedRunsAreByteIdentical) {
  const auto cfg = file("s.json", R"({"preset": "two_agg_plus_large", "alphas": [1], "n_runs": 2,
    "population": {"n_small": 30, "large_K": 30}})");
  ASSERT_EQ(cli({"run", "--config", cfg, "--out", path("a")}), cli::kOk);
  ASSERT_EQ(cli({"run", "--config", cfg, "--out", path("b")}), cli::kOk);
  for (const auto& e : fs::directory_iterator(root_ / "a"))
    EXPECT_EQ(slurp(e.path()), slurp(root_ / "b" / e.path().filename())) << e.path().filename();
}

TEST_F(TempDir, SweepOverridesRunsAndSeed) {
  ASSERT_EQ(cli({"sweep", "--preset", "large_user_sweep", "--runs", "1", "--seed", "4", "--out", path("o")}),
            cli::kOk);
  const auto summary = io::json::parse(slurp(root_ / "o" / "summary.json"));
  EXPECT_EQ(summary["config"]["n_runs"], 1);
  EXPECT_EQ(summary["config"]["base_seed"], 4);
  ASSERT_EQ(summary["points"].size(), 9u);
  EXPECT_EQ(summary["points"][8]["first_run"], 8);
}

TEST_F(TempDir, ProbesAndPareto) {
  const auto m = file("m.json", kMarket);
  EXPECT_EQ(cli({"probe", "--config", m, "--kind", "unimodality", "--grid", "51", "--out", path("u")}), cli::kOk);
  EXPECT_TRUE(fs::exists(root_ / "u" / "probe_samples.csv"));
  EXPECT_EQ(cli({"probe", "--config", m, "--kind", "uniqueness", "--starts", "3", "--out", path("q")}), cli::kOk);
  EXPECT_TRUE(fs::exists(root_ / "q" / "uniqueness.csv"));
  const auto pair = file("p.json", R"({"users": [{"a": 1, "b": 40}, {"a": 1, "b": 4}], "y": 10, "p": 0,
    "alphas": [0, 1, "inf"], "front_points": 5})");
  EXPECT_EQ(cli({"pareto", "--config", pair, "--out", path("p")}), cli::kOk);
  const auto csv = slurp(root_ / "p" / "pareto.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST_F(TempDir, SchemaListsEveryExport) {
  ASSERT_EQ(cli({"export-schema", "--out", path("s")}), cli::kOk);
  const auto schema = io::json::parse(slurp(root_ / "s" / "schema.json"));
  for (const auto* t : {"trajectory", "equilibrium", "users", "summary", "pareto"})
    EXPECT_TRUE(schema["tables"].contains(t)) << t;
  EXPECT_EQ(schema["tables"]["summary"]["columns"].size(), io::summary_columns().size());
}

}  // namespace
}  // namespace aggfair
