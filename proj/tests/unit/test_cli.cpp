#include "commands.hpp"
#include "korol/errors.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace korol;
using namespace korol::cli;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("korol_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
            std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "korol");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return run(static_cast<int>(argv.size()), argv.data());
  }

  fs::path write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST(ParseConfig, KeysMirrorTrainConfig) {
  const auto c = parse_config(R"({"horizon": 12, "refresh_period": null, "learning_rate": 0.001,
                                  "use_frequency": false, "propagation": "relift", "pooling": "gap"})");
  EXPECT_EQ(c.horizon, 12);
  EXPECT_FALSE(c.refresh_period.has_value());
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_FALSE(c.use_frequency);
  EXPECT_EQ(c.propagation, Propagation::kRelift);
  EXPECT_EQ(c.pooling, Pooling::kGlobalAverage);
  EXPECT_FALSE(parse_config(R"({"refresh_period": "inf"})").refresh_period.has_value());
  EXPECT_EQ(parse_config("{}").refresh_period, 50);
}

TEST(ParseConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config(R"({"learning_rat": 0.1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"horizon": "40"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"horizon": 2.5})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"batch_size": 0})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"propagation": "sideways"})"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_config("{horizon: 3"), ConfigError);
}

TEST(ParseConfig, JsonRoundTrip) {
  TrainConfig c;
  c.refresh_period.reset();
  c.ridge = 3e-5;
  c.seed = 12345678901234ULL;
  const auto back = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
}

TEST_F(CliTest, GenDemosIsDeterministic) {
  ASSERT_EQ(run_cli({"gen-demos", "--task", "point_reach", "--count", "3", "--seed", "0", "--out", p("a")}), 0);
  ASSERT_EQ(run_cli({"gen-demos", "--task", "point_reach", "--count", "3", "--seed", "0", "--out", p("b")}), 0);
  for (const auto* name : {"demo_000000.kdt", "demo_000001.kdt", "demo_000002.kdt"})
    EXPECT_EQ(slurp(dir_ / "a" / name), slurp(dir_ / "b" / name));
  EXPECT_FALSE(fs::exists(p("a.lock")));
  const auto trajs = read_trajectory_dir(dir_ / "a");
  EXPECT_EQ(trajs.size(), 3u);
}

TEST_F(CliTest, GenDemosZeroCount) {
  EXPECT_EQ(run_cli({"gen-demos", "--count", "0", "--out", p("empty")}), 0);
  EXPECT_TRUE(fs::is_empty(dir_ / "empty"));
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli({"gen-demos", "--task", "juggle", "--out", p("x")}), kExitConfig);
  EXPECT_EQ(run_cli({"frobnicate"}), kExitConfig);
  const auto bad = write("bad.json", R"({"epochs": 3})");
  ASSERT_EQ(run_cli({"gen-demos", "--count", "2", "--out", p("d")}), 0);
  EXPECT_EQ(run_cli({"train", "--config", bad.string(), "--data", p("d"), "--out", p("m.korm")}), kExitConfig);
  EXPECT_EQ(run_cli({"train", "--data", p("missing"), "--out", p("m.korm")}), kExitData);
  EXPECT_EQ(run_cli({"eval", "--model", p("missing.korm")}), kExitData);
}

TEST_F(CliTest, TrainEvalViz) {
  ASSERT_EQ(run_cli({"gen-demos", "--count", "4", "--out", p("d")}), 0);
  const auto cfg = write("c.json", R"({"max_epochs": 3, "refresh_period": null, "horizon": 10})");
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--data", p("d"), "--out", p("m.korm"), "--seed", "4"}), 0);
  const auto csv = slurp(dir_ / "m.korm.metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,refreshed,seconds");
  std::istringstream rows(csv);
  std::string line;
  std::getline(rows, line);
  int n = 0;
  while (std::getline(rows, line)) {
    ++n;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 5u);
    EXPECT_EQ(cells[3], "0");
  }
  EXPECT_EQ(n, 3);
  const auto model = load_model(dir_ / "m.korm");
  EXPECT_EQ(model.config.seed, 4u);
  EXPECT_EQ(model.config.max_epochs, 3);

  // Same seed, same bytes.
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--data", p("d"), "--out", p("m2.korm"), "--seed", "4"}), 0);
  EXPECT_EQ(slurp(dir_ / "m.korm"), slurp(dir_ / "m2.korm"));

  ASSERT_EQ(run_cli({"eval", "--model", p("m.korm"), "--episodes", "5", "--seed", "2", "--out", p("e.csv")}), 0);
  ASSERT_EQ(run_cli({"eval", "--model", p("m.korm"), "--episodes", "5", "--seed", "2", "--out", p("e.csv")}), 0);
  std::istringstream ev(slurp(dir_ / "e.csv"));
  std::string header, r1, r2;
  std::getline(ev, header);
  std::getline(ev, r1);
  std::getline(ev, r2);
  EXPECT_EQ(header, "model,task,episodes,seed,closed_loop,successes,success_rate,diverged");
  EXPECT_EQ(r1, r2);
  EXPECT_EQ(run_cli({"eval", "--model", p("m.korm"), "--episodes", "3", "--closed-loop"}), 0);
  EXPECT_EQ(run_cli({"eval", "--model", p("m.korm"), "--task", "handle_slide"}), kExitConfig);

  ASSERT_EQ(run_cli({"viz", "--model", p("m.korm"), "--data", (dir_ / "d" / "demo_000000.kdt").string(), "--out",
                     p("viz")}),
            0);
  int frames = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "viz")) {
    ++frames;
    const auto pgm = slurp(e.path());
    EXPECT_EQ(pgm.substr(0, 13), "P5\n32 32\n255\n");
    EXPECT_EQ(pgm.size(), 13u + 32 * 32);
  }
  EXPECT_EQ(frames, 60);
}

TEST_F(CliTest, OracleFeatures) {
  ASSERT_EQ(run_cli({"gen-demos", "--count", "20", "--out", p("d")}), 0);
  ASSERT_EQ(run_cli({"train", "--data", p("d"), "--out", p("o.korm"), "--oracle-features"}), 0);
  const auto f = load_model(dir_ / "o.korm");
  EXPECT_EQ(f.source, FeatureSource::kOracle);
  EvalArgs a;
  a.model = dir_ / "o.korm";
  a.episodes = 50;
  EXPECT_GE(cmd_eval(a).success_rate, 0.9);
  EXPECT_EQ(run_cli({"viz", "--model", p("o.korm"), "--data", (dir_ / "d" / "demo_000000.kdt").string(), "--out",
                     p("v")}),
            kExitConfig);
}

TEST_F(CliTest, CorruptModelIsRejected) {
  ASSERT_EQ(run_cli({"gen-demos", "--count", "5", "--out", p("d")}), 0);
  ASSERT_EQ(run_cli({"train", "--data", p("d"), "--out", p("o.korm"), "--oracle-features"}), 0);
  auto bytes = read_file(dir_ / "o.korm");
  bytes[bytes.size() / 2] ^= 0x40;
  write_file(dir_ / "o.korm", bytes);
  EXPECT_EQ(run_cli({"eval", "--model", p("o.korm"), "--episodes", "2"}), kExitData);
}

TEST_F(CliTest, LockFileBlocksConcurrentWriters) {
  ASSERT_EQ(run_cli({"gen-demos", "--count", "2", "--out", p("d")}), 0);
  {
    OutputLock held(dir_ / "m.korm");
    EXPECT_THROW(OutputLock(dir_ / "m.korm"), DataError);
    EXPECT_EQ(run_cli({"train", "--data", p("d"), "--out", p("m.korm"), "--oracle-features"}), kExitData);
  }
  EXPECT_EQ(run_cli({"train", "--data", p("d"), "--out", p("m.korm"), "--oracle-features"}), 0);
}

TEST_F(CliTest, MultitaskPadsAndReportsPerTask) {
  ASSERT_EQ(run_cli({"gen-demos", "--task", "point_reach", "--count", "3", "--out", p("a")}), 0);
  ASSERT_EQ(run_cli({"gen-demos", "--task", "handle_slide", "--count", "3", "--out", p("b")}), 0);
  TrainArgs args;
  args.config = write("c.json", R"({"max_epochs": 2, "horizon": 8})");
  args.data = {dir_ / "a", dir_ / "b"};
  args.out = dir_ / "mt.korm";
  const auto rows = cmd_multitask(args, 3, 0);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].task, TaskId::kPointReach);
  EXPECT_EQ(rows[1].task, TaskId::kHandleSlide);
  const auto f = load_model(args.out);
  EXPECT_EQ(f.model.spec.n(), 3);
  EXPECT_EQ(f.tasks.size(), 2u);
  EXPECT_EQ(run_cli({"eval", "--model", p("mt.korm"), "--episodes", "2"}), kExitConfig);
  EXPECT_EQ(run_cli({"eval", "--model", p("mt.korm"), "--episodes", "2", "--task", "point_reach"}), 0);
}

TEST(Pgm, ZeroImageIsAllZeroBytes) {
  const auto path = fs::temp_directory_path() / ("korol_zero_" + std::to_string(::getpid()) + ".pgm");
  write_pgm(path, RowMat::Zero(32, 32));
  const auto bytes = read_file(path);
  ASSERT_EQ(bytes.size(), 13u + 1024);
  for (std::size_t i = 13; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], 0);
  write_pgm(path, RowMat::Ones(2, 3));
  EXPECT_EQ(read_file(path).back(), 255);
  fs::remove(path);
}
