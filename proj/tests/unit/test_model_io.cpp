#include "korol/errors.hpp"
#include "korol/model_io.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace korol;
namespace fs = std::filesystem;

namespace {

ModelFile learned_file() {
  ModelFile f;
  f.tasks = {TaskId::kPointReach};
  Architecture arch;
  arch.in_channels = 4;
  f.params = init_params(3, arch);
  f.params.version = 17;
  Pcg32 rng(1);
  const auto spec = lift_dim(2, 8);
  Mat K(spec.dim(), spec.dim());
  for (auto& v : K.reshaped()) v = rng.normal();
  f.model = KoopmanModel(spec, K);
  f.model.ridge = 1e-4;
  f.model.stats = {123, 0.25};
  f.config.refresh_period.reset();
  f.config.seed = 99;
  return f;
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("korol_io_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(ModelFile, RoundTripIsBitwise) {
  const auto f = learned_file();
  const auto bytes = serialize(f);
  const auto g = deserialize(bytes);
  EXPECT_EQ(serialize(g), bytes);
  EXPECT_EQ(g.model.K, f.model.K);
  EXPECT_EQ(g.params.version, 17u);
  EXPECT_FALSE(g.config.refresh_period.has_value());
  EXPECT_EQ(g.config.seed, 99u);
  EXPECT_EQ(g.params.arch, f.params.arch);
  EXPECT_TRUE(bitwise_equal(f, g));
}

TEST(ModelFile, OracleFileCarriesNoParameters) {
  auto f = learned_file();
  f.source = FeatureSource::kOracle;
  const auto g = deserialize(serialize(f));
  EXPECT_EQ(g.source, FeatureSource::kOracle);
  EXPECT_EQ(g.params.parameter_count(), 0u);
  EXPECT_EQ(g.model.K, f.model.K);
}

TEST(ModelFile, PreservesNonFiniteAndSignedZero) {
  auto f = learned_file();
  f.model.K(0, 0) = -0.0;
  f.model.K(1, 1) = std::numeric_limits<double>::quiet_NaN();
  const auto bytes = serialize(f);
  EXPECT_EQ(serialize(deserialize(bytes)), bytes);
}

TEST(ModelFile, VersionMismatchIsHardError) {
  auto bytes = serialize(learned_file());
  bytes[4] = static_cast<std::uint8_t>(kModelFormatVersion + 1);
  try {
    deserialize(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(ModelFile, CorruptionFailsChecksum) {
  auto bytes = serialize(learned_file());
  bytes[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(deserialize(bytes), FormatError);
}

TEST(ModelFile, TruncationAndBadMagic) {
  auto bytes = serialize(learned_file());
  EXPECT_THROW(deserialize(std::span(bytes).first(bytes.size() - 9)), FormatError);
  bytes[0] = 'X';
  EXPECT_THROW(deserialize(bytes), FormatError);
}

TEST(ModelFile, ChecksumDependsOnContent) {
  auto a = learned_file(), b = learned_file();
  b.config.seed = 100;
  EXPECT_EQ(model_checksum(a), model_checksum(learned_file()));
  EXPECT_NE(model_checksum(a), model_checksum(b));
}

TEST(ModelFile, SaveAndLoad) {
  const auto dir = temp_dir("model");
  const auto f = learned_file();
  save_model(dir / "m.korm", f);
  EXPECT_TRUE(bitwise_equal(load_model(dir / "m.korm"), f));
  EXPECT_THROW(load_model(dir / "missing.korm"), DataError);
  fs::remove_all(dir);
}

TEST(Trajectory, RoundTrip) {
  const auto traj = gen_demo(make_task(TaskId::kHandleSlide), 5);
  const auto bytes = serialize(traj);
  // Header: magic, seven u32 fields, u64 seed.
  const std::size_t frame = 2 * 32 * 32;
  EXPECT_EQ(bytes.size(), 40 + 8 * (60 * 3 + 60 * 2 + 60 * frame));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "KDT1");
  const auto back = deserialize_trajectory(bytes);
  EXPECT_EQ(back.task, traj.task);
  EXPECT_EQ(back.seed, 5u);
  EXPECT_EQ(back.robot, traj.robot);
  EXPECT_EQ(back.object, traj.object);
  ASSERT_EQ(back.frames.size(), traj.frames.size());
  for (std::size_t t = 0; t < traj.frames.size(); ++t) EXPECT_EQ(back.frames[t].data, traj.frames[t].data);
  EXPECT_EQ(serialize(back), bytes);
}

TEST(Trajectory, HeaderIsLittleEndian) {
  const auto bytes = serialize(gen_demo(make_task(TaskId::kPointReach), 0x0102));
  EXPECT_EQ(bytes[8], 2);  // n
  EXPECT_EQ(bytes[16], 60);  // T
  EXPECT_EQ(bytes[32], 0x02);  // seed, low byte first
  EXPECT_EQ(bytes[33], 0x01);
}

TEST(Trajectory, RejectsMalformedPayload) {
  auto bytes = serialize(gen_demo(make_task(TaskId::kPointReach), 1));
  EXPECT_THROW(deserialize_trajectory(std::span(bytes).first(bytes.size() - 8)), FormatError);
  bytes[0] = 'Q';
  EXPECT_THROW(deserialize_trajectory(bytes), FormatError);
}

TEST(Trajectory, DirectoryReadIsSorted) {
  const auto dir = temp_dir("dir");
  const auto task = make_task(TaskId::kPointReach);
  write_trajectory(dir / "b.kdt", gen_demo(task, 2));
  write_trajectory(dir / "a.kdt", gen_demo(task, 1));
  write_file(dir / "notes.txt", std::vector<std::uint8_t>{'x'});
  const auto trajs = read_trajectory_dir(dir);
  ASSERT_EQ(trajs.size(), 2u);
  EXPECT_EQ(trajs[0].seed, 1u);
  EXPECT_EQ(trajs[1].seed, 2u);
  EXPECT_THROW(read_trajectory_dir(dir / "nope"), DataError);
  fs::remove_all(dir);
}
