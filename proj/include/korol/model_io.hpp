#pragma once

#include "korol/envs.hpp"
#include "korol/featnet.hpp"
#include "korol/koopman.hpp"
#include "korol/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace korol {

inline constexpr std::uint32_t kModelFormatVersion = 1;

// Where the object half of the state comes from at evaluation time.
enum class FeatureSource : std::uint32_t {
  kLearned = 0,
  kOracle = 1,  // GT object state; params are unused
};

struct ModelFile {
  std::uint32_t version = kModelFormatVersion;
  FeatureSource source = FeatureSource::kLearned;
  std::vector<TaskId> tasks;
  KoopmanModel model{LiftSpec(1, 0)};
  FeatNetParams params;
  TrainConfig config;
};

// Layout (little-endian): "KORM", u32 version, body, u32 crc32 of everything
// before it.
std::vector<std::uint8_t> serialize(const ModelFile& file);
ModelFile deserialize(std::span<const std::uint8_t> bytes);
std::uint32_t checksum(std::span<const std::uint8_t> bytes);
// The crc32 stored in the serialized file.
std::uint32_t model_checksum(const ModelFile& file);

void save_model(const std::filesystem::path& path, const ModelFile& file);
ModelFile load_model(const std::filesystem::path& path);

// True when both files serialize to identical bytes.
bool bitwise_equal(const ModelFile& a, const ModelFile& b);

// ".kdt" trajectory: "KDT1", u32 task, n, m_gt, T, H, W, C, u64 seed, then
// robot (T x n), object (T x m_gt) and frames (T x C x H x W) as f64.
std::vector<std::uint8_t> serialize(const Trajectory& traj);
Trajectory deserialize_trajectory(std::span<const std::uint8_t> bytes);

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory(const std::filesystem::path& path);

// Every *.kdt file in `dir`, sorted by file name.
std::vector<Trajectory> read_trajectory_dir(const std::filesystem::path& dir);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace korol
