#pragma once

#include "korol/image.hpp"
#include "korol/lifting.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace korol {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kGoalDim = 3;
inline constexpr int kGoalEmbeddingDim = 15;

// How the last conv stage is reduced to a vector before the dense head.
enum class Pooling : std::uint32_t {
  kGlobalAverage = 0,
  kFlatten = 1,
};

// Three 3x3 / stride 2 / pad 1 conv stages with ReLU, a reduction, optional
// goal embedding, then dense(hidden) -> ReLU -> dense(feature_dim).
struct Architecture {
  int in_channels = 2;
  int side = 32;
  int feature_dim = 8;
  int goal_dim = 0;  // 0 (no goal input) or kGoalDim
  std::array<int, 3> conv_channels{16, 32, 32};
  int hidden = 64;
  Pooling pooling = Pooling::kFlatten;

  // Spatial side after conv stage `stage` (0-based).
  int stage_side(int stage) const noexcept;
  int trunk_features() const noexcept;
  int head_inputs() const noexcept { return trunk_features() + (goal_dim > 0 ? kGoalEmbeddingDim : 0); }
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct ConvLayer {
  RowMat weight;  // (out, in * 3 * 3), i.e. (out, in, 3, 3) row-major
  Vec bias;
};

struct DenseLayer {
  RowMat weight;  // (out, in)
  Vec bias;
};

struct FeatNetParams {
  Architecture arch;
  std::array<ConvLayer, 3> conv;
  DenseLayer hidden;
  DenseLayer output;
  // Incremented by every optimizer step; forward caches record it.
  std::uint64_t version = 0;

  // All-zero tensors shaped for `arch`.
  static FeatNetParams zeros(const Architecture& arch);

  // Every tensor in declaration order: conv1.w, conv1.b, ..., output.w, output.b.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::size_t parameter_count() const;
};

using FeatNetGrads = FeatNetParams;

struct ForwardCache {
  std::uint64_t params_version = 0;
  ImageStack input;
  std::optional<Vec> goal;
  std::array<Mat, 3> cols;     // im2col of each stage's input
  std::array<RowMat, 3> pre;   // (channels, positions) before ReLU
  std::array<RowMat, 3> post;  // after ReLU
  Vec head_in;
  Vec hidden_pre;
  Vec hidden_post;
  Vec feature;
};

// He-normal weights (std = sqrt(2 / fan_in)) drawn from Pcg32; zero biases.
FeatNetParams init_params(std::uint64_t seed, const Architecture& arch);

// [v, sin(pi v), sin(2 pi v), cos(pi v), cos(2 pi v)] for a 3-vector v.
Vec harmonic_embed(const Eigen::Ref<const Vec>& v);

struct ForwardResult {
  Vec feature;
  ForwardCache cache;
};

ForwardResult forward(const FeatNetParams& params, const ImageStack& input,
                      const std::optional<Vec>& goal = std::nullopt);

// Feature only; skips building a cache.
Vec predict(const FeatNetParams& params, const ImageStack& input, const std::optional<Vec>& goal = std::nullopt);

struct BackwardResult {
  FeatNetGrads grads;
  ImageStack d_pixels;
};

// Gradients of feature^T d_feature with respect to parameters and pixels.
BackwardResult backward(const FeatNetParams& params, const ForwardCache& cache, const Eigen::Ref<const Vec>& d_feature);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Vec> first;
  std::vector<Vec> second;
  std::uint64_t step = 0;

  static AdamState zeros_like(const FeatNetParams& params);
};

void adam_step(FeatNetParams& params, const FeatNetGrads& grads, AdamState& state, const AdamOptions& opts);

// Per-location energy of the last conv stage, bilinearly upsampled to the
// input size and min-max normalized to [0, 1]. A constant field maps to 0.
RowMat activation_heatmap(const ForwardCache& cache);

// Accumulates src into dst tensor by tensor (shapes must agree).
void add_grads(FeatNetGrads& dst, const FeatNetGrads& src, double scale = 1.0);

}  // namespace korol
