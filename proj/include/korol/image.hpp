#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace korol {

enum class ChannelKind { kSpatial, kFrequency };

// Channel-major (C x H x W) stack of real images.
struct ImageStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;
  std::vector<ChannelKind> kinds;

  ImageStack() = default;
  ImageStack(int c, int h, int w)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0),
        kinds(static_cast<std::size_t>(c), ChannelKind::kSpatial) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) noexcept { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  double at(int c, int y, int x) const noexcept {
    return data[c * plane() + static_cast<std::size_t>(y) * width + x];
  }
  std::span<double> channel(int c) noexcept { return {data.data() + c * plane(), plane()}; }
  std::span<const double> channel(int c) const noexcept { return {data.data() + c * plane(), plane()}; }
};

}  // namespace korol
