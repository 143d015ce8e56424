#include "korol/dct.hpp"

#include "korol/errors.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace korol {
namespace {

const Eigen::MatrixXd& cached_basis(int n) {
  static std::mutex mu;
  static std::map<int, Eigen::MatrixXd> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, dct_matrix(n)).first;
  return it->second;
}

using RowImage = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

Eigen::MatrixXd dct_matrix(int n) {
  if (n < 1) throw DimensionError("dct: size must be >= 1");
  Eigen::MatrixXd d(n, n);
  const double s0 = std::sqrt(1.0 / n);
  const double s = std::sqrt(2.0 / n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      d(k, i) = (k == 0 ? s0 : s) * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
  return d;
}

Eigen::MatrixXd dct2(const Eigen::MatrixXd& channel) {
  if (channel.rows() < 1 || channel.cols() < 1) throw DimensionError("dct2: empty image");
  const auto& dr = cached_basis(static_cast<int>(channel.rows()));
  const auto& dc = cached_basis(static_cast<int>(channel.cols()));
  return dr * channel * dc.transpose();
}

Eigen::MatrixXd idct2(const Eigen::MatrixXd& coeffs) {
  if (coeffs.rows() < 1 || coeffs.cols() < 1) throw DimensionError("idct2: empty image");
  const auto& dr = cached_basis(static_cast<int>(coeffs.rows()));
  const auto& dc = cached_basis(static_cast<int>(coeffs.cols()));
  return dr.transpose() * coeffs * dc;
}

ImageStack make_input_stack(const ImageStack& spatial, bool use_frequency) {
  if (!use_frequency) return spatial;
  ImageStack out(spatial.channels * 2, spatial.height, spatial.width);
  std::copy(spatial.data.begin(), spatial.data.end(), out.data.begin());
  for (int c = 0; c < spatial.channels; ++c) out.kinds[c] = spatial.kinds[c];
  const double scale = 1.0 / std::sqrt(static_cast<double>(spatial.height) * spatial.width);
  for (int c = 0; c < spatial.channels; ++c) {
    Eigen::Map<const RowImage> img(spatial.channel(c).data(), spatial.height, spatial.width);
    const Eigen::MatrixXd coeffs = dct2(img) * scale;
    Eigen::Map<RowImage>(out.channel(spatial.channels + c).data(), spatial.height, spatial.width) = coeffs;
    out.kinds[spatial.channels + c] = ChannelKind::kFrequency;
  }
  return out;
}

}  // namespace korol
