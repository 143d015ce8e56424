#include "korol/featnet.hpp"

#include "korol/errors.hpp"
#include "korol/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace korol {
namespace {

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel;

int conv_out(int side) { return (side + 2 - kKernel) / 2 + 1; }

// cols(c * 9 + ky * 3 + kx, oy * wo + ox) = in(c, 2 oy + ky - 1, 2 ox + kx - 1)
Mat im2col(const double* in, int channels, int side) {
  const int out_side = conv_out(side);
  Mat cols = Mat::Zero(channels * kTaps, out_side * out_side);
  for (int c = 0; c < channels; ++c) {
    const double* plane = in + static_cast<std::ptrdiff_t>(c) * side * side;
    for (int ky = 0; ky < kKernel; ++ky)
      for (int kx = 0; kx < kKernel; ++kx) {
        const int row = c * kTaps + ky * kKernel + kx;
        for (int oy = 0; oy < out_side; ++oy) {
          const int y = 2 * oy + ky - 1;
          if (y < 0 || y >= side) continue;
          for (int ox = 0; ox < out_side; ++ox) {
            const int x = 2 * ox + kx - 1;
            if (x < 0 || x >= side) continue;
            cols(row, oy * out_side + ox) = plane[y * side + x];
          }
        }
      }
  }
  return cols;
}

void col2im(const Mat& cols, int channels, int side, double* out) {
  const int out_side = conv_out(side);
  std::fill(out, out + static_cast<std::ptrdiff_t>(channels) * side * side, 0.0);
  for (int c = 0; c < channels; ++c) {
    double* plane = out + static_cast<std::ptrdiff_t>(c) * side * side;
    for (int ky = 0; ky < kKernel; ++ky)
      for (int kx = 0; kx < kKernel; ++kx) {
        const int row = c * kTaps + ky * kKernel + kx;
        for (int oy = 0; oy < out_side; ++oy) {
          const int y = 2 * oy + ky - 1;
          if (y < 0 || y >= side) continue;
          for (int ox = 0; ox < out_side; ++ox) {
            const int x = 2 * ox + kx - 1;
            if (x < 0 || x >= side) continue;
            plane[y * side + x] += cols(row, oy * out_side + ox);
          }
        }
      }
  }
}

void check_input(const Architecture& arch, const ImageStack& input, const std::optional<Vec>& goal) {
  if (input.channels != arch.in_channels || input.height != arch.side || input.width != arch.side) {
    throw DimensionError("featnet: input stack is " + std::to_string(input.channels) + "x" +
                         std::to_string(input.height) + "x" + std::to_string(input.width) + ", architecture expects " +
                         std::to_string(arch.in_channels) + "x" + std::to_string(arch.side) + "x" +
                         std::to_string(arch.side));
  }
  if (arch.goal_dim > 0 && (!goal || goal->size() != arch.goal_dim))
    throw DimensionError("featnet: architecture requires a goal vector of length " + std::to_string(arch.goal_dim));
  if (arch.goal_dim == 0 && goal) throw DimensionError("featnet: architecture takes no goal input");
}

template <class Params>
auto collect(Params& p) {
  using Span = std::conditional_t<std::is_const_v<Params>, std::span<const double>, std::span<double>>;
  std::vector<Span> out;
  auto add = [&](auto& t) { out.emplace_back(t.data(), static_cast<std::size_t>(t.size())); };
  for (auto& c : p.conv) {
    add(c.weight);
    add(c.bias);
  }
  add(p.hidden.weight);
  add(p.hidden.bias);
  add(p.output.weight);
  add(p.output.bias);
  return out;
}

}  // namespace

int Architecture::stage_side(int stage) const noexcept {
  int s = side;
  for (int i = 0; i <= stage; ++i) s = conv_out(s);
  return s;
}

int Architecture::trunk_features() const noexcept {
  const int c = conv_channels[2];
  return pooling == Pooling::kFlatten ? c * stage_side(2) * stage_side(2) : c;
}

void Architecture::validate() const {
  if (in_channels < 1 || side < 1 || feature_dim < 1 || hidden < 1)
    throw DimensionError("featnet: architecture sizes must be positive");
  if (goal_dim != 0 && goal_dim != kGoalDim) throw DimensionError("featnet: goal_dim must be 0 or 3");
  for (int c : conv_channels)
    if (c < 1) throw DimensionError("featnet: conv channel counts must be positive");
  if (pooling != Pooling::kFlatten && pooling != Pooling::kGlobalAverage)
    throw DimensionError("featnet: unknown pooling mode");
}

FeatNetParams FeatNetParams::zeros(const Architecture& arch) {
  arch.validate();
  FeatNetParams p;
  p.arch = arch;
  int in = arch.in_channels;
  for (int s = 0; s < 3; ++s) {
    p.conv[s].weight = RowMat::Zero(arch.conv_channels[s], in * kTaps);
    p.conv[s].bias = Vec::Zero(arch.conv_channels[s]);
    in = arch.conv_channels[s];
  }
  p.hidden.weight = RowMat::Zero(arch.hidden, arch.head_inputs());
  p.hidden.bias = Vec::Zero(arch.hidden);
  p.output.weight = RowMat::Zero(arch.feature_dim, arch.hidden);
  p.output.bias = Vec::Zero(arch.feature_dim);
  return p;
}

std::vector<std::span<double>> FeatNetParams::tensors() { return collect(*this); }
std::vector<std::span<const double>> FeatNetParams::tensors() const { return collect(*this); }

std::size_t FeatNetParams::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

FeatNetParams init_params(std::uint64_t seed, const Architecture& arch) {
  FeatNetParams p = FeatNetParams::zeros(arch);
  Pcg32 rng(seed, 0x6665617475726573ULL);
  auto he = [&](RowMat& w) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = stddev * rng.normal();
  };
  for (auto& c : p.conv) he(c.weight);
  he(p.hidden.weight);
  he(p.output.weight);
  return p;
}

Vec harmonic_embed(const Eigen::Ref<const Vec>& v) {
  if (v.size() != kGoalDim) throw DimensionError("harmonic_embed: expected a 3-vector");
  Vec out(kGoalEmbeddingDim);
  const double pi = std::numbers::pi;
  for (int i = 0; i < 3; ++i) {
    out[i] = v[i];
    out[3 + i] = std::sin(pi * v[i]);
    out[6 + i] = std::sin(2.0 * pi * v[i]);
    out[9 + i] = std::cos(pi * v[i]);
    out[12 + i] = std::cos(2.0 * pi * v[i]);
  }
  return out;
}

ForwardResult forward(const FeatNetParams& params, const ImageStack& input, const std::optional<Vec>& goal) {
  const auto& arch = params.arch;
  check_input(arch, input, goal);
  ForwardResult res;
  auto& cache = res.cache;
  cache.params_version = params.version;
  cache.input = input;
  cache.goal = goal;

  const double* in = input.data.data();
  int channels = arch.in_channels;
  int side = arch.side;
  for (int s = 0; s < 3; ++s) {
    cache.cols[s] = im2col(in, channels, side);
    cache.pre[s] = params.conv[s].weight * cache.cols[s];
    cache.pre[s].colwise() += params.conv[s].bias;
    cache.post[s] = cache.pre[s].cwiseMax(0.0);
    in = cache.post[s].data();
    channels = arch.conv_channels[s];
    side = conv_out(side);
  }

  const RowMat& last = cache.post[2];
  cache.head_in.resize(arch.head_inputs());
  if (arch.pooling == Pooling::kFlatten) {
    cache.head_in.head(last.size()) = Eigen::Map<const Vec>(last.data(), last.size());
  } else {
    cache.head_in.head(last.rows()) = last.rowwise().mean();
  }
  if (goal) cache.head_in.tail(kGoalEmbeddingDim) = harmonic_embed(*goal);

  cache.hidden_pre = params.hidden.weight * cache.head_in + params.hidden.bias;
  cache.hidden_post = cache.hidden_pre.cwiseMax(0.0);
  cache.feature = params.output.weight * cache.hidden_post + params.output.bias;
  res.feature = cache.feature;
  return res;
}

Vec predict(const FeatNetParams& params, const ImageStack& input, const std::optional<Vec>& goal) {
  return forward(params, input, goal).feature;
}

BackwardResult backward(const FeatNetParams& params, const ForwardCache& cache, const Eigen::Ref<const Vec>& d_feature) {
  const auto& arch = params.arch;
  if (cache.params_version != params.version)
    throw Error("featnet backward: stale forward cache (parameters changed since forward)");
  if (d_feature.size() != arch.feature_dim) throw DimensionError("featnet backward: d_feature has wrong length");

  BackwardResult res{FeatNetParams::zeros(arch), ImageStack(arch.in_channels, arch.side, arch.side)};
  auto& g = res.grads;
  g.version = params.version;
  res.d_pixels.kinds = cache.input.kinds;

  g.output.weight.noalias() = d_feature * cache.hidden_post.transpose();
  g.output.bias = d_feature;
  Vec d_hidden = params.output.weight.transpose() * d_feature;
  d_hidden.array() *= (cache.hidden_pre.array() > 0.0).cast<double>();
  g.hidden.weight.noalias() = d_hidden * cache.head_in.transpose();
  g.hidden.bias = d_hidden;
  const Vec d_head = params.hidden.weight.transpose() * d_hidden;

  RowMat d_post(cache.post[2].rows(), cache.post[2].cols());
  if (arch.pooling == Pooling::kFlatten) {
    d_post = Eigen::Map<const RowMat>(d_head.data(), d_post.rows(), d_post.cols());
  } else {
    const double inv = 1.0 / static_cast<double>(d_post.cols());
    for (Eigen::Index c = 0; c < d_post.rows(); ++c) d_post.row(c).setConstant(d_head[c] * inv);
  }

  for (int s = 2; s >= 0; --s) {
    RowMat d_pre = d_post.cwiseProduct((cache.pre[s].array() > 0.0).cast<double>().matrix());
    g.conv[s].weight.noalias() = d_pre * cache.cols[s].transpose();
    g.conv[s].bias = d_pre.rowwise().sum();
    const Mat d_cols = params.conv[s].weight.transpose() * d_pre;
    const int channels = s == 0 ? arch.in_channels : arch.conv_channels[s - 1];
    const int side = s == 0 ? arch.side : arch.stage_side(s - 1);
    if (s == 0) {
      col2im(d_cols, channels, side, res.d_pixels.data.data());
    } else {
      d_post.resize(channels, static_cast<Eigen::Index>(side) * side);
      col2im(d_cols, channels, side, d_post.data());
    }
  }
  return res;
}

AdamState AdamState::zeros_like(const FeatNetParams& params) {
  AdamState st;
  for (auto t : params.tensors()) {
    st.first.push_back(Vec::Zero(static_cast<Eigen::Index>(t.size())));
    st.second.push_back(Vec::Zero(static_cast<Eigen::Index>(t.size())));
  }
  return st;
}

void adam_step(FeatNetParams& params, const FeatNetGrads& grads, AdamState& state, const AdamOptions& opts) {
  auto p = params.tensors();
  auto g = grads.tensors();
  if (p.size() != g.size() || p.size() != state.first.size() || p.size() != state.second.size())
    throw DimensionError("adam_step: tensor count mismatch");
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].size() != g[i].size() || static_cast<Eigen::Index>(p[i].size()) != state.first[i].size())
      throw DimensionError("adam_step: tensor shape mismatch");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opts.beta1, t);
  const double c2 = 1.0 - std::pow(opts.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    double* w = p[i].data();
    const double* gi = g[i].data();
    double* m = state.first[i].data();
    double* v = state.second[i].data();
    for (std::size_t k = 0; k < p[i].size(); ++k) {
      m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * gi[k];
      v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * gi[k] * gi[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= opts.lr * m_hat / (std::sqrt(v_hat) + opts.eps);
    }
  }
  ++params.version;
}

void add_grads(FeatNetGrads& dst, const FeatNetGrads& src, double scale) {
  auto d = dst.tensors();
  auto s = src.tensors();
  if (d.size() != s.size()) throw DimensionError("add_grads: tensor count mismatch");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].size() != s[i].size()) throw DimensionError("add_grads: tensor shape mismatch");
    for (std::size_t k = 0; k < d[i].size(); ++k) d[i][k] += scale * s[i][k];
  }
}

RowMat activation_heatmap(const ForwardCache& cache) {
  const RowMat& last = cache.post[2];
  const int h = cache.input.height;
  const int w = cache.input.width;
  RowMat out = RowMat::Zero(h, w);
  if (last.size() == 0) return out;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(last.cols()))));
  const Vec energy = last.array().square().colwise().sum().transpose();

  auto sample = [&](double pos, int src, int dst, int& i0, int& i1, double& frac) {
    double s = (pos + 0.5) * src / dst - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, src - 1);
    frac = s - i0;
  };
  for (int y = 0; y < h; ++y) {
    int y0, y1;
    double fy;
    sample(y, side, h, y0, y1, fy);
    for (int x = 0; x < w; ++x) {
      int x0, x1;
      double fx;
      sample(x, side, w, x0, x1, fx);
      const double top = (1 - fx) * energy[y0 * side + x0] + fx * energy[y0 * side + x1];
      const double bot = (1 - fx) * energy[y1 * side + x0] + fx * energy[y1 * side + x1];
      out(y, x) = (1 - fy) * top + fy * bot;
    }
  }
  const double lo = out.minCoeff();
  const double hi = out.maxCoeff();
  if (!(hi > lo)) return RowMat::Zero(h, w);
  return ((out.array() - lo) / (hi - lo)).matrix();
}

}  // namespace korol
