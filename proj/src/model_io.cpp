#include "korol/model_io.hpp"

#include "korol/errors.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace korol {
namespace {

constexpr char kModelMagic[4] = {'K', 'O', 'R', 'M'};
constexpr char kTrajMagic[4] = {'K', 'D', 'T', '1'};

class Writer {
 public:
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) f64(p[i]);
  }

  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated file");
  }
  void magic(const char (&m)[4]) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, m, 4) != 0) throw FormatError("bad magic");
    pos_ += 4;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  void f64s(double* p, std::size_t n) {
    need(n * 8);
    for (std::size_t i = 0; i < n; ++i) p[i] = f64();
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Guards allocation sizes read from untrusted headers.
std::size_t checked_count(std::uint64_t a, std::uint64_t b, std::uint64_t c = 1) {
  constexpr std::uint64_t kMax = std::uint64_t{1} << 40;
  if (a > kMax || b > kMax || c > kMax) throw FormatError("implausible dimensions");
  const std::uint64_t ab = a * b;
  if (b != 0 && ab / b != a) throw FormatError("implausible dimensions");
  if (ab > kMax || (c != 0 && ab * c / c != ab) || ab * c > kMax) throw FormatError("implausible dimensions");
  return static_cast<std::size_t>(ab * c);
}

void write_arch(Writer& w, const Architecture& a) {
  w.i32(a.in_channels);
  w.i32(a.side);
  w.i32(a.feature_dim);
  w.i32(a.goal_dim);
  for (int c : a.conv_channels) w.i32(c);
  w.i32(a.hidden);
  w.u32(static_cast<std::uint32_t>(a.pooling));
}

Architecture read_arch(Reader& r) {
  Architecture a;
  a.in_channels = r.i32();
  a.side = r.i32();
  a.feature_dim = r.i32();
  a.goal_dim = r.i32();
  for (int& c : a.conv_channels) c = r.i32();
  a.hidden = r.i32();
  const auto pooling = r.u32();
  if (pooling > 1) throw FormatError("unknown pooling tag");
  a.pooling = static_cast<Pooling>(pooling);
  try {
    a.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("bad architecture: ") + e.what());
  }
  return a;
}

void write_config(Writer& w, const TrainConfig& c) {
  w.i32(c.horizon);
  w.i32(c.refresh_period ? *c.refresh_period : -1);
  w.i32(c.max_epochs);
  w.i32(c.batch_size);
  w.i32(c.windows_per_trajectory);
  w.f64(c.learning_rate);
  w.f64(c.beta1);
  w.f64(c.beta2);
  w.f64(c.adam_eps);
  w.f64(c.ridge);
  w.f64(c.oracle_ridge);
  w.u64(c.seed);
  w.u32(c.use_frequency ? 1 : 0);
  w.i32(c.feature_dim);
  w.f64(c.validation_fraction);
  w.u32(static_cast<std::uint32_t>(c.propagation));
  w.u32(static_cast<std::uint32_t>(c.pooling));
  w.i32(c.threads);
}

TrainConfig read_config(Reader& r) {
  TrainConfig c;
  c.horizon = r.i32();
  const int m = r.i32();
  c.refresh_period = m < 0 ? std::nullopt : std::optional<int>(m);
  c.max_epochs = r.i32();
  c.batch_size = r.i32();
  c.windows_per_trajectory = r.i32();
  c.learning_rate = r.f64();
  c.beta1 = r.f64();
  c.beta2 = r.f64();
  c.adam_eps = r.f64();
  c.ridge = r.f64();
  c.oracle_ridge = r.f64();
  c.seed = r.u64();
  c.use_frequency = r.u32() != 0;
  c.feature_dim = r.i32();
  c.validation_fraction = r.f64();
  const auto prop = r.u32();
  if (prop > 1) throw FormatError("unknown propagation tag");
  c.propagation = static_cast<Propagation>(prop);
  const auto pooling = r.u32();
  if (pooling > 1) throw FormatError("unknown pooling tag");
  c.pooling = static_cast<Pooling>(pooling);
  c.threads = r.i32();
  return c;
}

}  // namespace

std::uint32_t checksum(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize(const ModelFile& file) {
  Writer w;
  w.raw(kModelMagic, 4);
  w.u32(file.version);
  w.u32(static_cast<std::uint32_t>(file.source));
  w.u32(static_cast<std::uint32_t>(file.tasks.size()));
  for (auto t : file.tasks) w.u32(static_cast<std::uint32_t>(t));

  const auto& km = file.model;
  w.u32(LiftSpec::kOrderingVersion);
  w.i32(km.spec.n());
  w.i32(km.spec.m());
  w.f64(km.ridge);
  w.u64(km.stats.pairs);
  w.f64(km.stats.residual);
  w.u64(static_cast<std::uint64_t>(km.K.rows()));
  w.u64(static_cast<std::uint64_t>(km.K.cols()));
  for (Eigen::Index i = 0; i < km.K.rows(); ++i)
    for (Eigen::Index j = 0; j < km.K.cols(); ++j) w.f64(km.K(i, j));

  const bool has_params = file.source == FeatureSource::kLearned;
  w.u32(has_params ? 1 : 0);
  if (has_params) {
    write_arch(w, file.params.arch);
    w.u64(file.params.version);
    const auto tensors = file.params.tensors();
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      w.u64(t.size());
      w.f64s(t.data(), t.size());
    }
  }
  write_config(w, file.config);

  auto& bytes = w.bytes();
  const auto crc = checksum(bytes);
  Writer tail;
  tail.u32(crc);
  bytes.insert(bytes.end(), tail.bytes().begin(), tail.bytes().end());
  return std::move(bytes);
}

std::uint32_t model_checksum(const ModelFile& file) {
  const auto bytes = serialize(file);
  return Reader(std::span<const std::uint8_t>(bytes).last(4)).u32();
}

ModelFile deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw FormatError("model file too short");
  Reader head(bytes);
  head.magic(kModelMagic);
  const auto version = head.u32();
  if (version != kModelFormatVersion)
    throw FormatError("model format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kModelFormatVersion) + ")");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (checksum(body) != tail.u32()) throw FormatError("model checksum mismatch");

  Reader r(body);
  r.magic(kModelMagic);
  ModelFile file;
  file.version = r.u32();
  const auto source = r.u32();
  if (source > 1) throw FormatError("unknown feature source");
  file.source = static_cast<FeatureSource>(source);
  const auto n_tasks = r.u32();
  if (n_tasks > 64) throw FormatError("implausible task count");
  for (std::uint32_t i = 0; i < n_tasks; ++i) {
    const auto t = r.u32();
    if (t > 1) throw FormatError("unknown task id");
    file.tasks.push_back(static_cast<TaskId>(t));
  }

  if (r.u32() != LiftSpec::kOrderingVersion) throw FormatError("unsupported monomial ordering");
  const int n = r.i32();
  const int m = r.i32();
  if (n < 1 || m < 0 || n > 4096 || m > 4096) throw FormatError("bad lift dimensions");
  KoopmanModel km{LiftSpec(n, m)};
  km.ridge = r.f64();
  km.stats.pairs = r.u64();
  km.stats.residual = r.f64();
  const auto rows = r.u64();
  const auto cols = r.u64();
  const auto p = static_cast<std::uint64_t>(km.spec.dim());
  if (rows != p || cols != p) throw FormatError("K shape does not match the lift");
  for (Eigen::Index i = 0; i < km.K.rows(); ++i)
    for (Eigen::Index j = 0; j < km.K.cols(); ++j) km.K(i, j) = r.f64();
  file.model = std::move(km);

  if (r.u32() != 0) {
    const auto arch = read_arch(r);
    file.params = FeatNetParams::zeros(arch);
    file.params.version = r.u64();
    auto tensors = file.params.tensors();
    if (r.u32() != tensors.size()) throw FormatError("tensor count mismatch");
    for (auto& t : tensors) {
      if (r.u64() != t.size()) throw FormatError("tensor size mismatch");
      r.f64s(t.data(), t.size());
    }
  }
  file.config = read_config(r);
  if (!r.done()) throw FormatError("trailing bytes in model file");
  return file;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError("cannot read " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  // Write-then-rename so readers never observe a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot write " + path.string() + ": " + ec.message());
}

void save_model(const std::filesystem::path& path, const ModelFile& file) { write_file(path, serialize(file)); }

ModelFile load_model(const std::filesystem::path& path) { return deserialize(read_file(path)); }

bool bitwise_equal(const ModelFile& a, const ModelFile& b) { return serialize(a) == serialize(b); }

std::vector<std::uint8_t> serialize(const Trajectory& traj) {
  Writer w;
  w.raw(kTrajMagic, 4);
  const int T = traj.length();
  const int H = T > 0 ? traj.frames.front().height : 0;
  const int W = T > 0 ? traj.frames.front().width : 0;
  const int C = T > 0 ? traj.frames.front().channels : 0;
  if (traj.object.rows() != T || static_cast<int>(traj.frames.size()) != T)
    throw DimensionError("trajectory blocks disagree on length");
  w.u32(static_cast<std::uint32_t>(traj.task));
  w.u32(static_cast<std::uint32_t>(traj.robot.cols()));
  w.u32(static_cast<std::uint32_t>(traj.object.cols()));
  w.u32(static_cast<std::uint32_t>(T));
  w.u32(static_cast<std::uint32_t>(H));
  w.u32(static_cast<std::uint32_t>(W));
  w.u32(static_cast<std::uint32_t>(C));
  w.u64(traj.seed);
  w.f64s(traj.robot.data(), static_cast<std::size_t>(traj.robot.size()));
  w.f64s(traj.object.data(), static_cast<std::size_t>(traj.object.size()));
  for (const auto& f : traj.frames) {
    if (f.height != H || f.width != W || f.channels != C) throw DimensionError("frames differ in shape");
    w.f64s(f.data.data(), f.data.size());
  }
  return std::move(w.bytes());
}

Trajectory deserialize_trajectory(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kTrajMagic);
  Trajectory traj;
  const auto task = r.u32();
  if (task > 1) throw FormatError("unknown task id");
  traj.task = static_cast<TaskId>(task);
  const auto n = r.u32(), m = r.u32(), T = r.u32(), H = r.u32(), W = r.u32(), C = r.u32();
  traj.seed = r.u64();
  const auto robot = checked_count(T, n);
  const auto object = checked_count(T, m);
  const auto frame = checked_count(C, H, W);
  // The payload size is known up front; reject truncation before allocating.
  const auto payload = static_cast<long double>(robot + object) + static_cast<long double>(frame) * T;
  if (payload * 8 != static_cast<long double>(bytes.size() - 40)) throw FormatError("payload size mismatch");

  traj.robot.resize(T, n);
  traj.object.resize(T, m);
  r.f64s(traj.robot.data(), robot);
  r.f64s(traj.object.data(), object);
  traj.frames.reserve(T);
  for (std::uint32_t t = 0; t < T; ++t) {
    ImageStack img(static_cast<int>(C), static_cast<int>(H), static_cast<int>(W));
    r.f64s(img.data.data(), frame);
    traj.frames.push_back(std::move(img));
  }
  return traj;
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) { write_file(path, serialize(traj)); }

Trajectory read_trajectory(const std::filesystem::path& path) {
  try {
    return deserialize_trajectory(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<Trajectory> read_trajectory_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".kdt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Trajectory> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_trajectory(f));
  return out;
}

}  // namespace korol
