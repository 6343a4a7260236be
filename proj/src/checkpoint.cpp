#include "blursplat/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace blursplat {

namespace {

static_assert(std::endian::native == std::endian::little, "file writers assume a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error(path.string() + ": cannot open for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void i32(std::int32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error(path_.string() + ": write failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error(path.string() + ": cannot open");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated file");
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::int32_t i32() { std::int32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  std::int64_t i64() { std::int64_t v; bytes(&v, 8); return v; }
  double f64() { double v; bytes(&v, 8); return v; }
  std::uint64_t count(std::uint64_t limit = 1u << 26) {
    const std::uint64_t n = u64();
    if (n > limit) fail("implausible element count " + std::to_string(n));
    return n;
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) fail("trailing bytes after the last record");
  }
  [[noreturn]] void fail(const std::string& what) const { throw std::runtime_error(path_.string() + ": " + what); }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

void write_header(Writer& w, const char (&magic)[9], std::uint32_t version) {
  w.bytes(magic, 8);
  w.u32(version);
}

void read_header(Reader& r, const char (&magic)[9], std::uint32_t version) {
  char got[8];
  r.bytes(got, 8);
  if (std::memcmp(got, magic, 8) != 0) r.fail("bad magic (expected " + std::string(magic, 8) + ")");
  const std::uint32_t v = r.u32();
  if (v != version) r.fail("unsupported version " + std::to_string(v) + " (expected " + std::to_string(version) + ")");
}

void write_gaussians(Writer& w, const std::vector<GaussianPrimitive>& gs) {
  w.u64(gs.size());
  std::array<double, kGaussianParamCount> buf{};
  for (const auto& g : gs) {
    pack(g, buf);
    for (double v : buf) w.f64(v);
  }
}

std::vector<GaussianPrimitive> read_gaussians(Reader& r) {
  std::vector<GaussianPrimitive> gs(r.count());
  std::array<double, kGaussianParamCount> buf{};
  for (auto& g : gs) {
    for (double& v : buf) v = r.f64();
    unpack(buf, g);
  }
  return gs;
}

void write_rigid(Writer& w, const Quat& q, const Vec3& t) {
  w.f64(q.w());
  w.f64(q.x());
  w.f64(q.y());
  w.f64(q.z());
  for (int i = 0; i < 3; ++i) w.f64(t[i]);
}

void read_rigid(Reader& r, Quat& q, Vec3& t) {
  const double qw = r.f64(), qx = r.f64(), qy = r.f64(), qz = r.f64();
  q = Quat(qw, qx, qy, qz);
  for (int i = 0; i < 3; ++i) t[i] = r.f64();
}

void write_vec6(Writer& w, const Vec6& v) {
  for (int i = 0; i < 6; ++i) w.f64(v[i]);
}

Vec6 read_vec6(Reader& r) {
  Vec6 v;
  for (int i = 0; i < 6; ++i) v[i] = r.f64();
  return v;
}

void write_scene(Writer& w, const SceneModel& s) {
  w.u32(static_cast<std::uint32_t>(s.sh_degree));
  write_gaussians(w, s.static_set);
  write_gaussians(w, s.dynamic_set);
  w.u64(s.timestamps.size());
  for (const auto& ts : s.timestamps) {
    write_rigid(w, ts.deformation.rotation, ts.deformation.translation);
    write_vec6(w, ts.exposure_weight);
    write_rigid(w, ts.camera.initial.rotation, ts.camera.initial.translation);
    write_vec6(w, ts.camera.start.vector());
    write_vec6(w, ts.camera.end.vector());
  }
}

SceneModel read_scene(Reader& r) {
  SceneModel s;
  s.sh_degree = static_cast<int>(r.u32());
  if (s.sh_degree > 1) r.fail("sh_degree above 1 is not supported");
  s.static_set = read_gaussians(r);
  s.dynamic_set = read_gaussians(r);
  s.timestamps.resize(r.count());
  for (auto& ts : s.timestamps) {
    read_rigid(r, ts.deformation.rotation, ts.deformation.translation);
    ts.exposure_weight = read_vec6(r);
    read_rigid(r, ts.camera.initial.rotation, ts.camera.initial.translation);
    ts.camera.start = Twist::from_vector(read_vec6(r));
    ts.camera.end = Twist::from_vector(read_vec6(r));
  }
  return s;
}

void write_block(Writer& w, const AdamBlock& b) {
  w.u64(b.m.size());
  w.i64(b.step);
  for (double v : b.m) w.f64(v);
  for (double v : b.v) w.f64(v);
}

AdamBlock read_block(Reader& r) {
  AdamBlock b(r.count());
  b.step = r.i64();
  for (double& v : b.m) v = r.f64();
  for (double& v : b.v) v = r.f64();
  return b;
}

}  // namespace

void write_scene_file(const std::filesystem::path& path, const SceneModel& scene) {
  Writer w(path);
  write_header(w, kSceneMagic, kSceneVersion);
  write_scene(w, scene);
  w.finish();
}

SceneModel read_scene_file(const std::filesystem::path& path) {
  Reader r(path);
  read_header(r, kSceneMagic, kSceneVersion);
  SceneModel s = read_scene(r);
  r.expect_end();
  return s;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  Writer w(path);
  write_header(w, kCheckpointMagic, kCheckpointVersion);
  write_scene(w, c.scene);
  w.i32(c.exposure.subframes);
  w.f64(c.exposure.duration);
  w.i32(c.exposure.reference);
  w.u8(c.optimizer ? 1 : 0);
  if (c.optimizer) {
    const OptimizerState& o = *c.optimizer;
    w.f64(o.adam.beta1);
    w.f64(o.adam.beta2);
    w.f64(o.adam.eps);
    write_block(w, o.gaussians);
    w.u64(o.deformation.size());
    for (const auto& b : o.deformation) write_block(w, b);
    w.u64(o.camera.size());
    for (const auto& b : o.camera) write_block(w, b);
  }
  w.i32(c.next_epoch);
  w.u64(c.history.size());
  for (const EpochRecord& h : c.history) {
    w.i32(h.epoch);
    w.f64(h.l_dym);
    w.f64(h.l_static);
    w.f64(h.l_total);
    w.f64(h.rot_err_deg);
    w.f64(h.trans_err);
  }
  w.finish();
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  read_header(r, kCheckpointMagic, kCheckpointVersion);
  Checkpoint c;
  c.scene = read_scene(r);
  c.exposure.subframes = r.i32();
  c.exposure.duration = r.f64();
  c.exposure.reference = r.i32();
  try {
    c.exposure.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  if (r.u8()) {
    OptimizerState o;
    o.adam.beta1 = r.f64();
    o.adam.beta2 = r.f64();
    o.adam.eps = r.f64();
    o.gaussians = read_block(r);
    o.deformation.resize(r.count());
    for (auto& b : o.deformation) b = read_block(r);
    o.camera.resize(r.count());
    for (auto& b : o.camera) b = read_block(r);
    try {
      o.check_matches(c.scene);
    } catch (const std::invalid_argument& e) {
      r.fail(e.what());
    }
    c.optimizer = std::move(o);
  }
  c.next_epoch = r.i32();
  c.history.resize(r.count());
  for (EpochRecord& h : c.history) {
    h.epoch = r.i32();
    h.l_dym = r.f64();
    h.l_static = r.f64();
    h.l_total = r.f64();
    h.rot_err_deg = r.f64();
    h.trans_err = r.f64();
  }
  r.expect_end();
  return c;
}

Checkpoint to_checkpoint(const TrainState& state, const ExposureSpec& exposure) {
  Checkpoint c;
  c.scene = state.scene;
  c.exposure = exposure;
  c.optimizer = state.optimizer;
  c.next_epoch = state.next_epoch;
  c.history = state.history;
  return c;
}

TrainState to_train_state(const Checkpoint& c, const AdamConfig& adam) {
  TrainState s;
  s.scene = c.scene;
  s.optimizer = c.optimizer ? *c.optimizer : OptimizerState::for_scene(c.scene, adam);
  s.next_epoch = c.next_epoch;
  s.history = c.history;
  return s;
}

}  // namespace blursplat
