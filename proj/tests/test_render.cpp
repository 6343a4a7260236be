#include "test_util.hpp"

#include <doctest.h>

#include <numeric>

using namespace blursplat;
using namespace bs_test;

namespace {

// Straight-line evaluation of the compositing sum at an arbitrary image-plane
// point, with its own projection code.
struct RefSplat {
  Vec2 mean;
  Mat2 conic;
  double depth;
  Vec3 color;
  double opacity;
};

std::vector<RefSplat> reference_project(std::span<const GaussianPrimitive> gs, const Camera& cam, const Pose& pose) {
  std::vector<RefSplat> out;
  const Mat3 W = pose.rotation.toRotationMatrix();
  const Vec3 centre = -W.transpose() * pose.translation;
  for (const auto& g : gs) {
    const Vec3 p = W * g.mean + pose.translation;
    if (p.z() <= cam.near) continue;
    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx / p.z(), 0, -cam.fx * p.x() / (p.z() * p.z()), 0, cam.fy / p.z(), -cam.fy * p.y() / (p.z() * p.z());
    const Mat3 R = g.rotation.normalized().toRotationMatrix();
    const Vec3 s = g.log_scale.array().exp();
    const Mat3 sigma = R * s.array().square().matrix().asDiagonal() * R.transpose();
    const Mat2 cov = J * W * sigma * W.transpose() * J.transpose() + 0.3 * Mat2::Identity();
    RefSplat r;
    r.mean = Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    r.conic = cov.inverse();
    r.depth = p.z();
    r.color = evaluate_color(g, (g.mean - centre).normalized()).cwiseMax(0.0).cwiseMin(1.0);
    r.opacity = 1.0 / (1.0 + std::exp(-g.opacity_logit));
    out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(), [](const RefSplat& a, const RefSplat& b) { return a.depth < b.depth; });
  return out;
}

Vec3 reference_point(const std::vector<RefSplat>& splats, const Vec2& x, const Vec3& bg, double cutoff) {
  Vec3 c = Vec3::Zero();
  double t = 1.0;
  for (const auto& s : splats) {
    const Vec2 d = x - s.mean;
    const double power = 0.5 * d.dot(s.conic * d);
    if (power > 0.5 * cutoff * cutoff) continue;
    const double a = s.opacity * std::exp(-power);
    c += t * a * s.color;
    t *= 1.0 - a;
    if (t < 1e-4) break;
  }
  return c + t * bg;
}

Image supersampled(std::span<const GaussianPrimitive> gs, const Camera& cam, const Pose& pose, const Vec3& bg,
                   double cutoff, int k) {
  const auto splats = reference_project(gs, cam, pose);
  Image img(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      Vec3 acc = Vec3::Zero();
      for (int j = 0; j < k; ++j) {
        for (int i = 0; i < k; ++i) acc += reference_point(splats, Vec2(x + (i + 0.5) / k, y + (j + 0.5) / k), bg, cutoff);
      }
      acc /= k * k;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = acc[c];
    }
  }
  return img;
}

double image_dot(const Image& a, const Image& b) {
  return std::inner_product(a.data.begin(), a.data.end(), b.data.begin(), 0.0);
}

Image random_upstream(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Image img(w, h);
  for (double& v : img.data) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("project: on-axis mean, isotropic footprint, culling") {
  const Camera cam = small_camera(32, 40.0);
  GaussianPrimitive g;
  g.mean = Vec3(0, 0, 5);
  const double sigma = 0.2;
  g.log_scale = Vec3::Constant(std::log(sigma));
  const auto s = project(g, cam, Pose::identity());
  REQUIRE(s);
  CHECK(s->mean.x() == cam.cx);
  CHECK(s->mean.y() == cam.cy);
  CHECK(s->depth == 5.0);
  const double expected = std::pow(cam.fx * sigma / 5.0, 2) + 0.3;
  CHECK(s->cov(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(s->cov(1, 1) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(s->cov(0, 1)) < 1e-12);

  GaussianPrimitive behind = g;
  behind.mean = Vec3(0, 0, -1);
  CHECK_FALSE(project(behind, cam, Pose::identity()));
  GaussianPrimitive off = g;
  off.mean = Vec3(50, 0, 5);
  CHECK_FALSE(project(off, cam, Pose::identity()));
}

TEST_CASE("project: covariance matches a numerically differentiated projection") {
  std::mt19937_64 rng(31);
  const Camera cam = small_camera(48, 50.0);
  for (int i = 0; i < 20; ++i) {
    const GaussianPrimitive g = random_gaussian(rng, Vec3(0, 0, 4), 0.8);
    const Pose pose = random_pose(rng, 0.2, 0.2);
    const auto s = project(g, cam, pose);
    if (!s) continue;
    auto pi = [&](const Vec3& x) {
      const Vec3 p = pose.rotation_matrix() * x + pose.translation;
      return Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    };
    Eigen::Matrix<double, 2, 3> J;
    for (int k = 0; k < 3; ++k) {
      Vec3 e = Vec3::Zero();
      e[k] = 1e-6;
      J.col(k) = (pi(g.mean + e) - pi(g.mean - e)) / 2e-6;
    }
    const Mat2 expected = J * g.covariance() * J.transpose() + 0.3 * Mat2::Identity();
    CHECK((s->cov - expected).cwiseAbs().maxCoeff() < 1e-6 * expected.norm());
    CHECK((s->mean - pi(g.mean)).norm() < 1e-12);
  }
}

TEST_CASE("rasterize: opaque layer, two half layers, empty list") {
  const Camera cam = small_camera(8, 8.0);
  Splat2D big;
  big.mean = Vec2(4, 4);
  big.cov = Mat2::Identity() * 1e10;
  big.opacity = 1.0 - 1e-9;
  big.color = Vec3(0.3, 0.6, 0.9);
  const Image one = rasterize(std::vector{big}, cam, Vec3::Zero());
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) CHECK(std::abs(one.at(x, y, c) - big.color[c]) < 1e-6);
    }
  }

  // alpha is exactly 0.5 at the centre pixel of two coincident splats
  Splat2D a = big, b = big;
  a.mean = b.mean = Vec2(4.5, 4.5);
  a.opacity = b.opacity = 0.5;
  a.cov = b.cov = Mat2::Identity() * 2.0;
  a.color = Vec3(1, 0, 0);
  b.color = Vec3(0, 1, 0);
  a.depth = 1.0;
  b.depth = 2.0;
  const Vec3 bg(0.2, 0.2, 0.8);
  const Image two = rasterize(std::vector{b, a}, cam, bg);
  const Vec3 expected = 0.5 * a.color + 0.25 * b.color + 0.25 * bg;
  for (int c = 0; c < 3; ++c) CHECK(two.at(4, 4, c) == doctest::Approx(expected[c]).epsilon(1e-15));

  const Image empty = rasterize(std::vector<Splat2D>{}, cam, bg);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) CHECK(empty.at(x, y, c) == bg[c]);
    }
  }
}

TEST_CASE("rasterize rejects non-finite splats") {
  const Camera cam = small_camera(8, 8.0);
  Splat2D s;
  s.mean = Vec2(4, std::nan(""));
  CHECK_THROWS_AS(rasterize(std::vector{s}, cam, Vec3::Zero()), std::invalid_argument);
}

TEST_CASE("render agrees with a supersampled point-evaluation reference") {
  std::mt19937_64 rng(41);
  const Camera cam = small_camera(8, 10.0);
  const Vec3 bg(0.1, 0.2, 0.3);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<GaussianPrimitive> gs;
    for (int i = 0; i < 5; ++i) {
      GaussianPrimitive g = random_gaussian(rng, Vec3(0, 0, 4), 0.7);
      g.log_scale = random_vec(rng, std::log(1.2), std::log(2.0));
      gs.push_back(g);
    }
    const Pose pose = random_pose(rng, 0.05, 0.05);
    // one sample per pixel centre reproduces the rasterizer exactly
    CHECK(max_abs_diff(render(gs, cam, pose, RenderSettings{bg}), supersampled(gs, cam, pose, bg, 3.0, 1)) < 1e-12);
    // box-filtered reference; a wide cutoff keeps the truncation edge out of
    // the sampling error
    RenderSettings wide{bg};
    wide.cutoff_sigma = 5.0;
    const Image fast = render(gs, cam, pose, wide);
    const Image ref = supersampled(gs, cam, pose, bg, 5.0, 8);
    CHECK(mean_abs_diff(fast, ref) < 1e-3);
  }
}

TEST_CASE("doubling fx doubles the horizontal second moment of the footprint") {
  Camera cam = small_camera(96, 20.0);
  GaussianPrimitive g;
  g.mean = Vec3(0, 0, 4);
  g.log_scale = Vec3::Constant(std::log(1.0));
  g.opacity_logit = 0.0;
  g.color = Vec3::Ones();
  auto moments = [](const Image& img) {
    double w = 0, mx = 0, my = 0;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        w += img.at(x, y, 0);
        mx += img.at(x, y, 0) * (x + 0.5);
        my += img.at(x, y, 0) * (y + 0.5);
      }
    }
    mx /= w;
    my /= w;
    double vx = 0, vy = 0;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        vx += img.at(x, y, 0) * std::pow(x + 0.5 - mx, 2);
        vy += img.at(x, y, 0) * std::pow(y + 0.5 - my, 2);
      }
    }
    return Vec2(std::sqrt(vx / w), std::sqrt(vy / w));
  };
  const Vec2 m1 = moments(render(std::vector{g}, cam, Pose::identity()));
  cam.fx *= 2.0;
  const Vec2 m2 = moments(render(std::vector{g}, cam, Pose::identity()));
  CHECK(m2.x() / m1.x() == doctest::Approx(2.0).epsilon(0.02));
  CHECK(m2.y() / m1.y() == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("render: identity warp, permutation invariance, range and weight sum") {
  std::mt19937_64 rng(51);
  const Camera cam = small_camera(24, 24.0);
  auto gs = random_cloud(rng, 12, Vec3(0, 0, 4), 1.0);
  const Pose pose = random_pose(rng, 0.1, 0.1);
  const RenderSettings settings{Vec3(0.3, 0.3, 0.3)};
  const Image base = render(gs, cam, pose, settings);
  CHECK(bitwise_equal(base, render(apply_warp(gs, relative_warp(pose, pose)), cam, pose, settings)));

  auto shuffled = gs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(max_abs_diff(base, render(shuffled, cam, pose, settings)) < 1e-7);

  for (double v : base.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // white splats over a white background: weights plus transmittance = 1
  for (auto& g : gs) {
    g.color = Vec3::Ones();
    g.sh1.setZero();
  }
  const Image white = render(gs, cam, pose, RenderSettings{Vec3::Ones()});
  for (double v : white.data) CHECK(std::abs(v - 1.0) < 1e-12);
}

TEST_CASE("render is independent of the tile size") {
  std::mt19937_64 rng(52);
  const Camera cam = small_camera(30, 30.0);
  const auto gs = random_cloud(rng, 15, Vec3(0, 0, 4), 1.0);
  RenderSettings a, b;
  b.tile_size = 16;
  CHECK(bitwise_equal(render(gs, cam, Pose::identity(), a), render(gs, cam, Pose::identity(), b)));
}

TEST_CASE("render_backward: zero upstream, missing tape, occluded colour") {
  std::mt19937_64 rng(61);
  const Camera cam = small_camera(16, 16.0);
  const auto gs = random_cloud(rng, 5, Vec3(0, 0, 4), 0.5);
  RenderTape tape;
  CHECK_THROWS_AS(render_backward(tape, Image(16, 16)), std::logic_error);
  render(gs, cam, Pose::identity(), {}, &tape);
  const RenderGradients zero = render_backward(tape, Image(16, 16));
  for (const auto& g : zero.gaussians) {
    std::array<double, kGaussianParamCount> buf{};
    pack(g, buf);
    for (double v : buf) CHECK(v == 0.0);
  }
  CHECK(zero.pose.rotation.norm() == 0.0);
  CHECK(zero.pose.translation.norm() == 0.0);

  GaussianPrimitive front;
  front.mean = Vec3(0, 0, 2);
  front.log_scale = Vec3::Constant(std::log(50.0));
  front.opacity_logit = 25.0;
  front.color = Vec3(0.5, 0.5, 0.5);
  GaussianPrimitive back = front;
  back.mean = Vec3(0, 0, 6);
  back.log_scale = Vec3::Constant(std::log(0.5));
  back.opacity_logit = 2.0;
  RenderTape t2;
  render(std::vector{back, front}, cam, Pose::identity(), {}, &t2);
  const RenderGradients g = render_backward(t2, Image(16, 16, 1.0));
  CHECK(g.gaussians[0].color.cwiseAbs().maxCoeff() < 1e-6);
  CHECK(g.gaussians[1].color.cwiseAbs().maxCoeff() > 1.0);
}

TEST_CASE("rasterize_backward matches central differences") {
  std::mt19937_64 rng(71);
  const Camera cam = small_camera(16, 16.0);
  RenderSettings settings;
  settings.cutoff_sigma = 8.0;
  const Vec3 bg(0.1, 0.2, 0.3);
  std::vector<Splat2D> splats;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 4; ++i) {
    Splat2D s;
    s.mean = Vec2(4 + 8 * u(rng), 4 + 8 * u(rng));
    const Eigen::Matrix2d a = Eigen::Matrix2d::Random();
    s.cov = a * a.transpose() * 4.0 + Mat2::Identity() * 3.0;
    s.depth = 1.0 + i;
    s.color = random_vec(rng, 0.1, 0.9);
    s.opacity = 0.2 + 0.5 * u(rng);
    splats.push_back(s);
  }
  const Image up = random_upstream(rng, 16, 16);
  const auto grads = rasterize_backward(splats, cam, bg, settings, up);
  auto f = [&](const std::vector<Splat2D>& ss) { return image_dot(rasterize(ss, cam, bg, settings), up); };
  const double h = 1e-6;
  auto fd = [&](auto&& perturb) {
    auto p = splats, m = splats;
    perturb(p, h);
    perturb(m, -h);
    return (f(p) - f(m)) / (2 * h);
  };
  for (std::size_t i = 0; i < splats.size(); ++i) {
    for (int k = 0; k < 2; ++k) {
      CHECK(grads[i].mean[k] == doctest::Approx(fd([&](auto& s, double d) { s[i].mean[k] += d; })).epsilon(1e-5));
    }
    for (int k = 0; k < 3; ++k) {
      CHECK(grads[i].color[k] == doctest::Approx(fd([&](auto& s, double d) { s[i].color[k] += d; })).epsilon(1e-5));
    }
    CHECK(grads[i].opacity == doctest::Approx(fd([&](auto& s, double d) { s[i].opacity += d; })).epsilon(1e-5));
    CHECK(grads[i].cov(0, 0) == doctest::Approx(fd([&](auto& s, double d) { s[i].cov(0, 0) += d; })).epsilon(1e-5));
    CHECK(grads[i].cov(1, 1) == doctest::Approx(fd([&](auto& s, double d) { s[i].cov(1, 1) += d; })).epsilon(1e-5));
    const double off = fd([&](auto& s, double d) {
      s[i].cov(0, 1) += d;
      s[i].cov(1, 0) += d;
    });
    CHECK(grads[i].cov(0, 1) + grads[i].cov(1, 0) == doctest::Approx(off).epsilon(1e-5));
  }
}

TEST_CASE("render_backward matches central differences for every Gaussian field and the pose") {
  std::mt19937_64 rng(81);
  const Camera cam = small_camera(16, 16.0);
  RenderSettings settings;
  settings.cutoff_sigma = 8.0;
  settings.background = Vec3(0.1, 0.2, 0.3);
  auto gs = random_cloud(rng, 5, Vec3(0, 0, 4), 0.6);
  const Pose pose = random_pose(rng, 0.1, 0.1);
  const Image up = random_upstream(rng, 16, 16);
  RenderTape tape;
  render(gs, cam, pose, settings, &tape);
  const RenderGradients grads = render_backward(tape, up);

  const double h = 1e-5;
  auto f = [&](const std::vector<GaussianPrimitive>& g, const Pose& p) {
    return image_dot(render(g, cam, p, settings), up);
  };
  for (std::size_t i = 0; i < gs.size(); ++i) {
    std::array<double, kGaussianParamCount> x{}, a{};
    pack(gs[i], x);
    pack(grads.gaussians[i], a);
    for (int k = 0; k < kGaussianParamCount; ++k) {
      auto p = gs, m = gs;
      auto xp = x, xm = x;
      xp[static_cast<std::size_t>(k)] += h;
      xm[static_cast<std::size_t>(k)] -= h;
      unpack(xp, p[i]);
      unpack(xm, m[i]);
      const double num = (f(p, pose) - f(m, pose)) / (2 * h);
      CHECK(a[static_cast<std::size_t>(k)] == doctest::Approx(num).epsilon(1e-4).scale(1e-3));
    }
  }
  for (int k = 0; k < 3; ++k) {
    Pose p = pose, m = pose;
    p.translation[k] += h;
    m.translation[k] -= h;
    CHECK(grads.pose.translation[k] == doctest::Approx((f(gs, p) - f(gs, m)) / (2 * h)).epsilon(1e-4));
  }
  for (int trial = 0; trial < 4; ++trial) {
    const Vec4 q = wxyz(pose.rotation);
    Vec4 v = Vec4::Random();
    v -= q * q.dot(v);
    Pose p = pose, m = pose;
    p.rotation = quat_from_wxyz((q + h * v).normalized());
    m.rotation = quat_from_wxyz((q - h * v).normalized());
    CHECK(grads.pose.rotation.dot(v) == doctest::Approx((f(gs, p) - f(gs, m)) / (2 * h)).epsilon(1e-4));
  }
}
