#include "blursplat/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace blursplat {

namespace {
void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b) || a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": image dimensions differ (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
  }
}

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    w[i] = std::exp(-(x * x) / (2.0 * 1.5 * 1.5));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}
}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  if (a.size() == 0) throw std::invalid_argument("mse: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrCap;
  return std::min(10.0 * std::log10(1.0 / e), kPsnrCap);
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  if (a.width < kWindow || a.height < kWindow) {
    throw std::invalid_argument("ssim: images must be at least 11x11");
  }
  const auto w = gaussian_window();
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  const int ow = a.width - kWindow + 1;
  const int oh = a.height - kWindow + 1;
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    double channel = 0.0;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int j = 0; j < kWindow; ++j) {
          for (int i = 0; i < kWindow; ++i) {
            const double k = w[j] * w[i];
            const double p = a.at(x + i, y + j, ch);
            const double q = b.at(x + i, y + j, ch);
            mx += k * p;
            my += k * q;
            sxx += k * p * p;
            syy += k * q * q;
            sxy += k * p * q;
          }
        }
        const double vx = sxx - mx * mx;
        const double vy = syy - my * my;
        const double cov = sxy - mx * my;
        channel += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    total += channel / (static_cast<double>(ow) * oh);
  }
  return total / 3.0;
}

Vec3 camera_center(const Pose& pose) { return -(pose.rotation.conjugate() * pose.translation); }

PoseError pose_error(const Pose& estimate, const Pose& truth) {
  const Quat rel = estimate.rotation.normalized() * truth.rotation.normalized().conjugate();
  PoseError e;
  e.rotation_deg = rotation_angle(rel) * 180.0 / std::numbers::pi;
  e.translation = (camera_center(estimate) - camera_center(truth)).norm();
  return e;
}

double laplacian_sharpness(const Image& img) {
  if (img.width < 1 || img.height < 1) throw std::invalid_argument("laplacian_sharpness: empty image");
  const int w = img.width, h = img.height;
  std::vector<double> lum(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) lum[y * w + x] = luminance(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
  auto l = [&](int x, int y) { return lum[std::clamp(y, 0, h - 1) * w + std::clamp(x, 0, w - 1)]; };
  std::vector<double> resp;
  resp.reserve(lum.size());
  double mean = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = l(x - 1, y) + l(x + 1, y) + l(x, y - 1) + l(x, y + 1) - 4.0 * l(x, y);
      resp.push_back(r);
      mean += r;
    }
  }
  mean /= static_cast<double>(resp.size());
  double var = 0.0;
  for (double r : resp) var += (r - mean) * (r - mean);
  return var / static_cast<double>(resp.size());
}

}  // namespace blursplat
