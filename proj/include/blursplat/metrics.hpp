// Image-quality and pose-accuracy metrics.
#pragma once

#include "blursplat/render.hpp"

namespace blursplat {

/// PSNR reported for identical images (and the upper clamp for all others).
inline constexpr double kPsnrCap = 100.0;

/// Mean squared error over all pixels and channels.
double mse(const Image& a, const Image& b);

/// 10 log10(1 / MSE) for images in [0, 1], clamped to kPsnrCap.
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1; mean over the valid region, averaged over
/// channels. Throws std::invalid_argument for images smaller than 11x11.
double ssim(const Image& a, const Image& b);

struct PoseError {
  double rotation_deg = 0.0;
  double translation = 0.0;  // distance between camera centres
};

PoseError pose_error(const Pose& estimate, const Pose& truth);

/// Camera centre -R^T t of a world-to-camera pose.
Vec3 camera_center(const Pose& pose);

/// Rec. 709 luma of a linear RGB triple.
inline double luminance(double r, double g, double b) { return 0.2126 * r + 0.7152 * g + 0.0722 * b; }

/// Population variance of the 4-neighbour Laplacian of the luminance, with
/// replicated borders.
double laplacian_sharpness(const Image& img);

}  // namespace blursplat
