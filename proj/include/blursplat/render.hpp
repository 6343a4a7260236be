// Differentiable pinhole splatting rasterizer.
//
// Gaussians are projected with the first-order EWA approximation, sorted by
// (depth, input index) and alpha-composited front to back over a declared
// background. Pixel (x, y) samples the continuous image at (x + 0.5, y + 0.5).
#pragma once

#include "blursplat/scene.hpp"

#include <optional>
#include <span>
#include <vector>

namespace blursplat {

struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  double near = 0.01;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
  bool operator==(const Camera&) const = default;
};

/// width x height x 3 linear RGB, row-major, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}
  static Image filled(int w, int h, const Vec3& rgb);

  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

struct Splat2D {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Identity();  // includes the dilation
  double depth = 1.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

struct RenderSettings {
  Vec3 background = Vec3::Zero();
  double dilation = 0.3;            // px^2 added to the projected covariance
  double cutoff_sigma = 3.0;        // splat support, in standard deviations
  double min_transmittance = 1e-4;  // early-out threshold
  int tile_size = 8;
  int threads = 1;  // parallelism across independent renders
};

/// Projects one Gaussian; std::nullopt when culled.
std::optional<Splat2D> project(const GaussianPrimitive& g, const Camera& cam, const Pose& pose,
                               const RenderSettings& settings = {});

/// Front-to-back compositing. Throws std::invalid_argument on a non-finite
/// splat.
Image rasterize(std::span<const Splat2D> splats, const Camera& cam, const Vec3& background,
                const RenderSettings& settings = {});

struct SplatGrad {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Zero();
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

/// Everything the backward pass needs from a forward render.
class RenderTape {
 public:
  bool recorded() const { return recorded_; }
  std::size_t visible_count() const { return splats_.size(); }

 private:
  friend Image render(std::span<const GaussianPrimitive>, const Camera&, const Pose&, const RenderSettings&,
                      RenderTape*);
  friend struct RenderBackward;

  struct ProjectionCache {
    int source = 0;
    Vec3 cam_point;
    Mat3 rot;  // normalised Gaussian rotation
    Vec3 scale;
    Eigen::Matrix<bool, 3, 1> scale_clamped;
    Mat3 sigma;
    Eigen::Matrix<double, 2, 3> jac;
    Mat3 cam_cov;
    Vec3 view;  // mean - camera centre
    Vec3 color_raw;
    double opacity = 0.0;
  };

  bool recorded_ = false;
  Camera camera_;
  Pose pose_;
  RenderSettings settings_;
  std::vector<GaussianPrimitive> gaussians_;
  std::vector<Splat2D> splats_;
  std::vector<ProjectionCache> cache_;
};

Image render(std::span<const GaussianPrimitive> gaussians, const Camera& cam, const Pose& pose,
             const RenderSettings& settings = {}, RenderTape* tape = nullptr);

struct RenderGradients {
  std::vector<GaussianGrad> gaussians;  // one per input Gaussian
  RigidGrad pose;
};

/// Gradients of sum(upstream * image) with respect to every input Gaussian and
/// the render pose. Throws std::logic_error when the tape holds no forward
/// pass.
RenderGradients render_backward(const RenderTape& tape, const Image& upstream);

/// Gradients with respect to 2D splats only (rasterizer stage).
std::vector<SplatGrad> rasterize_backward(std::span<const Splat2D> splats, const Camera& cam,
                                          const Vec3& background, const RenderSettings& settings,
                                          const Image& upstream);

}  // namespace blursplat
