#include "blursplat/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace blursplat {

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("camera: image size must be at least 1x1");
  if (!(near > 0.0)) throw std::invalid_argument("camera: near plane must be positive");
}

Image Image::filled(int w, int h, const Vec3& rgb) {
  Image img(w, h);
  for (std::size_t i = 0; i < img.data.size(); i += 3) {
    img.data[i] = rgb[0];
    img.data[i + 1] = rgb[1];
    img.data[i + 2] = rgb[2];
  }
  return img;
}

namespace {

struct Prepared {
  Vec2 mean;
  double qa, qb, qc;  // conic (inverse covariance)
  Vec3 color;
  double opacity;
  int x0, x1, y0, y1;
};

struct Layout {
  std::vector<Prepared> splats;
  int tiles_x = 0;
  int tiles_y = 0;
  int tile = 8;
  std::vector<std::vector<int>> bins;  // per tile, indices in compositing order
};

bool footprint(const Vec2& mean, const Mat2& cov, const Camera& cam, double cutoff, int& x0, int& x1, int& y0,
               int& y1) {
  const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  const double lambda_max = mid + std::sqrt(std::max(mid * mid - det, 0.0));
  const double r = cutoff * std::sqrt(lambda_max);
  const double fx0 = std::ceil(mean.x() - r - 0.5);
  const double fx1 = std::floor(mean.x() + r - 0.5);
  const double fy0 = std::ceil(mean.y() - r - 0.5);
  const double fy1 = std::floor(mean.y() + r - 0.5);
  if (fx1 < 0.0 || fy1 < 0.0 || fx0 > cam.width - 1 || fy0 > cam.height - 1) return false;
  x0 = static_cast<int>(std::max(fx0, 0.0));
  y0 = static_cast<int>(std::max(fy0, 0.0));
  x1 = static_cast<int>(std::min(fx1, static_cast<double>(cam.width - 1)));
  y1 = static_cast<int>(std::min(fy1, static_cast<double>(cam.height - 1)));
  return x0 <= x1 && y0 <= y1;
}

Layout prepare(std::span<const Splat2D> splats, const Camera& cam, const RenderSettings& settings) {
  cam.validate();
  if (settings.tile_size < 1) throw std::invalid_argument("render: tile size must be positive");
  Layout layout;
  layout.tile = settings.tile_size;
  layout.tiles_x = (cam.width + layout.tile - 1) / layout.tile;
  layout.tiles_y = (cam.height + layout.tile - 1) / layout.tile;
  layout.bins.resize(static_cast<std::size_t>(layout.tiles_x) * layout.tiles_y);
  layout.splats.resize(splats.size());

  std::vector<int> order(splats.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const Splat2D& s = splats[i];
    const bool finite = s.mean.allFinite() && s.cov.allFinite() && std::isfinite(s.depth) && s.color.allFinite() &&
                        std::isfinite(s.opacity);
    if (!finite) throw std::invalid_argument("rasterize: non-finite splat " + std::to_string(i));
    const double det = s.cov(0, 0) * s.cov(1, 1) - s.cov(0, 1) * s.cov(1, 0);
    if (!(det > 0.0) || !(s.cov(0, 0) > 0.0)) {
      throw std::invalid_argument("rasterize: splat " + std::to_string(i) + " covariance is not positive definite");
    }
    Prepared& p = layout.splats[i];
    p.mean = s.mean;
    p.qa = s.cov(1, 1) / det;
    p.qb = -0.5 * (s.cov(0, 1) + s.cov(1, 0)) / det;
    p.qc = s.cov(0, 0) / det;
    p.color = s.color;
    p.opacity = s.opacity;
    if (!footprint(s.mean, s.cov, cam, settings.cutoff_sigma, p.x0, p.x1, p.y0, p.y1)) p.x0 = p.x1 + 1;
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return splats[a].depth < splats[b].depth; });

  for (int idx : order) {
    const Prepared& p = layout.splats[static_cast<std::size_t>(idx)];
    if (p.x0 > p.x1) continue;
    for (int ty = p.y0 / layout.tile; ty <= p.y1 / layout.tile; ++ty) {
      for (int tx = p.x0 / layout.tile; tx <= p.x1 / layout.tile; ++tx) {
        layout.bins[static_cast<std::size_t>(ty) * layout.tiles_x + tx].push_back(idx);
      }
    }
  }
  return layout;
}

struct Contribution {
  int idx;
  double alpha;
  double transmittance;  // before this splat
  double gauss;          // exp(-power)
  double dx, dy;
};

/// Composites one pixel; fills `trace` with the contributing splats when given.
Vec3 composite(const Layout& layout, const std::vector<int>& bin, int px, int py, const Vec3& background,
               const RenderSettings& settings, std::vector<Contribution>* trace, double* final_t) {
  const double half_cut_sq = 0.5 * settings.cutoff_sigma * settings.cutoff_sigma;
  const double sx = px + 0.5;
  const double sy = py + 0.5;
  double t = 1.0;
  Vec3 c = Vec3::Zero();
  for (int idx : bin) {
    const Prepared& p = layout.splats[static_cast<std::size_t>(idx)];
    if (px < p.x0 || px > p.x1 || py < p.y0 || py > p.y1) continue;
    const double dx = sx - p.mean.x();
    const double dy = sy - p.mean.y();
    const double power = 0.5 * (p.qa * dx * dx + 2.0 * p.qb * dx * dy + p.qc * dy * dy);
    if (power > half_cut_sq) continue;
    const double gauss = std::exp(-power);
    const double alpha = p.opacity * gauss;
    if (trace) trace->push_back({idx, alpha, t, gauss, dx, dy});
    c += p.color * (alpha * t);
    t *= 1.0 - alpha;
    if (t < settings.min_transmittance) break;
  }
  c += t * background;
  if (final_t) *final_t = t;
  return c;
}

Image rasterize_layout(const Layout& layout, const Camera& cam, const Vec3& background,
                       const RenderSettings& settings) {
  Image img(cam.width, cam.height);
  for (int ty = 0; ty < layout.tiles_y; ++ty) {
    for (int tx = 0; tx < layout.tiles_x; ++tx) {
      const auto& bin = layout.bins[static_cast<std::size_t>(ty) * layout.tiles_x + tx];
      const int y_end = std::min((ty + 1) * layout.tile, cam.height);
      const int x_end = std::min((tx + 1) * layout.tile, cam.width);
      for (int py = ty * layout.tile; py < y_end; ++py) {
        for (int px = tx * layout.tile; px < x_end; ++px) {
          const Vec3 c = composite(layout, bin, px, py, background, settings, nullptr, nullptr);
          for (int ch = 0; ch < 3; ++ch) img.at(px, py, ch) = c[ch];
        }
      }
    }
  }
  return img;
}

std::vector<SplatGrad> rasterize_layout_backward(const Layout& layout, const Camera& cam, const Vec3& background,
                                                 const RenderSettings& settings, const Image& upstream) {
  if (upstream.width != cam.width || upstream.height != cam.height) {
    throw std::invalid_argument("render_backward: upstream gradient has the wrong size");
  }
  std::vector<SplatGrad> grads(layout.splats.size());
  // Gradient with respect to the full conic matrix, converted at the end.
  std::vector<Mat2> conic_grad(layout.splats.size(), Mat2::Zero());
  std::vector<Contribution> trace;
  for (int ty = 0; ty < layout.tiles_y; ++ty) {
    for (int tx = 0; tx < layout.tiles_x; ++tx) {
      const auto& bin = layout.bins[static_cast<std::size_t>(ty) * layout.tiles_x + tx];
      if (bin.empty()) continue;
      const int y_end = std::min((ty + 1) * layout.tile, cam.height);
      const int x_end = std::min((tx + 1) * layout.tile, cam.width);
      for (int py = ty * layout.tile; py < y_end; ++py) {
        for (int px = tx * layout.tile; px < x_end; ++px) {
          const Vec3 g(upstream.at(px, py, 0), upstream.at(px, py, 1), upstream.at(px, py, 2));
          if (g.isZero(0.0)) continue;
          trace.clear();
          composite(layout, bin, px, py, background, settings, &trace, nullptr);
          Vec3 behind = background;  // normalised colour of everything behind the current splat
          for (auto it = trace.rbegin(); it != trace.rend(); ++it) {
            const Prepared& p = layout.splats[static_cast<std::size_t>(it->idx)];
            SplatGrad& sg = grads[static_cast<std::size_t>(it->idx)];
            const double w = it->alpha * it->transmittance;
            sg.color += w * g;
            const double dl_dalpha = it->transmittance * g.dot(p.color - behind);
            behind = it->alpha * p.color + (1.0 - it->alpha) * behind;

            sg.opacity += dl_dalpha * it->gauss;
            const double dl_dpower = -dl_dalpha * it->alpha;
            // power = 0.5 d^T Q d, d = pixel - mean
            const double qdx = p.qa * it->dx + p.qb * it->dy;
            const double qdy = p.qb * it->dx + p.qc * it->dy;
            sg.mean += Vec2(-dl_dpower * qdx, -dl_dpower * qdy);
            Mat2& gq = conic_grad[static_cast<std::size_t>(it->idx)];
            const double h = 0.5 * dl_dpower;
            gq(0, 0) += h * it->dx * it->dx;
            gq(0, 1) += h * it->dx * it->dy;
            gq(1, 0) += h * it->dy * it->dx;
            gq(1, 1) += h * it->dy * it->dy;
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Prepared& p = layout.splats[i];
    Mat2 q;
    q << p.qa, p.qb, p.qb, p.qc;
    grads[i].cov = -q.transpose() * conic_grad[i] * q.transpose();
  }
  return grads;
}

Mat3 rotation_of(const Quat& q) { return q.normalized().toRotationMatrix(); }

}  // namespace

struct RenderBackward {
  using Cache = RenderTape::ProjectionCache;

  static std::optional<Splat2D> project_cached(const GaussianPrimitive& g, const Camera& cam, const Pose& pose,
                                               const RenderSettings& settings, Cache* cache) {
    const Mat3 rp = pose.rotation_matrix();
    const Vec3 xc = rp * g.mean + pose.translation;
    if (!(xc.z() > cam.near)) return std::nullopt;
    const double z = xc.z();
    const double iz = 1.0 / z;

    Splat2D s;
    s.mean = Vec2(cam.fx * xc.x() * iz + cam.cx, cam.fy * xc.y() * iz + cam.cy);
    s.depth = z;

    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx * iz, 0.0, -cam.fx * xc.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * xc.y() * iz * iz;

    Vec3 scale;
    Eigen::Matrix<bool, 3, 1> clamped;
    for (int k = 0; k < 3; ++k) {
      const double e = std::exp(g.log_scale[k]);
      clamped[k] = e < kMinScale || e > kMaxScale;
      scale[k] = std::clamp(e, kMinScale, kMaxScale);
    }
    const Mat3 rot = rotation_of(g.rotation);
    const Mat3 m = rot * scale.asDiagonal();
    const Mat3 sigma = m * m.transpose();
    const Mat3 cam_cov = rp * sigma * rp.transpose();
    s.cov = jac * cam_cov * jac.transpose() + settings.dilation * Mat2::Identity();

    int x0, x1, y0, y1;
    if (!footprint(s.mean, s.cov, cam, settings.cutoff_sigma, x0, x1, y0, y1)) return std::nullopt;

    const Vec3 view = g.mean + rp.transpose() * pose.translation;  // mean - camera centre
    const Vec3 color_raw = evaluate_color(g, view.normalized());
    s.color = color_raw.cwiseMax(0.0).cwiseMin(1.0);
    s.opacity = g.opacity();

    if (cache) {
      cache->cam_point = xc;
      cache->rot = rot;
      cache->scale = scale;
      cache->scale_clamped = clamped;
      cache->sigma = sigma;
      cache->jac = jac;
      cache->cam_cov = cam_cov;
      cache->view = view;
      cache->color_raw = color_raw;
      cache->opacity = s.opacity;
    }
    return s;
  }

  static GaussianGrad project_backward(const GaussianPrimitive& g, const Camera& cam, const Pose& pose,
                                       const Cache& c, const SplatGrad& sg, Mat3& g_rp, Vec3& g_tp) {
    GaussianGrad out;
    const Mat3 rp = pose.rotation_matrix();

    // Opacity.
    out.opacity_logit = sg.opacity * c.opacity * (1.0 - c.opacity);

    // Colour, clamped to [0, 1].
    Vec3 g_col = sg.color;
    for (int k = 0; k < 3; ++k) {
      if (c.color_raw[k] < 0.0 || c.color_raw[k] > 1.0) g_col[k] = 0.0;
    }
    out.color = g_col;
    const double vnorm = c.view.norm();
    const Vec3 dir = c.view / vnorm;
    out.sh1 = sh1_basis(dir) * g_col.transpose();
    const Vec3 g_dir = kShC1 * sh1_permutation().transpose() * (g.sh1 * g_col);
    const Vec3 g_view = (g_dir - dir * dir.dot(g_dir)) / vnorm;
    out.mean += g_view;
    g_tp += rp * g_view;
    g_rp += pose.translation * g_view.transpose();

    // Covariance chain: cov2d = J V J^T + d I, V = Rp Sigma Rp^T.
    const Mat2 g_cov = 0.5 * (sg.cov + sg.cov.transpose());
    const Mat3 g_v = c.jac.transpose() * g_cov * c.jac;
    const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov * c.jac * c.cam_cov;
    const Mat3 g_sigma = rp.transpose() * g_v * rp;
    g_rp += 2.0 * g_v * rp * c.sigma;

    // Camera-space mean: through the pixel mean and through J.
    const double x = c.cam_point.x(), y = c.cam_point.y(), z = c.cam_point.z();
    const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3 g_xc = c.jac.transpose() * sg.mean;
    g_xc.x() += -cam.fx * iz2 * g_jac(0, 2);
    g_xc.y() += -cam.fy * iz2 * g_jac(1, 2);
    g_xc.z() += -cam.fx * iz2 * g_jac(0, 0) - cam.fy * iz2 * g_jac(1, 1) + 2.0 * cam.fx * x * iz3 * g_jac(0, 2) +
                2.0 * cam.fy * y * iz3 * g_jac(1, 2);
    out.mean += rp.transpose() * g_xc;
    g_rp += g_xc * g.mean.transpose();
    g_tp += g_xc;

    // Sigma = M M^T, M = R diag(s).
    const Mat3 m = c.rot * c.scale.asDiagonal();
    const Mat3 g_m = 2.0 * g_sigma * m;
    for (int k = 0; k < 3; ++k) {
      const double g_s = g_m.col(k).dot(c.rot.col(k));
      out.log_scale[k] = c.scale_clamped[k] ? 0.0 : g_s * c.scale[k];
    }
    const Mat3 g_rot = g_m * c.scale.asDiagonal();
    out.rotation = rotation_matrix_grad_to_quat(g.rotation, g_rot);
    return out;
  }

  static RenderGradients run(const RenderTape& tape, const Image& upstream) {
    const std::vector<SplatGrad> splat_grads = rasterize_backward(tape.splats_, tape.camera_,
                                                                  tape.settings_.background, tape.settings_, upstream);
    RenderGradients out;
    out.gaussians.resize(tape.gaussians_.size());
    Mat3 g_rp = Mat3::Zero();
    Vec3 g_tp = Vec3::Zero();
    for (std::size_t i = 0; i < tape.cache_.size(); ++i) {
      const Cache& c = tape.cache_[i];
      const auto src = static_cast<std::size_t>(c.source);
      out.gaussians[src] =
          project_backward(tape.gaussians_[src], tape.camera_, tape.pose_, c, splat_grads[i], g_rp, g_tp);
    }
    out.pose.rotation = rotation_matrix_grad_to_quat(tape.pose_.rotation, g_rp);
    out.pose.translation = g_tp;
    return out;
  }
};

std::optional<Splat2D> project(const GaussianPrimitive& g, const Camera& cam, const Pose& pose,
                               const RenderSettings& settings) {
  cam.validate();
  return RenderBackward::project_cached(g, cam, pose, settings, nullptr);
}

Image rasterize(std::span<const Splat2D> splats, const Camera& cam, const Vec3& background,
                const RenderSettings& settings) {
  const Layout layout = prepare(splats, cam, settings);
  return rasterize_layout(layout, cam, background, settings);
}

std::vector<SplatGrad> rasterize_backward(std::span<const Splat2D> splats, const Camera& cam,
                                          const Vec3& background, const RenderSettings& settings,
                                          const Image& upstream) {
  const Layout layout = prepare(splats, cam, settings);
  return rasterize_layout_backward(layout, cam, background, settings, upstream);
}

Image render(std::span<const GaussianPrimitive> gaussians, const Camera& cam, const Pose& pose,
             const RenderSettings& settings, RenderTape* tape) {
  cam.validate();
  std::vector<Splat2D> splats;
  std::vector<RenderTape::ProjectionCache> caches;
  splats.reserve(gaussians.size());
  if (tape) caches.reserve(gaussians.size());
  RenderTape::ProjectionCache cache;
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    auto s = RenderBackward::project_cached(gaussians[i], cam, pose, settings, tape ? &cache : nullptr);
    if (!s) continue;
    splats.push_back(*s);
    if (tape) {
      cache.source = static_cast<int>(i);
      caches.push_back(cache);
    }
  }
  Image img = rasterize(splats, cam, settings.background, settings);
  if (tape) {
    tape->recorded_ = true;
    tape->camera_ = cam;
    tape->pose_ = pose;
    tape->settings_ = settings;
    tape->gaussians_.assign(gaussians.begin(), gaussians.end());
    tape->splats_ = std::move(splats);
    tape->cache_ = std::move(caches);
  }
  return img;
}

RenderGradients render_backward(const RenderTape& tape, const Image& upstream) {
  if (!tape.recorded()) throw std::logic_error("render_backward: no forward pass was recorded");
  return RenderBackward::run(tape, upstream);
}

}  // namespace blursplat
