#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "igs/core.hpp"

namespace igs {

struct Splat2D {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  double depth = 1.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  std::size_t source = 0;  // index of the originating primitive, used for tie-breaking
};

struct SplatGrad {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Zero();
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

struct RenderSettings {
  Vec3 background = Vec3::Zero();
  double cov_floor = 0.3;        // px^2 added to the projected covariance diagonal
  double alpha_clamp = 0.99;
  double alpha_min = 1.0 / 255.0;
  double footprint_sigma = 3.0;
};

Mat3 quaternion_to_rotation(const Vec4& q);
Mat3 covariance3d(const GaussianAttributes& attrs);

/// EWA projection. Returns false (and leaves `out` untouched) when the point is
/// not in front of the near plane.
bool project_splat(const Vec3& mean, const Mat3& cov3d, const Camera& camera, double cov_floor, Splat2D& out);

int sh_degree_for(int coeff_count);
/// View-dependent colour, max(SH(dir) + 0.5, 0) per channel.
Vec3 evaluate_sh(const VecX& sh, const Vec3& view_dir);

ImageBuffer rasterize(std::span<const Splat2D> splats, const Camera& camera, const RenderSettings& settings);
std::vector<SplatGrad> rasterize_backward(std::span<const Splat2D> splats, const Camera& camera,
                                          const RenderSettings& settings, const ImageBuffer& image_grad);

/// Indices of points in front of the near plane whose projection lands inside
/// the image expanded by `margin` pixels.
std::vector<std::size_t> frustum_cull(std::span<const Vec3> positions, const Camera& camera, double margin);

/// Full differentiable forward state for a set of Gaussians.
struct RenderResult {
  ImageBuffer image;
  std::vector<Splat2D> splats;           // only the projected (non-culled) ones
  std::vector<std::size_t> splat_of;     // per Gaussian: index into splats or npos
  std::vector<Vec3> view_dirs;           // per splat
  std::vector<Vec3> raw_colors;          // per splat, SH + 0.5 before clamping
  std::vector<Mat3> cov3d;               // per splat
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

struct GaussianGrad {
  Vec3 position = Vec3::Zero();
  double opacity = 0.0;
  Vec3 scale_exp = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  VecX sh;
  Vec2 mean2d = Vec2::Zero();  // screen-space gradient, used by densification
  bool visible = false;
};

RenderResult render(std::span<const Gaussian> gaussians, const Camera& camera, const RenderSettings& settings);
std::vector<GaussianGrad> render_backward(const RenderResult& forward, std::span<const Gaussian> gaussians,
                                          const Camera& camera, const RenderSettings& settings,
                                          const ImageBuffer& image_grad);

}  // namespace igs
