#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "igs/core.hpp"

namespace igs {

enum class PlaneAxis : int { XY = 0, XZ = 1, YZ = 2 };
constexpr std::array<PlaneAxis, 3> kPlaneAxes = {PlaneAxis::XY, PlaneAxis::XZ, PlaneAxis::YZ};
constexpr int kNumLevels = 3;
constexpr int kDefaultChannels = 5;

/// Vertex-centred feature grid; value (u, v, c) lives at data[(v * width + u) * channels + c].
struct FeaturePlane {
  int width = 0;
  int height = 0;
  int channels = kDefaultChannels;
  std::vector<double> data;
  bool learnable = true;

  FeaturePlane() = default;
  FeaturePlane(int w, int h, int m) : width(w), height(h), channels(m), data(static_cast<std::size_t>(w) * h * m, 0.0) {}

  std::size_t index(int u, int v, int c) const {
    return (static_cast<std::size_t>(v) * width + u) * channels + c;
  }
  double& at(int u, int v, int c) { return data[index(u, v, c)]; }
  double at(int u, int v, int c) const { return data[index(u, v, c)]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

struct TriPlaneLevel {
  std::array<FeaturePlane, 3> planes;

  int resolution() const { return planes[0].width; }
  int channels() const { return planes[0].channels; }
};

struct MultiLevelTriPlane {
  std::array<TriPlaneLevel, kNumLevels> levels;
  int active_levels = 1;

  /// Builds levels at r3/4, r3/2, r3 with values uniform in [-init_range, init_range].
  static MultiLevelTriPlane create(int finest_resolution, int channels, std::uint64_t seed,
                                   double init_range = 1e-4);

  int channels() const { return levels[0].channels(); }
  int feature_dim() const { return 3 * channels(); }
  std::array<int, kNumLevels> resolutions() const;
  MultiLevelTriPlane zeros_like() const;
  void validate() const;
};

/// Per-axis space contraction: identity on [-0.5, 0.5], sign(t)(1 - 1/(4|t|)) outside.
/// With `enabled == false` the input is clamped to [-1, 1].
Vec3 contract(const Vec3& x, bool enabled);
/// Diagonal of d contract / d x.
Vec3 contract_derivative(const Vec3& x, bool enabled);

/// Continuous grid coordinates in [0, r-1]^2 of a contracted point on one plane.
Vec2 project(const Vec3& x_contracted, PlaneAxis axis, int resolution);
/// Which 3D axes (by index) a plane keeps.
std::array<int, 2> plane_dims(PlaneAxis axis);

struct BilinearStencil {
  int u0 = 0, v0 = 0;
  double fu = 0.0, fv = 0.0;
  bool clamped_u = false, clamped_v = false;

  std::array<double, 4> weights() const {
    return {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
  }
};

BilinearStencil make_stencil(const FeaturePlane& plane, const Vec2& uv);

VecX interp(const FeaturePlane& plane, const Vec2& uv);
void interp_into(const FeaturePlane& plane, const BilinearStencil& s, std::span<double> out);

/// Accumulates upstream * weight onto the four stencil vertices of `plane_grad`
/// and returns d(upstream . feature)/d(uv).
Vec2 interp_backward(const FeaturePlane& plane, const Vec2& uv, std::span<const double> upstream,
                     std::span<double> plane_grad);

/// One 3m feature vector per active level.
std::vector<VecX> query_features(const MultiLevelTriPlane& mltp, const Vec3& p_world,
                                 const BoundingBox& bbox, bool contraction);

/// Batched lookup for training: features[l] is (3m x n). The cache keeps what
/// the backward pass needs.
struct FeatureQueryCache {
  int levels = 0;
  std::vector<Vec3> contract_jacobian;  // per point
  // stencils[(l * n + i) * 3 + plane]
  std::vector<BilinearStencil> stencils;
  std::size_t count = 0;
};

void query_features_batch(const MultiLevelTriPlane& mltp, std::span<const Vec3> positions,
                          const BoundingBox& bbox, bool contraction, std::vector<MatX>& features,
                          FeatureQueryCache* cache = nullptr);

/// Scatters feature gradients onto `plane_grad` (a zeros_like of `mltp`) and adds
/// world-space position gradients into `position_grad`.
void query_features_backward(const MultiLevelTriPlane& mltp, const FeatureQueryCache& cache,
                             const BoundingBox& bbox, const std::vector<MatX>& feature_grad,
                             MultiLevelTriPlane& plane_grad, std::span<Vec3> position_grad);

/// Anisotropic L1 total variation of one level, normalised by the pixel count of a plane.
double tv_loss(const TriPlaneLevel& level);
/// Unnormalised TV of a single plane (sum of |forward differences|).
double plane_tv(const FeaturePlane& plane);
/// Adds scale * d tv_loss / d data into `grad` (a subgradient; 0 at ties).
void tv_loss_grad(const TriPlaneLevel& level, double scale, TriPlaneLevel& grad);

double sparsity_loss(const TriPlaneLevel& level);
void sparsity_loss_grad(const TriPlaneLevel& level, double scale, TriPlaneLevel& grad);

/// Copy of `mltp` whose active planes carry i.i.d. uniform(-q, q) noise.
MultiLevelTriPlane add_quantization_noise(const MultiLevelTriPlane& mltp, double q, std::uint64_t seed);
/// Same, with one noise amplitude per (level, plane).
MultiLevelTriPlane add_quantization_noise(const MultiLevelTriPlane& mltp,
                                          const std::array<std::array<double, 3>, kNumLevels>& q,
                                          std::uint64_t seed);
/// Same, writing into `out` and reusing its storage.
void add_quantization_noise(const MultiLevelTriPlane& mltp, const std::array<std::array<double, 3>, kNumLevels>& q,
                            std::uint64_t seed, MultiLevelTriPlane& out);

}  // namespace igs
