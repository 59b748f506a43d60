#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "igs/core.hpp"
#include "igs/decoder.hpp"
#include "igs/renderer.hpp"
#include "igs/triplane.hpp"

namespace igs {

struct ModelConfig {
  int sh_degree = 1;
  int finest_resolution = 256;
  int channels = kDefaultChannels;
  bool contraction = false;
  std::vector<int> hidden = {kHiddenWidth, kHiddenWidth};
  double plane_init_range = 1e-4;
};

/// Point cloud + multi-level tri-plane + one decoder per level.
struct IgsModel {
  BoundingBox bbox;
  bool contraction = false;
  int sh_degree = 1;
  PointCloud points;
  MultiLevelTriPlane planes;
  std::array<MlpDecoder, kNumLevels> decoders;

  /// Level-1 decoder emits the base attributes; the output layers of levels 2
  /// and 3 start at zero so they add nothing until trained.
  static IgsModel create(const ModelConfig& config, const BoundingBox& bbox, std::vector<Vec3> positions,
                         std::uint64_t seed, double initial_scale_exp = -5.0);

  int raw_dim() const { return raw_attribute_dim(sh_degree); }
  void validate() const;
};

/// Raw (pre-activation) attributes of the given points, one column per point.
MatX decode_raw(const IgsModel& model, const MultiLevelTriPlane& planes, std::span<const Vec3> positions);
/// Activated Gaussians for every point in the model (test-time path, noise free).
std::vector<Gaussian> decode_gaussians(const IgsModel& model);

/// Retained state of a differentiable implicit decode of a subset of points.
struct ImplicitForward {
  std::vector<std::size_t> indices;
  std::vector<Vec3> positions;
  FeatureQueryCache query;
  std::vector<MatX> features;
  std::array<MlpCache, kNumLevels> mlp;
  MatX raw;
  std::vector<Gaussian> gaussians;
};

struct ImplicitGradients {
  MultiLevelTriPlane planes;
  std::array<MlpGradients, kNumLevels> decoders;
  std::vector<Vec3> positions;  // full point count

  static ImplicitGradients zeros_like(const IgsModel& model);
  void set_zero();
};

/// `planes` is what features are read from (e.g. a noisy copy of model.planes
/// with the same layout); gradients flow to it as if it were model.planes.
ImplicitForward implicit_forward(const IgsModel& model, const MultiLevelTriPlane& planes,
                                 std::vector<std::size_t> indices);
void implicit_backward(const IgsModel& model, const MultiLevelTriPlane& planes, const ImplicitForward& fwd,
                       std::span<const GaussianGrad> gaussian_grads, ImplicitGradients& grads);

/// Test-time render of all points.
ImageBuffer render_model(const IgsModel& model, const Camera& camera, const RenderSettings& settings);

}  // namespace igs
