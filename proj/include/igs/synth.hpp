#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "igs/core.hpp"
#include "igs/scene.hpp"

namespace igs {

struct SynthConfig {
  int gaussians = 100;
  int views = 16;
  int resolution = 64;
  int sh_degree = 1;
  std::uint64_t seed = 0;
  Vec3 background = Vec3::Zero();
};

struct SyntheticScene {
  BoundingBox bbox;
  std::vector<Gaussian> gaussians;
  std::vector<SceneView> views;
};

/// Gaussians inside the inner half of a unit-half-extent bbox, viewed by a ring of
/// cameras looking at the centre. Images are rendered with this repository's renderer.
SyntheticScene make_synthetic_scene(const SynthConfig& config);

/// cameras.txt, images/NNNN.png, bbox.txt and the ground truth as gt.ply.
void write_scene(const std::filesystem::path& dir, const SyntheticScene& scene);

}  // namespace igs
