#include "igs/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "igs/renderer.hpp"

namespace igs {

namespace {
constexpr double kShC0 = 0.28209479177387814;
constexpr double kRingRadius = 2.6;
}  // namespace

SyntheticScene make_synthetic_scene(const SynthConfig& config) {
  if (config.gaussians < 1) throw Error(ErrorKind::Usage, "synth needs at least one Gaussian");
  if (config.views < 2) throw Error(ErrorKind::Usage, "synth needs at least two views");
  if (config.resolution < 8) throw Error(ErrorKind::Usage, "synth resolution must be >= 8");
  if (config.sh_degree < 0 || config.sh_degree > 3) throw Error(ErrorKind::Usage, "sh degree must be 0..3");

  SyntheticScene scene;
  scene.bbox.center = Vec3::Zero();
  scene.bbox.half_extent = 1.0;

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int nsh = sh_coeff_count(config.sh_degree);
  for (int k = 0; k < config.gaussians; ++k) {
    Gaussian g;
    for (int a = 0; a < 3; ++a) g.position[a] = unit(rng) - 0.5;
    g.attrs.opacity = 0.5 + 0.45 * unit(rng);
    for (int a = 0; a < 3; ++a) g.attrs.scale_exp[a] = std::log(0.03 + 0.09 * unit(rng));
    Vec4 q(normal(rng), normal(rng), normal(rng), normal(rng));
    g.attrs.rotation = q / q.norm();
    g.attrs.sh = VecX::Zero(nsh);
    for (int c = 0; c < 3; ++c) g.attrs.sh[c] = (0.1 + 0.8 * unit(rng) - 0.5) / kShC0;
    scene.gaussians.push_back(g);
  }

  RenderSettings settings;
  settings.background = config.background;
  const double focal = 1.1 * config.resolution;
  for (int v = 0; v < config.views; ++v) {
    const double azimuth = 2.0 * std::numbers::pi * v / config.views;
    const double elevation = (v % 2 == 0 ? 0.35 : -0.2);
    const Vec3 eye = kRingRadius * Vec3(std::cos(elevation) * std::cos(azimuth), std::sin(elevation),
                                        std::cos(elevation) * std::sin(azimuth));
    SceneView view;
    view.camera = Camera::look_at(eye, Vec3::Zero(), Vec3(0, 1, 0), focal, config.resolution, config.resolution);
    char name[32];
    std::snprintf(name, sizeof name, "%04d.png", v);
    view.image_name = name;
    view.image = render(scene.gaussians, view.camera, settings).image;
    view.image.clamp01();
    scene.views.push_back(std::move(view));
  }
  return scene;
}

void write_scene(const std::filesystem::path& dir, const SyntheticScene& scene) {
  std::filesystem::create_directories(dir / "images");
  write_camera_manifest(dir / "cameras.txt", scene.views);
  for (const SceneView& v : scene.views) write_image(dir / "images" / v.image_name, v.image);
  write_bbox_file(dir / "bbox.txt", scene.bbox);
  write_gaussian_ply(dir / "gt.ply", scene.gaussians);
}

}  // namespace igs
