#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "igs/core.hpp"

namespace igs {

/// One line of cameras.txt: rotation (9, row-major), translation (3), fx fy cx cy W H near far, optional image name.
struct SceneView {
  Camera camera;
  std::string image_name;
  ImageBuffer image;  // empty when the scene has no images
};

struct Scene {
  std::vector<SceneView> views;
  std::optional<BoundingBox> bbox;  // bbox.txt, when present
  std::vector<Vec3> points;         // points.ply positions, when present
};

std::vector<SceneView> read_camera_manifest(const std::filesystem::path& path);
void write_camera_manifest(const std::filesystem::path& path, const std::vector<SceneView>& views);

/// Reads cameras.txt, images/<name> when present, bbox.txt and points.ply.
Scene load_scene(const std::filesystem::path& dir, bool require_images = true);

ImageBuffer read_image(const std::filesystem::path& path);
/// 8-bit RGB PNG; values are clamped to [0, 1].
void write_image(const std::filesystem::path& path, const ImageBuffer& image);

BoundingBox read_bbox_file(const std::filesystem::path& path);
void write_bbox_file(const std::filesystem::path& path, const BoundingBox& bbox);

/// Gaussians in the public 3DGS PLY layout (x y z, normals, f_dc, f_rest, opacity logit,
/// log scales, rotation w x y z), binary little endian.
void write_gaussian_ply(const std::filesystem::path& path, const std::vector<Gaussian>& gaussians);
/// Accepts binary little endian or ASCII PLY with float or double properties. Only x y z are required;
/// missing attribute fields fall back to defaults. `sh_degree` is inferred from f_rest count.
std::vector<Gaussian> read_gaussian_ply(const std::filesystem::path& path, int* sh_degree = nullptr);
/// True when the vertex element carries opacity, scale and rotation, not just positions.
bool ply_has_gaussian_attributes(const std::filesystem::path& path);

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace igs
