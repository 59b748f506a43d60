#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace igs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Exit-code classes used by the CLI: usage = 1, data = 2, numerical = 3.
enum class ErrorKind { Usage = 1, Data = 2, Numerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Process-wide counters for recoverable numerical events (clamped lookups,
/// degenerate quaternions, singular splats). Never reset implicitly.
struct Diagnostics {
  std::atomic<std::uint64_t> uv_clamped{0};
  std::atomic<std::uint64_t> degenerate_rotations{0};
  std::atomic<std::uint64_t> singular_splats{0};
  std::atomic<std::uint64_t> points_clamped{0};

  void reset();
};

Diagnostics& diagnostics();

/// Number of SH coefficients for an RGB signal of the given degree.
constexpr int sh_coeff_count(int degree) { return 3 * (degree + 1) * (degree + 1); }

/// Raw attribute slot layout: [opacity(1), scale(3), rotation(4), sh(N_SH)].
constexpr int kOpacitySlot = 0;
constexpr int kScaleSlot = 1;
constexpr int kRotationSlot = 4;
constexpr int kShSlot = 8;
constexpr int raw_attribute_dim(int sh_degree) { return kShSlot + sh_coeff_count(sh_degree); }

constexpr double kScaleExpMin = -12.0;
constexpr double kScaleExpMax = -2.0;

struct BoundingBox {
  Vec3 center = Vec3::Zero();
  double half_extent = 1.0;

  double side() const { return 2.0 * half_extent; }
  bool contains(const Vec3& p) const;
};

BoundingBox make_cubic_bbox(std::span<const Vec3> points, double margin = 0.05);

/// Maps the bbox onto [-0.5, 0.5]^3.
Vec3 normalize_point(const Vec3& p, const BoundingBox& bbox);
Vec3 denormalize_point(const Vec3& n, const BoundingBox& bbox);

struct PointCloud {
  std::vector<Vec3> positions;
  // Row i holds the raw (pre-activation) attributes of point i; present only
  // while bootstrapping.
  std::optional<MatX> explicit_attrs;

  std::size_t size() const { return positions.size(); }
  void validate() const;
};

struct Camera {
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  double near_plane = 0.01, far_plane = 100.0;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 center() const { return -rotation.transpose() * translation; }
  void validate() const;

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                        int height, double near_plane = 0.05, double far_plane = 100.0);
};

struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major, 3 channels interleaved

  ImageBuffer() = default;
  ImageBuffer(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::size_t size() const { return pixels.size(); }
  bool same_shape(const ImageBuffer& o) const { return width == o.width && height == o.height; }
  void clamp01();
};

struct GaussianAttributes {
  double opacity = 0.5;
  Vec3 scale_exp = Vec3::Constant(-7.0);
  Vec4 rotation = Vec4(1, 0, 0, 0);  // (w, x, y, z)
  VecX sh;

  void validate() const;
};

/// A renderable primitive: position plus activated attributes.
struct Gaussian {
  Vec3 position = Vec3::Zero();
  GaussianAttributes attrs;
};

double sigmoid(double x);
double logit(double p);

}  // namespace igs
