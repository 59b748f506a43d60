#include "igs/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace igs {

void Diagnostics::reset() {
  uv_clamped = 0;
  degenerate_rotations = 0;
  singular_splats = 0;
  points_clamped = 0;
}

Diagnostics& diagnostics() {
  static Diagnostics d;
  return d;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

bool BoundingBox::contains(const Vec3& p) const {
  return ((p - center).cwiseAbs().array() <= half_extent).all();
}

BoundingBox make_cubic_bbox(std::span<const Vec3> points, double margin) {
  if (points.empty()) throw Error(ErrorKind::Data, "empty point set");
  if (!(margin >= 0.0)) throw Error(ErrorKind::Usage, "bbox margin must be >= 0");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Vec3& p : points) {
    if (!p.allFinite()) throw Error(ErrorKind::Data, "non-finite coordinate in point set");
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) throw Error(ErrorKind::Data, "point set has zero extent");
  BoundingBox box;
  box.center = 0.5 * (lo + hi);
  box.half_extent = 0.5 * (1.0 + margin) * extent;
  return box;
}

Vec3 normalize_point(const Vec3& p, const BoundingBox& bbox) {
  return (p - bbox.center) / (2.0 * bbox.half_extent);
}

Vec3 denormalize_point(const Vec3& n, const BoundingBox& bbox) {
  return n * (2.0 * bbox.half_extent) + bbox.center;
}

void PointCloud::validate() const {
  if (positions.empty()) throw Error(ErrorKind::Data, "point cloud is empty");
  for (const Vec3& p : positions) {
    if (!p.allFinite()) throw Error(ErrorKind::Data, "point cloud has a non-finite position");
  }
  if (explicit_attrs && static_cast<std::size_t>(explicit_attrs->rows()) != positions.size()) {
    throw Error(ErrorKind::Data, "explicit attribute rows do not match point count");
  }
}

void Camera::validate() const {
  if (!((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6)) {
    throw Error(ErrorKind::Data, "camera rotation is not orthonormal");
  }
  if (!(near_plane > 0.0 && near_plane < far_plane)) throw Error(ErrorKind::Data, "camera needs 0 < near < far");
  if (width < 1 || height < 1) throw Error(ErrorKind::Data, "camera resolution must be positive");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                       int height, double near_plane, double far_plane) {
  // Camera frame: x right, y down, z forward.
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitX());
  right.normalize();
  const Vec3 down = forward.cross(right);
  Camera cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.width = width;
  cam.height = height;
  cam.near_plane = near_plane;
  cam.far_plane = far_plane;
  return cam;
}

void ImageBuffer::clamp01() {
  for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
}

void GaussianAttributes::validate() const {
  if (!(opacity > 0.0 && opacity < 1.0)) throw Error(ErrorKind::Numerical, "opacity outside (0,1)");
  if ((scale_exp.array() < kScaleExpMin).any() || (scale_exp.array() > kScaleExpMax).any()) {
    throw Error(ErrorKind::Numerical, "scale exponent outside [-12,-2]");
  }
  if (std::abs(rotation.norm() - 1.0) > 1e-6) throw Error(ErrorKind::Numerical, "rotation is not a unit quaternion");
}

}  // namespace igs
