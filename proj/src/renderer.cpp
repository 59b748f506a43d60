#include "igs/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

namespace igs {

namespace {

constexpr double kShC0 = 0.28209479177387814;
constexpr double kShC1 = 0.4886025119029199;
constexpr double kShC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                             0.5462742152960396};
constexpr double kShC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                             -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

// Real SH basis values and their gradient w.r.t. the direction, up to degree 3.
void sh_basis(const Vec3& d, int degree, std::array<double, 16>& y, std::array<Vec3, 16>* dy) {
  const double x = d.x(), yy = d.y(), z = d.z();
  y[0] = kShC0;
  if (dy) (*dy)[0].setZero();
  if (degree < 1) return;
  y[1] = -kShC1 * yy;
  y[2] = kShC1 * z;
  y[3] = -kShC1 * x;
  if (dy) {
    (*dy)[1] = Vec3(0, -kShC1, 0);
    (*dy)[2] = Vec3(0, 0, kShC1);
    (*dy)[3] = Vec3(-kShC1, 0, 0);
  }
  if (degree < 2) return;
  const double xx = x * x, ys = yy * yy, zz = z * z;
  y[4] = kShC2[0] * x * yy;
  y[5] = kShC2[1] * yy * z;
  y[6] = kShC2[2] * (2 * zz - xx - ys);
  y[7] = kShC2[3] * x * z;
  y[8] = kShC2[4] * (xx - ys);
  if (dy) {
    (*dy)[4] = kShC2[0] * Vec3(yy, x, 0);
    (*dy)[5] = kShC2[1] * Vec3(0, z, yy);
    (*dy)[6] = kShC2[2] * Vec3(-2 * x, -2 * yy, 4 * z);
    (*dy)[7] = kShC2[3] * Vec3(z, 0, x);
    (*dy)[8] = kShC2[4] * Vec3(2 * x, -2 * yy, 0);
  }
  if (degree < 3) return;
  y[9] = kShC3[0] * yy * (3 * xx - ys);
  y[10] = kShC3[1] * x * yy * z;
  y[11] = kShC3[2] * yy * (4 * zz - xx - ys);
  y[12] = kShC3[3] * z * (2 * zz - 3 * xx - 3 * ys);
  y[13] = kShC3[4] * x * (4 * zz - xx - ys);
  y[14] = kShC3[5] * z * (xx - ys);
  y[15] = kShC3[6] * x * (xx - 3 * ys);
  if (dy) {
    (*dy)[9] = kShC3[0] * Vec3(6 * x * yy, 3 * xx - 3 * ys, 0);
    (*dy)[10] = kShC3[1] * Vec3(yy * z, x * z, x * yy);
    (*dy)[11] = kShC3[2] * Vec3(-2 * x * yy, 4 * zz - xx - 3 * ys, 8 * yy * z);
    (*dy)[12] = kShC3[3] * Vec3(-6 * x * z, -6 * yy * z, 6 * zz - 3 * xx - 3 * ys);
    (*dy)[13] = kShC3[4] * Vec3(4 * zz - 3 * xx - ys, -2 * x * yy, 8 * x * z);
    (*dy)[14] = kShC3[5] * Vec3(2 * x * z, -2 * yy * z, xx - ys);
    (*dy)[15] = kShC3[6] * Vec3(3 * xx - 3 * ys, -6 * x * yy, 0);
  }
}

// Gradient of loss w.r.t. the quaternion components given d loss / d R.
Vec4 rotation_backward(const Vec4& q, const Mat3& g) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 d;
  d[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  d[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
              w * g(2, 1) - 2 * x * g(2, 2));
  d[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
              z * g(2, 1) - 2 * y * g(2, 2));
  d[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
              x * g(2, 0) + y * g(2, 1));
  return d;
}

constexpr int kTile = 16;

struct PreparedSplat {
  Mat2 conic;  // inverse covariance
  double radius = 0.0;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel rectangle
};

// Depth-sorted splats bucketed into screen tiles.
struct RasterPlan {
  std::vector<std::size_t> order;
  std::vector<PreparedSplat> prepared;
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<std::size_t>> tiles;  // indices into `splats`, front to back
};

RasterPlan make_plan(std::span<const Splat2D> splats, const Camera& camera, const RenderSettings& settings) {
  RasterPlan plan;
  const std::size_t n = splats.size();
  plan.order.resize(n);
  std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
  std::stable_sort(plan.order.begin(), plan.order.end(), [&](std::size_t a, std::size_t b) {
    if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
    return splats[a].source < splats[b].source;
  });
  plan.prepared.resize(n);
  plan.tiles_x = (camera.width + kTile - 1) / kTile;
  plan.tiles_y = (camera.height + kTile - 1) / kTile;
  plan.tiles.assign(static_cast<std::size_t>(plan.tiles_x) * plan.tiles_y, {});
  for (std::size_t idx : plan.order) {
    const Splat2D& s = splats[idx];
    PreparedSplat& p = plan.prepared[idx];
    const double det = s.cov2d.determinant();
    if (!(det >= 1e-12) || !s.cov2d.allFinite() || !s.mean2d.allFinite()) {
      ++diagnostics().singular_splats;
      continue;
    }
    p.conic = s.cov2d.inverse();
    const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
    const double off = std::sqrt(std::max(0.0, mid * mid - det));
    p.radius = settings.footprint_sigma * std::sqrt(mid + off);
    // Pixel (x, y) has its centre at (x + 0.5, y + 0.5).
    p.x0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.x() - p.radius - 0.5)));
    p.x1 = std::min(camera.width - 1, static_cast<int>(std::floor(s.mean2d.x() + p.radius - 0.5)));
    p.y0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.y() - p.radius - 0.5)));
    p.y1 = std::min(camera.height - 1, static_cast<int>(std::floor(s.mean2d.y() + p.radius - 0.5)));
    if (p.x0 > p.x1 || p.y0 > p.y1) continue;
    for (int ty = p.y0 / kTile; ty <= p.y1 / kTile; ++ty) {
      for (int tx = p.x0 / kTile; tx <= p.x1 / kTile; ++tx) {
        plan.tiles[static_cast<std::size_t>(ty) * plan.tiles_x + tx].push_back(idx);
      }
    }
  }
  return plan;
}

struct Contribution {
  std::size_t splat;
  double alpha;
  double gauss;
  double transmittance;  // before this splat
  Vec2 d;
  bool clamped;
};

// Front-to-back walk of one pixel. Returns the final transmittance.
template <typename Visit>
double walk_pixel(std::span<const Splat2D> splats, const RasterPlan& plan, const RenderSettings& settings, int x,
                  int y, Visit&& visit) {
  const std::vector<std::size_t>& list =
      plan.tiles[static_cast<std::size_t>(y / kTile) * plan.tiles_x + x / kTile];
  const Vec2 pix(x + 0.5, y + 0.5);
  double T = 1.0;
  for (std::size_t idx : list) {
    const PreparedSplat& p = plan.prepared[idx];
    if (x < p.x0 || x > p.x1 || y < p.y0 || y > p.y1) continue;
    const Splat2D& s = splats[idx];
    const Vec2 d = pix - s.mean2d;
    const double power = -0.5 * d.dot(p.conic * d);
    if (power > 0.0) continue;
    const double g = std::exp(power);
    double a = s.opacity * g;
    bool clamped = false;
    if (a > settings.alpha_clamp) {
      a = settings.alpha_clamp;
      clamped = true;
    }
    if (a < settings.alpha_min) continue;
    visit(Contribution{idx, a, g, T, d, clamped});
    T *= (1.0 - a);
  }
  return T;
}

}  // namespace

Mat3 quaternion_to_rotation(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),    //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 covariance3d(const GaussianAttributes& attrs) {
  const Mat3 r = quaternion_to_rotation(attrs.rotation);
  const Vec3 s2 = (2.0 * attrs.scale_exp).array().exp();
  return r * s2.asDiagonal() * r.transpose();
}

bool project_splat(const Vec3& mean, const Mat3& cov3d, const Camera& camera, double cov_floor, Splat2D& out) {
  const Vec3 t = camera.to_camera(mean);
  if (!(t.z() > camera.near_plane)) return false;
  const double z = t.z(), iz = 1.0 / z;
  Eigen::Matrix<double, 2, 3> j;
  j << camera.fx * iz, 0, -camera.fx * t.x() * iz * iz,  //
      0, camera.fy * iz, -camera.fy * t.y() * iz * iz;
  const Eigen::Matrix<double, 2, 3> m = j * camera.rotation;
  out.mean2d = Vec2(camera.fx * t.x() * iz + camera.cx, camera.fy * t.y() * iz + camera.cy);
  out.cov2d = m * cov3d * m.transpose();
  out.cov2d(0, 0) += cov_floor;
  out.cov2d(1, 1) += cov_floor;
  out.depth = z;
  return true;
}

int sh_degree_for(int coeff_count) {
  for (int d = 0; d <= 3; ++d) {
    if (sh_coeff_count(d) == coeff_count) return d;
  }
  throw Error(ErrorKind::Data, "SH coefficient count does not match any degree 0..3");
}

Vec3 evaluate_sh(const VecX& sh, const Vec3& view_dir) {
  const int degree = sh_degree_for(static_cast<int>(sh.size()));
  std::array<double, 16> y{};
  sh_basis(view_dir, degree, y, nullptr);
  Vec3 c = Vec3::Constant(0.5);
  const int k_count = (degree + 1) * (degree + 1);
  for (int k = 0; k < k_count; ++k) c += y[k] * sh.segment<3>(3 * k);
  return c.cwiseMax(0.0);
}

ImageBuffer rasterize(std::span<const Splat2D> splats, const Camera& camera, const RenderSettings& settings) {
  ImageBuffer img(camera.width, camera.height);
  const RasterPlan plan = make_plan(splats, camera, settings);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      Vec3 c = Vec3::Zero();
      const double T = walk_pixel(splats, plan, settings, x, y, [&](const Contribution& k) {
        c += splats[k.splat].color * (k.alpha * k.transmittance);
      });
      c += settings.background * T;
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
    }
  }
  return img;
}

std::vector<SplatGrad> rasterize_backward(std::span<const Splat2D> splats, const Camera& camera,
                                          const RenderSettings& settings, const ImageBuffer& image_grad) {
  if (image_grad.width != camera.width || image_grad.height != camera.height) {
    throw Error(ErrorKind::Data, "image gradient does not match the camera resolution");
  }
  std::vector<SplatGrad> grads(splats.size());
  std::vector<Mat2> conic_grad(splats.size(), Mat2::Zero());
  const RasterPlan plan = make_plan(splats, camera, settings);
  std::vector<Contribution> list;
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const Vec3 g(image_grad.at(x, y, 0), image_grad.at(x, y, 1), image_grad.at(x, y, 2));
      if (g.isZero(0.0)) continue;
      list.clear();
      const double T_final =
          walk_pixel(splats, plan, settings, x, y, [&](const Contribution& k) { list.push_back(k); });
      double acc = settings.background.dot(g) * T_final;
      for (std::size_t i = list.size(); i-- > 0;) {
        const Contribution& k = list[i];
        const Splat2D& s = splats[k.splat];
        SplatGrad& sg = grads[k.splat];
        const double cg = s.color.dot(g);
        sg.color += g * (k.alpha * k.transmittance);
        const double d_alpha = k.transmittance * cg - acc / (1.0 - k.alpha);
        acc += cg * k.alpha * k.transmittance;
        if (k.clamped) continue;
        sg.opacity += d_alpha * k.gauss;
        const double d_power = d_alpha * s.opacity * k.gauss;
        const Mat2& conic = plan.prepared[k.splat].conic;
        sg.mean2d += d_power * (conic * k.d);
        conic_grad[k.splat] += (-0.5 * d_power) * (k.d * k.d.transpose());
      }
    }
  }
  for (std::size_t i = 0; i < splats.size(); ++i) {
    if (conic_grad[i].isZero(0.0)) continue;
    const Mat2& a = plan.prepared[i].conic;
    grads[i].cov2d = -a.transpose() * conic_grad[i] * a.transpose();
  }
  return grads;
}

std::vector<std::size_t> frustum_cull(std::span<const Vec3> positions, const Camera& camera, double margin) {
  std::vector<std::size_t> keep;
  keep.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Vec3 t = camera.to_camera(positions[i]);
    if (!(t.z() > camera.near_plane)) continue;
    const double u = camera.fx * t.x() / t.z() + camera.cx;
    const double v = camera.fy * t.y() / t.z() + camera.cy;
    if (u < -margin || u > camera.width + margin || v < -margin || v > camera.height + margin) continue;
    keep.push_back(i);
  }
  return keep;
}

RenderResult render(std::span<const Gaussian> gaussians, const Camera& camera, const RenderSettings& settings) {
  RenderResult r;
  r.splat_of.assign(gaussians.size(), RenderResult::npos);
  const Vec3 eye = camera.center();
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const Gaussian& g = gaussians[i];
    const Mat3 cov = covariance3d(g.attrs);
    Splat2D s;
    if (!project_splat(g.position, cov, camera, settings.cov_floor, s)) continue;
    const Vec3 dir = (g.position - eye).normalized();
    const int degree = sh_degree_for(static_cast<int>(g.attrs.sh.size()));
    std::array<double, 16> y{};
    sh_basis(dir, degree, y, nullptr);
    Vec3 c = Vec3::Constant(0.5);
    for (int k = 0; k < (degree + 1) * (degree + 1); ++k) c += y[k] * g.attrs.sh.segment<3>(3 * k);
    s.color = c.cwiseMax(0.0);
    s.opacity = g.attrs.opacity;
    s.source = i;
    r.splat_of[i] = r.splats.size();
    r.splats.push_back(s);
    r.view_dirs.push_back(dir);
    r.raw_colors.push_back(c);
    r.cov3d.push_back(cov);
  }
  r.image = rasterize(r.splats, camera, settings);
  return r;
}

std::vector<GaussianGrad> render_backward(const RenderResult& fwd, std::span<const Gaussian> gaussians,
                                          const Camera& camera, const RenderSettings& settings,
                                          const ImageBuffer& image_grad) {
  const std::vector<SplatGrad> sgrads = rasterize_backward(fwd.splats, camera, settings, image_grad);
  std::vector<GaussianGrad> out(gaussians.size());
  const Vec3 eye = camera.center();
  const Mat3& W = camera.rotation;
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const Gaussian& g = gaussians[i];
    GaussianGrad& gg = out[i];
    gg.sh = VecX::Zero(g.attrs.sh.size());
    const std::size_t si = fwd.splat_of[i];
    if (si == RenderResult::npos) continue;
    gg.visible = true;
    const SplatGrad& sg = sgrads[si];
    gg.opacity = sg.opacity;
    gg.mean2d = sg.mean2d;

    // Colour: SH coefficients and view direction.
    const int degree = sh_degree_for(static_cast<int>(g.attrs.sh.size()));
    std::array<double, 16> y{};
    std::array<Vec3, 16> dy{};
    const Vec3& dir = fwd.view_dirs[si];
    sh_basis(dir, degree, y, &dy);
    Vec3 dcol = sg.color;
    for (int ch = 0; ch < 3; ++ch) {
      if (fwd.raw_colors[si][ch] < 0.0) dcol[ch] = 0.0;
    }
    Vec3 ddir = Vec3::Zero();
    for (int k = 0; k < (degree + 1) * (degree + 1); ++k) {
      gg.sh.segment<3>(3 * k) = y[k] * dcol;
      ddir += dy[k] * dcol.dot(g.attrs.sh.segment<3>(3 * k));
    }
    const double dist = (g.position - eye).norm();
    gg.position += (ddir - dir * dir.dot(ddir)) / dist;

    // Projection.
    const Vec3 t = camera.to_camera(g.position);
    const double z = t.z(), iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
    Eigen::Matrix<double, 2, 3> j;
    j << camera.fx * iz, 0, -camera.fx * t.x() * iz2,  //
        0, camera.fy * iz, -camera.fy * t.y() * iz2;
    const Eigen::Matrix<double, 2, 3> m = j * W;
    const Mat2 gs = 0.5 * (sg.cov2d + sg.cov2d.transpose());
    const Mat3& cov = fwd.cov3d[si];
    const Eigen::Matrix<double, 2, 3> dm = 2.0 * gs * m * cov;
    const Mat3 dcov = m.transpose() * gs * m;
    const Eigen::Matrix<double, 2, 3> dj = dm * W.transpose();
    Vec3 dt = Vec3::Zero();
    dt.x() += sg.mean2d.x() * camera.fx * iz + dj(0, 2) * (-camera.fx * iz2);
    dt.y() += sg.mean2d.y() * camera.fy * iz + dj(1, 2) * (-camera.fy * iz2);
    dt.z() += -sg.mean2d.x() * camera.fx * t.x() * iz2 - sg.mean2d.y() * camera.fy * t.y() * iz2 +
              dj(0, 0) * (-camera.fx * iz2) + dj(0, 2) * (2.0 * camera.fx * t.x() * iz3) +
              dj(1, 1) * (-camera.fy * iz2) + dj(1, 2) * (2.0 * camera.fy * t.y() * iz3);
    gg.position += W.transpose() * dt;

    // Covariance: Sigma = R diag(e^{2s}) R^T.
    const Mat3 r = quaternion_to_rotation(g.attrs.rotation);
    const Vec3 s2 = (2.0 * g.attrs.scale_exp).array().exp();
    const Mat3 dsym = 0.5 * (dcov + dcov.transpose());
    const Mat3 dr = 2.0 * dsym * r * s2.asDiagonal();
    const Mat3 rtgr = r.transpose() * dsym * r;
    for (int a = 0; a < 3; ++a) gg.scale_exp[a] = rtgr(a, a) * 2.0 * s2[a];
    gg.rotation = rotation_backward(g.attrs.rotation, dr);
  }
  return out;
}

}  // namespace igs
