#include "igs/triplane.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace igs {

namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

MultiLevelTriPlane MultiLevelTriPlane::create(int finest_resolution, int channels, std::uint64_t seed,
                                              double init_range) {
  if (finest_resolution < 8 || finest_resolution % 4 != 0) {
    throw Error(ErrorKind::Usage, "finest plane resolution must be a multiple of 4 and >= 8");
  }
  if (channels < 1) throw Error(ErrorKind::Usage, "plane channel count must be positive");
  MultiLevelTriPlane m;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-init_range, init_range);
  for (int l = 0; l < kNumLevels; ++l) {
    const int r = finest_resolution >> (kNumLevels - 1 - l);
    for (FeaturePlane& p : m.levels[l].planes) {
      p = FeaturePlane(r, r, channels);
      if (init_range > 0.0) {
        for (double& v : p.data) v = dist(rng);
      }
    }
  }
  m.active_levels = 1;
  return m;
}

std::array<int, kNumLevels> MultiLevelTriPlane::resolutions() const {
  return {levels[0].resolution(), levels[1].resolution(), levels[2].resolution()};
}

MultiLevelTriPlane MultiLevelTriPlane::zeros_like() const {
  MultiLevelTriPlane z;
  z.active_levels = active_levels;
  for (int l = 0; l < kNumLevels; ++l) {
    for (int k = 0; k < 3; ++k) {
      const FeaturePlane& p = levels[l].planes[k];
      z.levels[l].planes[k] = FeaturePlane(p.width, p.height, p.channels);
    }
  }
  return z;
}

void MultiLevelTriPlane::validate() const {
  if (active_levels < 1 || active_levels > kNumLevels) throw Error(ErrorKind::Data, "active_levels must be 1..3");
  const int m = channels();
  for (int l = 0; l < kNumLevels; ++l) {
    const int r = levels[l].resolution();
    for (const FeaturePlane& p : levels[l].planes) {
      if (p.width != r || p.height != r || p.channels != m) {
        throw Error(ErrorKind::Data, "tri-plane level has mismatched planes");
      }
      if (p.data.size() != p.pixel_count() * m) throw Error(ErrorKind::Data, "feature plane storage size mismatch");
    }
    if (l > 0 && r != 2 * levels[l - 1].resolution()) {
      throw Error(ErrorKind::Data, "tri-plane resolutions must double per level");
    }
  }
}

Vec3 contract(const Vec3& x, bool enabled) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const double t = x[a];
    if (!enabled) {
      out[a] = std::clamp(t, -1.0, 1.0);
    } else if (std::abs(t) <= 0.5) {
      out[a] = t;
    } else {
      out[a] = sign(t) * (1.0 - 1.0 / (4.0 * std::abs(t)));
    }
  }
  return out;
}

Vec3 contract_derivative(const Vec3& x, bool enabled) {
  Vec3 d;
  for (int a = 0; a < 3; ++a) {
    const double t = x[a];
    if (!enabled) {
      d[a] = (std::abs(t) <= 1.0) ? 1.0 : 0.0;
    } else if (std::abs(t) <= 0.5) {
      d[a] = 1.0;
    } else {
      d[a] = 1.0 / (4.0 * t * t);
    }
  }
  return d;
}

std::array<int, 2> plane_dims(PlaneAxis axis) {
  switch (axis) {
    case PlaneAxis::XY: return {0, 1};
    case PlaneAxis::XZ: return {0, 2};
    case PlaneAxis::YZ: return {1, 2};
  }
  return {0, 1};
}

Vec2 project(const Vec3& x_contracted, PlaneAxis axis, int resolution) {
  const auto [a, b] = plane_dims(axis);
  const double s = 0.5 * (resolution - 1);
  return {(x_contracted[a] + 1.0) * s, (x_contracted[b] + 1.0) * s};
}

BilinearStencil make_stencil(const FeaturePlane& plane, const Vec2& uv) {
  BilinearStencil s;
  auto axis = [](double t, int n, int& i0, double& f, bool& clamped) {
    const double hi = n - 1;
    if (!(t >= 0.0) || t > hi) {
      clamped = true;
      t = std::isnan(t) ? 0.0 : std::clamp(t, 0.0, hi);
    }
    if (n == 1) {
      i0 = 0;
      f = 0.0;
      return;
    }
    i0 = std::min(static_cast<int>(std::floor(t)), n - 2);
    f = t - i0;
  };
  axis(uv.x(), plane.width, s.u0, s.fu, s.clamped_u);
  axis(uv.y(), plane.height, s.v0, s.fv, s.clamped_v);
  if (s.clamped_u || s.clamped_v) ++diagnostics().uv_clamped;
  return s;
}

void interp_into(const FeaturePlane& plane, const BilinearStencil& s, std::span<double> out) {
  const int m = plane.channels;
  const int u1 = std::min(s.u0 + 1, plane.width - 1);
  const int v1 = std::min(s.v0 + 1, plane.height - 1);
  const auto w = s.weights();
  const double* f00 = &plane.data[plane.index(s.u0, s.v0, 0)];
  const double* f10 = &plane.data[plane.index(u1, s.v0, 0)];
  const double* f01 = &plane.data[plane.index(s.u0, v1, 0)];
  const double* f11 = &plane.data[plane.index(u1, v1, 0)];
  for (int c = 0; c < m; ++c) out[c] = w[0] * f00[c] + w[1] * f10[c] + w[2] * f01[c] + w[3] * f11[c];
}

VecX interp(const FeaturePlane& plane, const Vec2& uv) {
  VecX out(plane.channels);
  interp_into(plane, make_stencil(plane, uv), std::span<double>(out.data(), out.size()));
  return out;
}

namespace {

Vec2 scatter_stencil(const FeaturePlane& plane, const BilinearStencil& s, const double* upstream,
                     std::span<double> grad) {
  const int m = plane.channels;
  const int u1 = std::min(s.u0 + 1, plane.width - 1);
  const int v1 = std::min(s.v0 + 1, plane.height - 1);
  const auto w = s.weights();
  const std::size_t i00 = plane.index(s.u0, s.v0, 0), i10 = plane.index(u1, s.v0, 0);
  const std::size_t i01 = plane.index(s.u0, v1, 0), i11 = plane.index(u1, v1, 0);
  double du = 0.0, dv = 0.0;
  for (int c = 0; c < m; ++c) {
    const double g = upstream[c];
    if (g == 0.0) continue;
    grad[i00 + c] += w[0] * g;
    grad[i10 + c] += w[1] * g;
    grad[i01 + c] += w[2] * g;
    grad[i11 + c] += w[3] * g;
    const double f00 = plane.data[i00 + c], f10 = plane.data[i10 + c];
    const double f01 = plane.data[i01 + c], f11 = plane.data[i11 + c];
    du += g * ((1 - s.fv) * (f10 - f00) + s.fv * (f11 - f01));
    dv += g * ((1 - s.fu) * (f01 - f00) + s.fu * (f11 - f10));
  }
  if (s.clamped_u || plane.width == 1) du = 0.0;
  if (s.clamped_v || plane.height == 1) dv = 0.0;
  return {du, dv};
}

}  // namespace

Vec2 interp_backward(const FeaturePlane& plane, const Vec2& uv, std::span<const double> upstream,
                     std::span<double> plane_grad) {
  return scatter_stencil(plane, make_stencil(plane, uv), upstream.data(), plane_grad);
}

std::vector<VecX> query_features(const MultiLevelTriPlane& mltp, const Vec3& p_world, const BoundingBox& bbox,
                                 bool contraction) {
  const Vec3 x = contract(normalize_point(p_world, bbox), contraction);
  const int m = mltp.channels();
  std::vector<VecX> out;
  out.reserve(mltp.active_levels);
  for (int l = 0; l < mltp.active_levels; ++l) {
    VecX f(3 * m);
    for (int k = 0; k < 3; ++k) {
      const FeaturePlane& plane = mltp.levels[l].planes[k];
      const BilinearStencil s = make_stencil(plane, project(x, kPlaneAxes[k], plane.width));
      interp_into(plane, s, std::span<double>(f.data() + k * m, m));
    }
    out.push_back(std::move(f));
  }
  return out;
}

void query_features_batch(const MultiLevelTriPlane& mltp, std::span<const Vec3> positions,
                          const BoundingBox& bbox, bool contraction, std::vector<MatX>& features,
                          FeatureQueryCache* cache) {
  const std::size_t n = positions.size();
  const int m = mltp.channels();
  const int levels = mltp.active_levels;
  features.resize(levels);
  for (int l = 0; l < levels; ++l) features[l].resize(3 * m, static_cast<Eigen::Index>(n));
  if (cache) {
    cache->levels = levels;
    cache->count = n;
    cache->contract_jacobian.resize(n);
    cache->stencils.resize(static_cast<std::size_t>(levels) * n * 3);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 nrm = normalize_point(positions[i], bbox);
    const Vec3 x = contract(nrm, contraction);
    if (cache) cache->contract_jacobian[i] = contract_derivative(nrm, contraction);
    for (int l = 0; l < levels; ++l) {
      double* col = features[l].col(static_cast<Eigen::Index>(i)).data();
      for (int k = 0; k < 3; ++k) {
        const FeaturePlane& plane = mltp.levels[l].planes[k];
        const BilinearStencil s = make_stencil(plane, project(x, kPlaneAxes[k], plane.width));
        interp_into(plane, s, std::span<double>(col + k * m, m));
        if (cache) cache->stencils[(l * n + i) * 3 + k] = s;
      }
    }
  }
}

void query_features_backward(const MultiLevelTriPlane& mltp, const FeatureQueryCache& cache,
                             const BoundingBox& bbox, const std::vector<MatX>& feature_grad,
                             MultiLevelTriPlane& plane_grad, std::span<Vec3> position_grad) {
  const std::size_t n = cache.count;
  const int m = mltp.channels();
  const double inv_side = 1.0 / (2.0 * bbox.half_extent);
  for (int l = 0; l < cache.levels; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = feature_grad[l].col(static_cast<Eigen::Index>(i)).data();
      Vec3 dx = Vec3::Zero();
      for (int k = 0; k < 3; ++k) {
        const FeaturePlane& plane = mltp.levels[l].planes[k];
        const BilinearStencil& s = cache.stencils[(l * n + i) * 3 + k];
        const Vec2 duv = scatter_stencil(plane, s, g + k * m, plane_grad.levels[l].planes[k].data);
        const auto [a, b] = plane_dims(kPlaneAxes[k]);
        const double scale = 0.5 * (plane.width - 1);
        dx[a] += duv.x() * scale;
        dx[b] += duv.y() * scale;
      }
      if (!position_grad.empty()) {
        position_grad[i] += dx.cwiseProduct(cache.contract_jacobian[i]) * inv_side;
      }
    }
  }
}

double plane_tv(const FeaturePlane& p) {
  double sum = 0.0;
  const int m = p.channels;
  for (int v = 0; v < p.height; ++v) {
    for (int u = 0; u < p.width; ++u) {
      for (int c = 0; c < m; ++c) {
        const double f = p.at(u, v, c);
        if (u + 1 < p.width) sum += std::abs(p.at(u + 1, v, c) - f);
        if (v + 1 < p.height) sum += std::abs(p.at(u, v + 1, c) - f);
      }
    }
  }
  return sum;
}

double tv_loss(const TriPlaneLevel& level) {
  double sum = 0.0;
  for (const FeaturePlane& p : level.planes) sum += plane_tv(p);
  return sum / static_cast<double>(level.planes[0].pixel_count());
}

void tv_loss_grad(const TriPlaneLevel& level, double scale, TriPlaneLevel& grad) {
  const double w = scale / static_cast<double>(level.planes[0].pixel_count());
  for (int k = 0; k < 3; ++k) {
    const FeaturePlane& p = level.planes[k];
    std::vector<double>& g = grad.planes[k].data;
    const int m = p.channels;
    for (int v = 0; v < p.height; ++v) {
      for (int u = 0; u < p.width; ++u) {
        for (int c = 0; c < m; ++c) {
          const std::size_t i = p.index(u, v, c);
          if (u + 1 < p.width) {
            const std::size_t j = p.index(u + 1, v, c);
            const double s = w * sign(p.data[j] - p.data[i]);
            g[j] += s;
            g[i] -= s;
          }
          if (v + 1 < p.height) {
            const std::size_t j = p.index(u, v + 1, c);
            const double s = w * sign(p.data[j] - p.data[i]);
            g[j] += s;
            g[i] -= s;
          }
        }
      }
    }
  }
}

double sparsity_loss(const TriPlaneLevel& level) {
  double sum = 0.0;
  for (const FeaturePlane& p : level.planes) {
    for (double v : p.data) sum += std::abs(v);
  }
  return sum;
}

void sparsity_loss_grad(const TriPlaneLevel& level, double scale, TriPlaneLevel& grad) {
  for (int k = 0; k < 3; ++k) {
    const std::vector<double>& d = level.planes[k].data;
    std::vector<double>& g = grad.planes[k].data;
    for (std::size_t i = 0; i < d.size(); ++i) g[i] += scale * sign(d[i]);
  }
}

MultiLevelTriPlane add_quantization_noise(const MultiLevelTriPlane& mltp, double q, std::uint64_t seed) {
  std::array<std::array<double, 3>, kNumLevels> per;
  for (auto& level : per) level.fill(q);
  return add_quantization_noise(mltp, per, seed);
}

MultiLevelTriPlane add_quantization_noise(const MultiLevelTriPlane& mltp,
                                          const std::array<std::array<double, 3>, kNumLevels>& q,
                                          std::uint64_t seed) {
  MultiLevelTriPlane noisy = mltp;
  add_quantization_noise(mltp, q, seed, noisy);
  return noisy;
}

namespace {
std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

void add_quantization_noise(const MultiLevelTriPlane& mltp, const std::array<std::array<double, 3>, kNumLevels>& q,
                            std::uint64_t seed, MultiLevelTriPlane& out) {
  std::uint64_t state = seed;
  out.active_levels = mltp.active_levels;
  for (int l = 0; l < kNumLevels; ++l) {
    for (int k = 0; k < 3; ++k) {
      const FeaturePlane& src = mltp.levels[l].planes[k];
      FeaturePlane& dst = out.levels[l].planes[k];
      if (l >= mltp.active_levels && dst.data.size() == src.data.size()) continue;
      dst = src;
      if (l >= mltp.active_levels) continue;
      const double amp = q[l][k];
      if (amp < 0.0) throw Error(ErrorKind::Usage, "quantization noise amplitude must be >= 0");
      if (amp == 0.0) continue;
      // 53 random bits mapped to [-amp, amp).
      const double scale = 2.0 * amp / 9007199254740992.0;
      for (double& v : dst.data) v += static_cast<double>(splitmix64(state) >> 11) * scale - amp;
    }
  }
}

}  // namespace igs
