#include "igs/model.hpp"

#include <numeric>

namespace igs {

IgsModel IgsModel::create(const ModelConfig& config, const BoundingBox& bbox, std::vector<Vec3> positions,
                          std::uint64_t seed, double initial_scale_exp) {
  if (config.sh_degree < 0 || config.sh_degree > 3) throw Error(ErrorKind::Usage, "SH degree must be 0..3");
  IgsModel m;
  m.bbox = bbox;
  m.contraction = config.contraction;
  m.sh_degree = config.sh_degree;
  m.points.positions = std::move(positions);
  m.planes = MultiLevelTriPlane::create(config.finest_resolution, config.channels, seed, config.plane_init_range);
  const int in = 3 * config.channels;
  const int out = raw_attribute_dim(config.sh_degree);
  for (int l = 0; l < kNumLevels; ++l) {
    m.decoders[l] = MlpDecoder::create(in, config.hidden, out, seed + 1 + l, /*zero_output=*/l > 0);
  }
  VecX& b = m.decoders[0].layers().back().bias;
  b.setZero();
  b[kOpacitySlot] = logit(0.1);
  b.segment<3>(kScaleSlot).setConstant(scale_exp_to_raw(initial_scale_exp));
  b[kRotationSlot] = 1.0;
  return m;
}

void IgsModel::validate() const {
  points.validate();
  planes.validate();
  if (!(bbox.half_extent > 0.0)) throw Error(ErrorKind::Data, "model bbox must have positive extent");
  for (const MlpDecoder& d : decoders) {
    if (d.in_dim() != planes.feature_dim() || d.out_dim() != raw_dim()) {
      throw Error(ErrorKind::Data, "decoder dimensions do not match the tri-plane and SH degree");
    }
  }
}

MatX decode_raw(const IgsModel& model, const MultiLevelTriPlane& planes, std::span<const Vec3> positions) {
  std::vector<MatX> features;
  query_features_batch(planes, positions, model.bbox, model.contraction, features);
  MatX raw = model.decoders[0].forward(features[0]);
  for (int l = 1; l < planes.active_levels; ++l) raw += model.decoders[l].forward(features[l]);
  return raw;
}

std::vector<Gaussian> decode_gaussians(const IgsModel& model) {
  const MatX raw = decode_raw(model, model.planes, model.points.positions);
  std::vector<Gaussian> out(model.points.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].position = model.points.positions[i];
    out[i].attrs = activate(raw.col(static_cast<Eigen::Index>(i)));
  }
  return out;
}

ImplicitGradients ImplicitGradients::zeros_like(const IgsModel& model) {
  ImplicitGradients g;
  g.planes = model.planes.zeros_like();
  for (int l = 0; l < kNumLevels; ++l) g.decoders[l] = model.decoders[l].zero_gradients();
  g.positions.assign(model.points.size(), Vec3::Zero());
  return g;
}

void ImplicitGradients::set_zero() {
  for (TriPlaneLevel& level : planes.levels) {
    for (FeaturePlane& p : level.planes) std::fill(p.data.begin(), p.data.end(), 0.0);
  }
  for (MlpGradients& d : decoders) d.set_zero();
  std::fill(positions.begin(), positions.end(), Vec3::Zero());
}

ImplicitForward implicit_forward(const IgsModel& model, const MultiLevelTriPlane& planes,
                                 std::vector<std::size_t> indices) {
  ImplicitForward f;
  f.indices = std::move(indices);
  f.positions.reserve(f.indices.size());
  for (std::size_t i : f.indices) f.positions.push_back(model.points.positions[i]);
  query_features_batch(planes, f.positions, model.bbox, model.contraction, f.features, &f.query);
  for (int l = 0; l < planes.active_levels; ++l) {
    MatX out = model.decoders[l].forward(f.features[l], &f.mlp[l]);
    if (l == 0) {
      f.raw = std::move(out);
    } else {
      f.raw += out;
    }
  }
  f.gaussians.resize(f.indices.size());
  for (std::size_t i = 0; i < f.indices.size(); ++i) {
    f.gaussians[i].position = f.positions[i];
    f.gaussians[i].attrs = activate(f.raw.col(static_cast<Eigen::Index>(i)));
  }
  return f;
}

void implicit_backward(const IgsModel& model, const MultiLevelTriPlane& planes, const ImplicitForward& fwd,
                       std::span<const GaussianGrad> gaussian_grads, ImplicitGradients& grads) {
  const std::size_t n = fwd.indices.size();
  MatX draw(fwd.raw.rows(), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const GaussianGrad& g = gaussian_grads[i];
    const auto col = static_cast<Eigen::Index>(i);
    if (!g.visible) {
      draw.col(col).setZero();
      continue;
    }
    draw.col(col) = activate_backward(fwd.raw.col(col), g.opacity, g.scale_exp, g.rotation, g.sh);
  }
  std::vector<MatX> dfeat(planes.active_levels);
  for (int l = 0; l < planes.active_levels; ++l) {
    dfeat[l] = model.decoders[l].backward(fwd.mlp[l], draw, grads.decoders[l]);
  }
  std::vector<Vec3> dpos(n, Vec3::Zero());
  query_features_backward(planes, fwd.query, model.bbox, dfeat, grads.planes, dpos);
  for (std::size_t i = 0; i < n; ++i) {
    grads.positions[fwd.indices[i]] += dpos[i] + gaussian_grads[i].position;
  }
}

ImageBuffer render_model(const IgsModel& model, const Camera& camera, const RenderSettings& settings) {
  const std::vector<Gaussian> g = decode_gaussians(model);
  return render(g, camera, settings).image;
}

}  // namespace igs
