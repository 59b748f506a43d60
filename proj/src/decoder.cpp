#include "igs/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace igs {

void MlpGradients::set_zero() {
  for (MatX& w : weight) w.setZero();
  for (VecX& b : bias) b.setZero();
}

MlpDecoder::MlpDecoder(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw Error(ErrorKind::Usage, "decoder needs at least one layer");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (layers_[k].bias.size() != layers_[k].weight.rows()) throw Error(ErrorKind::Data, "decoder bias size mismatch");
    if (k > 0 && layers_[k].weight.cols() != layers_[k - 1].weight.rows()) {
      throw Error(ErrorKind::Data, "decoder layer dimensions do not chain");
    }
  }
}

MlpDecoder MlpDecoder::create(int in_dim, const std::vector<int>& hidden, int out_dim, std::uint64_t seed,
                              bool zero_output) {
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  int fan_in = in_dim;
  std::vector<int> dims = hidden;
  dims.push_back(out_dim);
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{MatX(dims[k], fan_in), VecX(dims[k])};
    const bool zero = zero_output && k + 1 == dims.size();
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = zero ? 0.0 : dist(rng);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = zero ? 0.0 : dist(rng);
    layers.push_back(std::move(layer));
    fan_in = dims[k];
  }
  return MlpDecoder(std::move(layers));
}

std::vector<int> MlpDecoder::hidden_dims() const {
  std::vector<int> dims;
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) dims.push_back(static_cast<int>(layers_[k].weight.rows()));
  return dims;
}

std::size_t MlpDecoder::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

MlpGradients MlpDecoder::zero_gradients() const {
  MlpGradients g;
  for (const DenseLayer& l : layers_) {
    g.weight.push_back(MatX::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(VecX::Zero(l.bias.size()));
  }
  return g;
}

MatX MlpDecoder::forward(const MatX& x, MlpCache* cache) const {
  if (x.rows() != in_dim()) throw Error(ErrorKind::Data, "decoder input has the wrong dimension");
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  MatX h = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const DenseLayer& l = layers_[k];
    MatX z = l.weight * h;
    z.colwise() += l.bias;
    if (cache) cache->inputs.push_back(std::move(h));
    if (k + 1 == layers_.size()) return z;
    if (cache) cache->pre.push_back(z);
    h = z.cwiseMax(0.0);
  }
  return h;
}

MatX MlpDecoder::backward(const MlpCache& cache, const MatX& upstream, MlpGradients& grads) const {
  MatX g = upstream;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const DenseLayer& l = layers_[k];
    if (k + 1 < layers_.size()) {
      g = g.cwiseProduct((cache.pre[k].array() > 0.0).cast<double>().matrix());
    }
    grads.weight[k].noalias() += g * cache.inputs[k].transpose();
    grads.bias[k] += g.rowwise().sum();
    g = l.weight.transpose() * g;
  }
  return g;
}

VecX decode_level(const MlpDecoder& mlp, const VecX& feature) {
  if (!feature.allFinite()) throw Error(ErrorKind::Numerical, "non-finite decoder input");
  return mlp.forward(feature);
}

VecX decoder_backward(const MlpDecoder& mlp, const VecX& feature, const VecX& upstream, MlpGradients& grads) {
  MlpCache cache;
  mlp.forward(feature, &cache);
  return mlp.backward(cache, upstream, grads);
}

VecX accumulate(std::span<const VecX> raw_per_level) {
  if (raw_per_level.empty()) throw Error(ErrorKind::Usage, "accumulate needs at least one level");
  VecX sum = raw_per_level.front();
  for (std::size_t l = 1; l < raw_per_level.size(); ++l) {
    if (raw_per_level[l].size() != sum.size()) throw Error(ErrorKind::Data, "raw attribute size mismatch");
    sum += raw_per_level[l];
  }
  return sum;
}

GaussianAttributes activate(const VecX& raw) {
  GaussianAttributes a;
  a.opacity = sigmoid(raw[kOpacitySlot]);
  // sigmoid saturates to exactly 0 or 1 in double for |x| > ~37.
  a.opacity = std::clamp(a.opacity, 1e-12, 1.0 - 1e-12);
  for (int i = 0; i < 3; ++i) {
    a.scale_exp[i] = kScaleExpMin + (kScaleExpMax - kScaleExpMin) * sigmoid(raw[kScaleSlot + i]);
  }
  const Vec4 q = raw.segment<4>(kRotationSlot);
  const double n = q.norm();
  if (n < 1e-8) {
    ++diagnostics().degenerate_rotations;
    a.rotation = Vec4(1, 0, 0, 0);
  } else {
    a.rotation = q / n;
  }
  a.sh = raw.tail(raw.size() - kShSlot);
  return a;
}

VecX activate_backward(const VecX& raw, double d_opacity, const Vec3& d_scale_exp, const Vec4& d_rotation,
                       const VecX& d_sh) {
  VecX d(raw.size());
  const double so = sigmoid(raw[kOpacitySlot]);
  d[kOpacitySlot] = d_opacity * so * (1.0 - so);
  for (int i = 0; i < 3; ++i) {
    const double s = sigmoid(raw[kScaleSlot + i]);
    d[kScaleSlot + i] = d_scale_exp[i] * (kScaleExpMax - kScaleExpMin) * s * (1.0 - s);
  }
  const Vec4 q = raw.segment<4>(kRotationSlot);
  const double n = q.norm();
  if (n < 1e-8) {
    d.segment<4>(kRotationSlot).setZero();
  } else {
    const Vec4 u = q / n;
    d.segment<4>(kRotationSlot) = (d_rotation - u * u.dot(d_rotation)) / n;
  }
  d.tail(raw.size() - kShSlot) = d_sh;
  return d;
}

double scale_exp_to_raw(double scale_exp) {
  const double t = (scale_exp - kScaleExpMin) / (kScaleExpMax - kScaleExpMin);
  return logit(std::clamp(t, 1e-6, 1.0 - 1e-6));
}

}  // namespace igs
