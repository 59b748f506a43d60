#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "igs/core.hpp"

namespace igs {

constexpr int kHiddenWidth = 168;

struct DenseLayer {
  MatX weight;  // out x in
  VecX bias;
};

struct MlpGradients {
  std::vector<MatX> weight;
  std::vector<VecX> bias;

  void set_zero();
};

/// Intermediate activations of a batched forward pass (one column per sample).
struct MlpCache {
  std::vector<MatX> inputs;  // input to layer k (post-ReLU of the previous layer)
  std::vector<MatX> pre;     // pre-activation of hidden layers
};

/// Fully connected decoder: ReLU after every layer except the last.
class MlpDecoder {
 public:
  MlpDecoder() = default;
  explicit MlpDecoder(std::vector<DenseLayer> layers);

  /// Layer-wise uniform(+-1/sqrt(fan_in)) init. With `zero_output` the final
  /// layer starts at exactly zero so the decoder initially emits nothing.
  static MlpDecoder create(int in_dim, const std::vector<int>& hidden, int out_dim, std::uint64_t seed,
                           bool zero_output = false);

  int in_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  int out_dim() const { return static_cast<int>(layers_.back().weight.rows()); }
  std::vector<int> hidden_dims() const;
  std::size_t parameter_count() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  MatX forward(const MatX& x, MlpCache* cache = nullptr) const;
  /// Accumulates parameter gradients into `grads` and returns d loss / d x.
  MatX backward(const MlpCache& cache, const MatX& upstream, MlpGradients& grads) const;

  MlpGradients zero_gradients() const;

 private:
  std::vector<DenseLayer> layers_;
};

VecX decode_level(const MlpDecoder& mlp, const VecX& feature);

/// Gradients of upstream . decode_level(mlp, f) w.r.t. parameters (accumulated) and f (returned).
VecX decoder_backward(const MlpDecoder& mlp, const VecX& feature, const VecX& upstream, MlpGradients& grads);

/// Slot-wise sum of per-level raw attribute vectors.
VecX accumulate(std::span<const VecX> raw_per_level);

/// Raw attributes -> renderer-ready attributes.
GaussianAttributes activate(const VecX& raw);
/// d loss / d raw given d loss / d (opacity, scale_exp, rotation, sh).
VecX activate_backward(const VecX& raw, double d_opacity, const Vec3& d_scale_exp, const Vec4& d_rotation,
                       const VecX& d_sh);

/// Inverse of the scale activation, clamped into the open interval.
double scale_exp_to_raw(double scale_exp);

}  // namespace igs
