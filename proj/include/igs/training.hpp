#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "igs/core.hpp"
#include "igs/model.hpp"

namespace igs {

struct TrainConfig {
  int total_iters = 3000;
  // Schedule as fractions of total_iters.
  double bootstrap_ratio = 0.32;
  double level2_ratio = 0.40;
  double level3_ratio = 0.70;

  // Learning rates. Position LR is multiplied by the bbox side and decays
  // exponentially to lr_position_final over the run.
  double lr_position = 1.6e-4;
  double lr_position_final = 1.6e-6;
  double lr_opacity = 0.05;
  double lr_scale = 0.005;
  double lr_rotation = 0.001;
  double lr_sh = 0.0025;
  double lr_plane = 2e-2;
  double lr_mlp = 2e-3;
  double prev_level_lr_factor = 0.1;

  std::array<double, kNumLevels> lambda = {1e-9, 5e-9, 1e-8};
  double lambda_t = 1.0;

  // Quantization noise amplitude; negative selects half the 8-bit step of each
  // plane's range, refreshed every noise_interval iterations.
  double noise_q = -1.0;
  int noise_interval = 500;

  int densify_from = 100;
  int densify_interval = 100;
  double densify_grad_threshold = 2e-4;  // NDC units, as in 3DGS
  double percent_dense = 0.01;
  double prune_opacity = 0.005;
  std::size_t max_points = 20000;

  int init_points = 1000;
  double init_opacity = 0.1;

  // Baseline: optimise explicit attributes only, for all iterations.
  bool explicit_only = false;

  // 0 disables periodic checkpoints.
  int checkpoint_interval = 0;

  ModelConfig model;
  Vec3 background = Vec3::Zero();
  std::uint64_t seed = 0;

  int bootstrap_iters() const;
  int level2_start() const;
  int level3_start() const;
  void validate() const;

  /// key = value; '#' starts a comment. Unknown keys are an error.
  void set(const std::string& key, const std::string& value);
  static TrainConfig load(const std::filesystem::path& path);
};

/// Levels active at an iteration: 1, 2 or 3.
int active_levels_at(const TrainConfig& config, int iteration);
/// LR multiplier for `level` (0-based) when `active` levels are enabled.
double level_lr_scale(const TrainConfig& config, int level, int active);

struct LevelRegularizers {
  std::array<double, kNumLevels> sparsity{};
  std::array<double, kNumLevels> tv{};
};

/// Regularizers of the active levels, read from the noise-free planes.
LevelRegularizers evaluate_regularizers(const MultiLevelTriPlane& planes);
double total_loss(double render_loss, const LevelRegularizers& reg, int active_levels, const TrainConfig& config);

/// Per (level, plane) noise amplitude: half the 8-bit step of the plane's value range.
std::array<std::array<double, 3>, kNumLevels> auto_noise_amplitude(const MultiLevelTriPlane& planes);

struct TrainView {
  Camera camera;
  ImageBuffer image;
};

/// One implicit render pass with gradients, as run inside training.
struct ImplicitPass {
  double render_loss = 0.0;
  LevelRegularizers regularizers;
  ImplicitGradients grads;
  std::vector<GaussianGrad> gaussian_grads;
};
ImplicitPass implicit_pass(const IgsModel& model, const TrainView& view, const RenderSettings& settings,
                           const std::array<std::array<double, 3>, kNumLevels>& noise, std::uint64_t noise_seed);
/// Same, reusing the storage of `out` and of `noisy_scratch` across calls.
void implicit_pass(const IgsModel& model, const TrainView& view, const RenderSettings& settings,
                   const std::array<std::array<double, 3>, kNumLevels>& noise, std::uint64_t noise_seed,
                   ImplicitPass& out, MultiLevelTriPlane& noisy_scratch);

struct IterationLog {
  int iteration = 0;
  double render_loss = 0.0;    // implicit path (explicit path for the baseline)
  double explicit_loss = 0.0;  // bootstrap only
  double total_loss = 0.0;
  LevelRegularizers regularizers;
  std::size_t points = 0;
  int active_levels = 1;
};

struct TrainResult {
  IgsModel model;
  std::vector<Gaussian> explicit_gaussians;  // baseline output
  std::vector<IterationLog> log;
};

/// `initial_explicit` optionally gives raw attributes (one column per point) for
/// imported checkpoints; otherwise they are initialised from nearest-neighbour spacing.
using CheckpointFn = std::function<void(int iteration, const IgsModel& model)>;

TrainResult train(const std::vector<TrainView>& views, const BoundingBox& bbox, std::vector<Vec3> initial_points,
                  const TrainConfig& config, std::ostream* metrics_csv = nullptr,
                  const std::optional<MatX>& initial_explicit = std::nullopt, const CheckpointFn& checkpoint = {});

/// Raw attribute column that reproduces the given activated attributes.
VecX raw_from_attributes(const GaussianAttributes& attrs);

std::vector<Vec3> random_points_in_box(const BoundingBox& bbox, int count, std::uint64_t seed);

/// Held-out split: every 8th view (index % 8 == 0) is a test view.
bool is_test_view(std::size_t index);

struct EvalSummary {
  double psnr = 0.0;
  double ssim = 0.0;
  std::size_t views = 0;
};
EvalSummary evaluate_gaussians(const std::vector<Gaussian>& gaussians, const std::vector<TrainView>& views,
                               const RenderSettings& settings);

}  // namespace igs
