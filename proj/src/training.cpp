#include "igs/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "igs/metrics.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace igs {

// ---- configuration ----

int TrainConfig::bootstrap_iters() const { return static_cast<int>(std::lround(bootstrap_ratio * total_iters)); }
int TrainConfig::level2_start() const { return static_cast<int>(std::lround(level2_ratio * total_iters)); }
int TrainConfig::level3_start() const { return static_cast<int>(std::lround(level3_ratio * total_iters)); }

void TrainConfig::validate() const {
  if (total_iters < 0) throw Error(ErrorKind::Usage, "iterations must be >= 0");
  if (!(bootstrap_ratio > 0.0 && bootstrap_ratio < level2_ratio && level2_ratio < level3_ratio && level3_ratio < 1.0)) {
    throw Error(ErrorKind::Usage, "schedule ratios must satisfy 0 < bootstrap < level2 < level3 < 1");
  }
  if (total_iters > 0 && !(bootstrap_iters() < level2_start() && level2_start() < level3_start() &&
                           level3_start() < total_iters)) {
    throw Error(ErrorKind::Usage, "too few iterations for distinct schedule points");
  }
  for (double l : lambda)
    if (!(l >= 0.0)) throw Error(ErrorKind::Usage, "lambda values must be >= 0");
  if (!(lambda_t >= 0.0)) throw Error(ErrorKind::Usage, "lambda_t must be >= 0");
  if (!(prev_level_lr_factor > 0.0)) throw Error(ErrorKind::Usage, "prev_level_lr_factor must be > 0");
  if (noise_interval < 1 || densify_interval < 1) throw Error(ErrorKind::Usage, "intervals must be >= 1");
  if (init_points < 1) throw Error(ErrorKind::Usage, "init_points must be >= 1");
  if (max_points < 1) throw Error(ErrorKind::Usage, "max_points must be >= 1");
  if (checkpoint_interval < 0) throw Error(ErrorKind::Usage, "checkpoint_interval must be >= 0");
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorKind::Usage, "config key '" + key + "': invalid number '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw Error(ErrorKind::Usage, "config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, item));
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  const auto num = [&] { return to_double(key, value); };
  const auto integer = [&] {
    const double d = num();
    if (d != std::floor(d)) throw Error(ErrorKind::Usage, "config key '" + key + "' must be an integer");
    return static_cast<long long>(d);
  };
  if (key == "total_iters" || key == "iters") total_iters = static_cast<int>(integer());
  else if (key == "bootstrap_ratio") bootstrap_ratio = num();
  else if (key == "level2_ratio") level2_ratio = num();
  else if (key == "level3_ratio") level3_ratio = num();
  else if (key == "lr_position") lr_position = num();
  else if (key == "lr_position_final") lr_position_final = num();
  else if (key == "lr_opacity") lr_opacity = num();
  else if (key == "lr_scale") lr_scale = num();
  else if (key == "lr_rotation") lr_rotation = num();
  else if (key == "lr_sh") lr_sh = num();
  else if (key == "lr_plane") lr_plane = num();
  else if (key == "lr_mlp") lr_mlp = num();
  else if (key == "prev_level_lr_factor") prev_level_lr_factor = num();
  else if (key == "lambda") {
    const auto l = to_list(key, value);
    if (l.size() != 3) throw Error(ErrorKind::Usage, "lambda needs three values");
    lambda = {l[0], l[1], l[2]};
  } else if (key == "lambda_t") lambda_t = num();
  else if (key == "noise_q") noise_q = num();
  else if (key == "noise_interval") noise_interval = static_cast<int>(integer());
  else if (key == "densify_from") densify_from = static_cast<int>(integer());
  else if (key == "densify_interval") densify_interval = static_cast<int>(integer());
  else if (key == "densify_grad_threshold") densify_grad_threshold = num();
  else if (key == "percent_dense") percent_dense = num();
  else if (key == "prune_opacity") prune_opacity = num();
  else if (key == "max_points") max_points = static_cast<std::size_t>(integer());
  else if (key == "init_points") init_points = static_cast<int>(integer());
  else if (key == "init_opacity") init_opacity = num();
  else if (key == "explicit_only") explicit_only = to_bool(key, value);
  else if (key == "checkpoint_interval") checkpoint_interval = static_cast<int>(integer());
  else if (key == "sh_degree") model.sh_degree = static_cast<int>(integer());
  else if (key == "resolution" || key == "finest_resolution") model.finest_resolution = static_cast<int>(integer());
  else if (key == "channels") model.channels = static_cast<int>(integer());
  else if (key == "contraction") model.contraction = to_bool(key, value);
  else if (key == "hidden") {
    model.hidden.clear();
    for (double h : to_list(key, value)) model.hidden.push_back(static_cast<int>(h));
  } else if (key == "plane_init_range") model.plane_init_range = num();
  else if (key == "background") {
    const auto b = to_list(key, value);
    if (b.size() != 3) throw Error(ErrorKind::Usage, "background needs three values");
    background = Vec3(b[0], b[1], b[2]);
  } else if (key == "seed") seed = static_cast<std::uint64_t>(integer());
  else throw Error(ErrorKind::Usage, "unknown config key '" + key + "'");
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Usage, "cannot open config " + path.string());
  TrainConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Usage, path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

int active_levels_at(const TrainConfig& config, int iteration) {
  if (iteration >= config.level3_start()) return 3;
  if (iteration >= config.level2_start()) return 2;
  return 1;
}

double level_lr_scale(const TrainConfig& config, int level, int active) {
  if (level >= active) return 0.0;
  return std::pow(config.prev_level_lr_factor, active - 1 - level);
}

LevelRegularizers evaluate_regularizers(const MultiLevelTriPlane& planes) {
  LevelRegularizers r;
  for (int l = 0; l < planes.active_levels; ++l) {
    r.sparsity[l] = sparsity_loss(planes.levels[l]);
    r.tv[l] = tv_loss(planes.levels[l]);
  }
  return r;
}

double total_loss(double render_loss, const LevelRegularizers& reg, int active_levels, const TrainConfig& config) {
  double total = render_loss;
  for (int l = 0; l < active_levels; ++l) {
    total += config.lambda[l] * (reg.sparsity[l] + config.lambda_t * reg.tv[l]);
  }
  return total;
}

std::array<std::array<double, 3>, kNumLevels> auto_noise_amplitude(const MultiLevelTriPlane& planes) {
  std::array<std::array<double, 3>, kNumLevels> q{};
  for (int l = 0; l < kNumLevels; ++l) {
    for (int p = 0; p < 3; ++p) {
      const auto& d = planes.levels[l].planes[p].data;
      if (d.empty()) continue;
      const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
      q[l][p] = 0.5 * (*hi - *lo) / 255.0;
    }
  }
  return q;
}

ImplicitPass implicit_pass(const IgsModel& model, const TrainView& view, const RenderSettings& settings,
                           const std::array<std::array<double, 3>, kNumLevels>& noise, std::uint64_t noise_seed) {
  ImplicitPass out;
  MultiLevelTriPlane scratch;
  implicit_pass(model, view, settings, noise, noise_seed, out, scratch);
  return out;
}

void implicit_pass(const IgsModel& model, const TrainView& view, const RenderSettings& settings,
                   const std::array<std::array<double, 3>, kNumLevels>& noise, std::uint64_t noise_seed,
                   ImplicitPass& out, MultiLevelTriPlane& noisy_scratch) {
  bool any_noise = false;
  for (const auto& level : noise)
    for (double q : level) any_noise |= q > 0.0;
  if (any_noise) add_quantization_noise(model.planes, noise, noise_seed, noisy_scratch);
  const MultiLevelTriPlane& planes = any_noise ? noisy_scratch : model.planes;

  std::vector<std::size_t> all(model.points.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const ImplicitForward fwd = implicit_forward(model, planes, std::move(all));
  const RenderResult r = render(fwd.gaussians, view.camera, settings);
  ImageBuffer dimg;
  out.render_loss = render_loss(r.image, view.image, &dimg);
  out.gaussian_grads = render_backward(r, fwd.gaussians, view.camera, settings, dimg);
  if (out.grads.positions.size() != model.points.size() || out.grads.planes.levels[0].planes[0].data.empty()) {
    out.grads = ImplicitGradients::zeros_like(model);
  } else {
    out.grads.set_zero();
  }
  implicit_backward(model, planes, fwd, out.gaussian_grads, out.grads);
  out.regularizers = evaluate_regularizers(model.planes);
}

VecX raw_from_attributes(const GaussianAttributes& attrs) {
  VecX raw(kShSlot + attrs.sh.size());
  raw[kOpacitySlot] = logit(std::clamp(attrs.opacity, 1e-7, 1.0 - 1e-7));
  for (int a = 0; a < 3; ++a) raw[kScaleSlot + a] = scale_exp_to_raw(attrs.scale_exp[a]);
  raw.segment<4>(kRotationSlot) = attrs.rotation;
  raw.tail(attrs.sh.size()) = attrs.sh;
  return raw;
}

std::vector<Vec3> random_points_in_box(const BoundingBox& bbox, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts(count);
  for (Vec3& p : pts) p = bbox.center + bbox.half_extent * Vec3(u(rng), u(rng), u(rng));
  return pts;
}

bool is_test_view(std::size_t index) { return index % 8 == 0; }

EvalSummary evaluate_gaussians(const std::vector<Gaussian>& gaussians, const std::vector<TrainView>& views,
                               const RenderSettings& settings) {
  EvalSummary s;
  for (const TrainView& v : views) {
    ImageBuffer img = render(gaussians, v.camera, settings).image;
    img.clamp01();
    s.psnr += psnr(img, v.image);
    s.ssim += ssim(img, v.image);
    ++s.views;
  }
  if (s.views) {
    s.psnr /= static_cast<double>(s.views);
    s.ssim /= static_cast<double>(s.views);
  }
  return s;
}

// ---- trainer ----

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;

struct Adam {
  std::vector<double> m, v;
  long t = 0;

  void step(double* p, const double* g, std::size_t n, double lr) {
    if (m.size() != n) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    const double step = lr / bc1;
    const double inv_bc2 = 1.0 / bc2;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      p[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + kAdamEps);
    }
  }

  // Per-point state of `width` values; src[i] is the old row of new row i, or -1 for fresh points.
  void remap(const std::vector<long>& src, std::size_t width) {
    if (m.empty()) return;
    std::vector<double> nm(src.size() * width, 0.0), nv(src.size() * width, 0.0);
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i] < 0) continue;
      std::copy_n(m.begin() + src[i] * width, width, nm.begin() + i * width);
      std::copy_n(v.begin() + src[i] * width, width, nv.begin() + i * width);
    }
    m = std::move(nm);
    v = std::move(nv);
  }
};

double mean_knn_distance(const std::vector<Vec3>& pts, std::size_t i, int k) {
  std::vector<double> d;
  d.reserve(pts.size());
  for (std::size_t j = 0; j < pts.size(); ++j)
    if (j != i) d.push_back((pts[j] - pts[i]).squaredNorm());
  const int kk = std::min<int>(k, static_cast<int>(d.size()));
  if (kk == 0) return 0.01;
  std::partial_sort(d.begin(), d.begin() + kk, d.end());
  double s = 0.0;
  for (int j = 0; j < kk; ++j) s += d[j];
  return std::sqrt(s / kk);
}

class Trainer {
 public:
  Trainer(const std::vector<TrainView>& views, const BoundingBox& bbox, std::vector<Vec3> points,
          const TrainConfig& config, std::ostream* csv, const std::optional<MatX>& initial_explicit,
          const CheckpointFn& checkpoint)
      : views_(views), bbox_(bbox), config_(config), csv_(csv), checkpoint_(checkpoint), rng_(config.seed) {
    config_.validate();
    if (views_.empty()) throw Error(ErrorKind::Data, "training needs at least one view");
    for (const TrainView& v : views_) {
      if (v.image.width != v.camera.width || v.image.height != v.camera.height) {
        throw Error(ErrorKind::Data, "training image does not match its camera");
      }
    }
    if (points.empty()) throw Error(ErrorKind::Data, "training needs an initial point cloud");
    settings_.background = config_.background;
    const int dim = raw_attribute_dim(config_.model.sh_degree);

    if (initial_explicit) {
      if (initial_explicit->cols() != static_cast<Eigen::Index>(points.size()) || initial_explicit->rows() != dim) {
        throw Error(ErrorKind::Data, "initial explicit attributes do not match the point cloud / SH degree");
      }
      explicit_ = *initial_explicit;
    } else {
      explicit_ = MatX::Zero(dim, static_cast<Eigen::Index>(points.size()));
      const bool exact = points.size() <= 5000;
      const double spacing_guess = 2.0 * bbox.half_extent / std::cbrt(static_cast<double>(points.size()));
      for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = exact ? mean_knn_distance(points, i, 3) : spacing_guess;
        const double s = std::clamp(std::log(std::max(d, 1e-12)), kScaleExpMin + 0.5, kScaleExpMax - 0.5);
        auto col = explicit_.col(static_cast<Eigen::Index>(i));
        col[kOpacitySlot] = logit(config_.init_opacity);
        col.segment<3>(kScaleSlot).setConstant(scale_exp_to_raw(s));
        col[kRotationSlot] = 1.0;
      }
    }
    std::vector<double> scales(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      scales[i] = activate(explicit_.col(static_cast<Eigen::Index>(i))).scale_exp.mean();
    }
    std::nth_element(scales.begin(), scales.begin() + scales.size() / 2, scales.end());
    model_ = IgsModel::create(config_.model, bbox_, std::move(points), config_.seed, scales[scales.size() / 2]);
    grad_accum_.assign(model_.points.size(), 0.0);
    grad_count_.assign(model_.points.size(), 0);
    noise_ = {};
  }

  TrainResult run() {
    TrainResult result;
    if (csv_) {
      *csv_ << "iter,render_loss,explicit_loss,total_loss,sparsity1,sparsity2,sparsity3,tv1,tv2,tv3,points,"
               "active_levels\n";
    }
    const int total = config_.total_iters;
    const int boot = config_.bootstrap_iters();
    const bool keep_explicit = config_.explicit_only;
    const double side = 2.0 * bbox_.half_extent;

    for (int it = 0; it < total; ++it) {
      const int active = config_.explicit_only ? 1 : active_levels_at(config_, it);
      model_.planes.active_levels = active;
      const bool explicit_phase = keep_explicit || it < boot;
      const bool implicit_phase = !config_.explicit_only;
      const TrainView& view = views_[next_view()];

      if (implicit_phase && (it % config_.noise_interval == 0 || it == config_.level2_start() ||
                             it == config_.level3_start())) {
        refresh_noise();
      }

      IterationLog log;
      log.iteration = it;
      log.active_levels = active;
      std::vector<Vec3> pos_grad(model_.points.size(), Vec3::Zero());
      MatX explicit_grad;

      if (explicit_phase) {
        std::vector<Gaussian> g = explicit_gaussians();
        const RenderResult r = render(g, view.camera, settings_);
        ImageBuffer dimg;
        log.explicit_loss = render_loss(r.image, view.image, &dimg);
        const auto gg = render_backward(r, g, view.camera, settings_, dimg);
        explicit_grad = MatX::Zero(explicit_.rows(), explicit_.cols());
        const double ndc = 0.5 * view.camera.width;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (!gg[i].visible) continue;
          const auto col = static_cast<Eigen::Index>(i);
          explicit_grad.col(col) =
              activate_backward(explicit_.col(col), gg[i].opacity, gg[i].scale_exp, gg[i].rotation, gg[i].sh);
          pos_grad[i] += gg[i].position;
          grad_accum_[i] += gg[i].mean2d.norm() * ndc;
          grad_count_[i] += 1;
        }
      }

      ImplicitPass& pass = pass_;
      if (implicit_phase) {
        implicit_pass(model_, view, settings_, noise_, config_.seed * 0x9E3779B97F4A7C15ULL + it + 1, pass,
                      noisy_);
        log.render_loss = pass.render_loss;
        log.regularizers = pass.regularizers;
        for (std::size_t i = 0; i < pos_grad.size(); ++i) pos_grad[i] += pass.grads.positions[i];
      } else {
        log.render_loss = log.explicit_loss;
      }
      log.total_loss = total_loss(log.render_loss, log.regularizers, implicit_phase ? active : 0, config_);
      check_finite(it, log, pos_grad, explicit_grad, pass);

      // Optimizer steps.
      const double frac = total > 1 ? static_cast<double>(it) / (total - 1) : 0.0;
      const double lr_pos = side * std::exp((1.0 - frac) * std::log(config_.lr_position) +
                                            frac * std::log(config_.lr_position_final));
      adam_pos_.step(model_.points.positions.data()->data(), pos_grad.data()->data(), 3 * pos_grad.size(), lr_pos);
      if (explicit_phase) step_explicit(explicit_grad);
      if (implicit_phase) step_implicit(pass.grads, active);

      log.points = model_.points.size();
      result.log.push_back(log);
      if (csv_) write_csv(log);

      if (explicit_phase && it + 1 < boot && it >= config_.densify_from && it % config_.densify_interval == 0) {
        densify_and_prune();
      }
      if (!keep_explicit && it + 1 == boot) {
        explicit_.resize(0, 0);
        adam_explicit_ = Adam{};
      }
      if (checkpoint_ && config_.checkpoint_interval > 0 && (it + 1) % config_.checkpoint_interval == 0) {
        checkpoint_(it + 1, model_);
      }
    }

    if (config_.explicit_only) result.explicit_gaussians = explicit_gaussians();
    model_.points.explicit_attrs.reset();
    if (!config_.explicit_only && total > 0) model_.planes.active_levels = active_levels_at(config_, total - 1);
    result.model = std::move(model_);
    return result;
  }

 private:
  std::size_t next_view() {
    if (order_pos_ >= order_.size()) {
      order_.resize(views_.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), rng_);
      order_pos_ = 0;
    }
    return order_[order_pos_++];
  }

  void refresh_noise() {
    if (config_.noise_q >= 0.0) {
      for (auto& l : noise_) l.fill(config_.noise_q);
    } else {
      noise_ = auto_noise_amplitude(model_.planes);
    }
  }

  std::vector<Gaussian> explicit_gaussians() const {
    std::vector<Gaussian> g(model_.points.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i].position = model_.points.positions[i];
      g[i].attrs = activate(explicit_.col(static_cast<Eigen::Index>(i)));
    }
    return g;
  }

  void step_explicit(const MatX& grad) {
    // Per-slot learning rates, applied by pre-scaling the update through one Adam state.
    const Eigen::Index d = explicit_.rows();
    const std::size_t n = static_cast<std::size_t>(explicit_.size());
    if (adam_explicit_.m.size() != n) {
      adam_explicit_.m.assign(n, 0.0);
      adam_explicit_.v.assign(n, 0.0);
    }
    ++adam_explicit_.t;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_explicit_.t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_explicit_.t));
    std::vector<double> lr(static_cast<std::size_t>(d));
    for (Eigen::Index k = 0; k < d; ++k) {
      lr[k] = k == kOpacitySlot ? config_.lr_opacity
              : k < kRotationSlot ? config_.lr_scale
              : k < kShSlot       ? config_.lr_rotation
              : k < kShSlot + 3   ? config_.lr_sh
                                  : config_.lr_sh / 20.0;
    }
    double* p = explicit_.data();
    const double* g = grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      double& m = adam_explicit_.m[i];
      double& v = adam_explicit_.v[i];
      m = kBeta1 * m + (1.0 - kBeta1) * g[i];
      v = kBeta2 * v + (1.0 - kBeta2) * g[i] * g[i];
      p[i] -= lr[i % d] / bc1 * m / (std::sqrt(v / bc2) + kAdamEps);
    }
  }

  void step_implicit(ImplicitGradients& grads, int active) {
    for (int l = 0; l < active; ++l) {
      const double scale = level_lr_scale(config_, l, active);
      const double lr_plane = config_.lr_plane * scale;
      TriPlaneLevel& level = model_.planes.levels[l];
      const double lambda = config_.lambda[l];
      if (lambda > 0.0 && config_.lambda_t > 0.0) tv_loss_grad(level, lambda * config_.lambda_t, grads.planes.levels[l]);
      for (int p = 0; p < 3; ++p) {
        std::vector<double>& data = level.planes[p].data;
        Adam& adam = adam_plane_[l][p];
        adam.step(data.data(), grads.planes.levels[l].planes[p].data.data(), data.size(), lr_plane);
        if (lambda > 0.0) soft_threshold(data, adam, lr_plane * lambda);
      }
      MlpDecoder& dec = model_.decoders[l];
      auto& adams = adam_mlp_[l];
      if (adams.size() != 2 * dec.layers().size()) adams.assign(2 * dec.layers().size(), Adam{});
      const double lr_mlp = config_.lr_mlp * scale;
      for (std::size_t k = 0; k < dec.layers().size(); ++k) {
        DenseLayer& layer = dec.layers()[k];
        adams[2 * k].step(layer.weight.data(), grads.decoders[l].weight[k].data(),
                          static_cast<std::size_t>(layer.weight.size()), lr_mlp);
        adams[2 * k + 1].step(layer.bias.data(), grads.decoders[l].bias[k].data(),
                              static_cast<std::size_t>(layer.bias.size()), lr_mlp);
      }
    }
  }

  // Proximal step for the L1 sparsity term in Adam's diagonal metric, so an
  // entry survives only where the render gradient outweighs lambda.
  static void soft_threshold(std::vector<double>& data, const Adam& adam, double tau) {
    const double inv_bc2 = 1.0 / (1.0 - std::pow(kBeta2, static_cast<double>(adam.t)));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double t = tau / (std::sqrt(adam.v[i] * inv_bc2) + kAdamEps);
      double& v = data[i];
      v = v > t ? v - t : (v < -t ? v + t : 0.0);
    }
  }

  void densify_and_prune() {
    const std::size_t n = model_.points.size();
    const double extent = 2.0 * bbox_.half_extent;
    std::vector<std::size_t> candidates;
    std::vector<double> avg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (grad_count_[i] > 0) avg[i] = grad_accum_[i] / grad_count_[i];
      if (avg[i] >= config_.densify_grad_threshold) candidates.push_back(i);
    }
    const std::size_t budget = config_.max_points > n ? config_.max_points - n : 0;
    if (candidates.size() > budget) {
      std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return avg[a] > avg[b]; });
      candidates.resize(budget);
      std::sort(candidates.begin(), candidates.end());
    }

    std::vector<Vec3> pos;
    std::vector<VecX> raw;
    std::vector<long> src;
    std::vector<char> removed(n, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i : candidates) {
      const VecX col = explicit_.col(static_cast<Eigen::Index>(i));
      const GaussianAttributes a = activate(col);
      const Vec3 s = a.scale_exp.array().exp();
      const Mat3 rot = quaternion_to_rotation(a.rotation);
      auto sample = [&]() -> Vec3 {
        const Vec3 z(normal(rng_), normal(rng_), normal(rng_));
        return model_.points.positions[i] + rot * s.cwiseProduct(z);
      };
      if (s.maxCoeff() <= config_.percent_dense * extent) {
        pos.push_back(sample());
        raw.push_back(col);
        src.push_back(-1);
      } else {
        VecX child = col;
        for (int k = 0; k < 3; ++k) {
          child[kScaleSlot + k] = scale_exp_to_raw(std::max(a.scale_exp[k] - std::log(1.6), kScaleExpMin + 1e-6));
        }
        for (int c = 0; c < 2; ++c) {
          pos.push_back(sample());
          raw.push_back(child);
          src.push_back(-1);
        }
        removed[i] = 1;
      }
    }

    std::vector<Vec3> new_pos;
    std::vector<VecX> new_raw;
    std::vector<long> new_src;
    auto keep = [&](const Vec3& p, const VecX& r, long s) {
      if (sigmoid(r[kOpacitySlot]) < config_.prune_opacity) return;
      new_pos.push_back(p);
      new_raw.push_back(r);
      new_src.push_back(s);
    };
    for (std::size_t i = 0; i < n; ++i) {
      if (!removed[i]) keep(model_.points.positions[i], explicit_.col(static_cast<Eigen::Index>(i)), static_cast<long>(i));
    }
    for (std::size_t k = 0; k < pos.size(); ++k) keep(pos[k], raw[k], src[k]);
    if (new_pos.empty()) throw Error(ErrorKind::Numerical, "densify/prune would remove every point");

    model_.points.positions = std::move(new_pos);
    explicit_.resize(explicit_.rows(), static_cast<Eigen::Index>(new_raw.size()));
    for (std::size_t i = 0; i < new_raw.size(); ++i) explicit_.col(static_cast<Eigen::Index>(i)) = new_raw[i];
    adam_pos_.remap(new_src, 3);
    adam_explicit_.remap(new_src, static_cast<std::size_t>(explicit_.rows()));
    grad_accum_.assign(model_.points.size(), 0.0);
    grad_count_.assign(model_.points.size(), 0);
  }

  void check_finite(int it, const IterationLog& log, const std::vector<Vec3>& pos_grad, const MatX& explicit_grad,
                    const ImplicitPass& pass) const {
    if (std::isfinite(log.total_loss) && std::isfinite(log.explicit_loss)) return;
    std::string groups;
    auto flag = [&](bool bad, const std::string& name) {
      if (bad) groups += (groups.empty() ? "" : ", ") + name;
    };
    bool pos_bad = false;
    for (const Vec3& g : pos_grad) pos_bad |= !g.allFinite();
    flag(pos_bad, "positions");
    flag(explicit_grad.size() > 0 && !explicit_grad.allFinite(), "explicit attributes");
    if (!pass.grads.planes.levels[0].planes[0].data.empty()) {
      for (int l = 0; l < kNumLevels; ++l) {
        bool bad = false;
        for (const FeaturePlane& p : pass.grads.planes.levels[l].planes)
          for (double v : p.data) bad |= !std::isfinite(v);
        flag(bad, "planes L" + std::to_string(l + 1));
        bool mbad = false;
        for (const MatX& w : pass.grads.decoders[l].weight) mbad |= !w.allFinite();
        flag(mbad, "mlp L" + std::to_string(l + 1));
      }
    }
    throw Error(ErrorKind::Numerical, "non-finite loss at iteration " + std::to_string(it) +
                                          "; non-finite gradients in: " + (groups.empty() ? "none" : groups));
  }

  void write_csv(const IterationLog& log) {
    auto& o = *csv_;
    o << log.iteration << ',' << log.render_loss << ',' << log.explicit_loss << ',' << log.total_loss;
    for (double s : log.regularizers.sparsity) o << ',' << s;
    for (double t : log.regularizers.tv) o << ',' << t;
    o << ',' << log.points << ',' << log.active_levels << '\n';
  }

  const std::vector<TrainView>& views_;
  BoundingBox bbox_;
  TrainConfig config_;
  std::ostream* csv_;
  CheckpointFn checkpoint_;
  std::mt19937_64 rng_;
  RenderSettings settings_;
  IgsModel model_;
  MatX explicit_;  // raw attributes, one column per point; empty after bootstrap
  Adam adam_pos_, adam_explicit_;
  std::array<std::array<Adam, 3>, kNumLevels> adam_plane_;
  std::array<std::vector<Adam>, kNumLevels> adam_mlp_;
  std::vector<double> grad_accum_;
  std::vector<int> grad_count_;
  std::array<std::array<double, 3>, kNumLevels> noise_{};
  ImplicitPass pass_;
  MultiLevelTriPlane noisy_;
  std::vector<std::size_t> order_;
  std::size_t order_pos_ = 0;
};

}  // namespace

TrainResult train(const std::vector<TrainView>& views, const BoundingBox& bbox, std::vector<Vec3> initial_points,
                  const TrainConfig& config, std::ostream* metrics_csv, const std::optional<MatX>& initial_explicit,
                  const CheckpointFn& checkpoint) {
#ifdef __GLIBC__
  // Per-iteration buffers are large; keep them in the heap instead of fresh mappings.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  Trainer t(views, bbox, std::move(initial_points), config, metrics_csv, initial_explicit, checkpoint);
  return t.run();
}

}  // namespace igs
