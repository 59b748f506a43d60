// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>

#include "igs/codec.hpp"
#include "igs/eval.hpp"
#include "igs/metrics.hpp"
#include "igs/model.hpp"
#include "igs/renderer.hpp"
#include "igs/synth.hpp"
#include "igs/training.hpp"
#include "test_util.hpp"

using namespace igs;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradTimeLimit = 60.0;
constexpr int kResidualPoints = 1000;
constexpr int kRegularizerPlanes = 1000;
constexpr double kHomogeneityRelTol = 1e-12;
constexpr double kFidelityGapDb = 1.5;
constexpr double kToyRuntimeLimit = 15.0 * 60.0;
constexpr double kActivationRiseLimit = 0.05;
constexpr int kSmoothWindow = 100;
constexpr double kPlaneReduction = 0.10;
constexpr double kRegularizedPsnrGapDb = 0.5;
constexpr int kCodecPoints = 100000;
constexpr int kClusterSeeds = 20;
constexpr int kClusterWinsRequired = 19;
constexpr double kRdPsnrSlackDb = 0.1;
constexpr double kLosslessPsnrDb = 45.0;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- shared toy-scene runs ----

struct ToyRun {
  TrainResult result;
  double seconds = 0.0;
  double test_psnr = 0.0;
};

struct Toy {
  SyntheticScene scene;
  std::vector<TrainView> train_views, test_views;
  std::optional<ToyRun> igs, baseline, unregularized;

  Toy() {
    SynthConfig sc;
    sc.gaussians = 100;
    sc.views = 16;
    sc.resolution = 64;
    sc.seed = 2024;
    scene = make_synthetic_scene(sc);
    for (std::size_t i = 0; i < scene.views.size(); ++i) {
      TrainView v{scene.views[i].camera, scene.views[i].image};
      (is_test_view(i) ? test_views : train_views).push_back(std::move(v));
    }
  }

  TrainConfig config() const {
    TrainConfig c;
    c.total_iters = 3000;
    c.seed = 7;
    return c;
  }

  ToyRun run(const TrainConfig& c) const {
    ToyRun r;
    const auto t0 = Clock::now();
    r.result = train(train_views, scene.bbox, random_points_in_box(scene.bbox, c.init_points, c.seed), c);
    r.seconds = seconds_since(t0);
    const auto g = c.explicit_only ? r.result.explicit_gaussians : decode_gaussians(r.result.model);
    r.test_psnr = evaluate_gaussians(g, test_views, RenderSettings{}).psnr;
    std::printf("  [toy] %s: %.1f s, %zu points, held-out PSNR %.3f dB\n",
                c.explicit_only ? "explicit baseline" : (c.lambda[0] == 0.0 ? "IGS, lambda = 0" : "IGS"),
                r.seconds, g.size(), r.test_psnr);
    std::fflush(stdout);
    return r;
  }

  const ToyRun& get_igs() {
    if (!igs) igs = run(config());
    return *igs;
  }
  const ToyRun& get_baseline() {
    if (!baseline) {
      TrainConfig c = config();
      c.explicit_only = true;
      baseline = run(c);
    }
    return *baseline;
  }
  const ToyRun& get_unregularized() {
    if (!unregularized) {
      TrainConfig c = config();
      c.lambda = {0.0, 0.0, 0.0};
      unregularized = run(c);
    }
    return *unregularized;
  }

  double held_out_psnr(const IgsModel& m) const {
    return evaluate_gaussians(decode_gaussians(m), test_views, RenderSettings{}).psnr;
  }
};

// ---- criteria ----

Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (bool contraction : {false, true}) {
    std::mt19937_64 rng(contraction ? 41 : 40);
    ModelConfig cfg;
    cfg.finest_resolution = 16;
    cfg.channels = 3;
    cfg.hidden = {12, 12};
    cfg.contraction = contraction;
    cfg.plane_init_range = 0.5;
    BoundingBox bbox;
    bbox.half_extent = contraction ? 0.3 : 0.6;
    std::uniform_real_distribution<double> u(-0.35, 0.35);
    std::vector<Vec3> pts;
    for (int i = 0; i < 10; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
    IgsModel m = IgsModel::create(cfg, bbox, pts, 9, -2.3);
    m.planes.active_levels = 3;
    std::normal_distribution<double> nd(0.0, 0.3);
    for (int l = 1; l < kNumLevels; ++l) {
      MatX& w = m.decoders[l].layers().back().weight;
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
    }
    const Camera cam = Camera::look_at(Vec3(0.4, 0.5, -2.6), Vec3::Zero(), Vec3(0, 1, 0), 30, 32, 32);
    RenderSettings rs;
    rs.background = Vec3(0.2, 0.1, 0.3);
    ImageBuffer gt(32, 32);
    std::uniform_real_distribution<double> unit(0, 1);
    for (double& v : gt.pixels) v = unit(rng);

    std::vector<std::size_t> all(m.points.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto loss = [&] {
      const ImplicitForward f = implicit_forward(m, m.planes, all);
      return render_loss(render(f.gaussians, cam, rs).image, gt);
    };
    const ImplicitForward f = implicit_forward(m, m.planes, all);
    const RenderResult r = render(f.gaussians, cam, rs);
    ImageBuffer dimg;
    render_loss(r.image, gt, &dimg);
    ImplicitGradients grads = ImplicitGradients::zeros_like(m);
    implicit_backward(m, m.planes, f, render_backward(r, f.gaussians, cam, rs, dimg), grads);

    // One group per parameter kind; each is compared norm-wise.
    std::map<std::string, std::pair<std::vector<double*>, std::vector<double>>> groups;
    for (std::size_t i = 0; i < m.points.size(); ++i)
      for (int a = 0; a < 3; ++a) {
        groups["positions"].first.push_back(&m.points.positions[i][a]);
        groups["positions"].second.push_back(grads.positions[i][a]);
      }
    std::uniform_int_distribution<std::size_t> pick(0, 1u << 30);
    for (int l = 0; l < kNumLevels; ++l) {
      auto& planes = groups["planes L" + std::to_string(l + 1)];
      for (int p = 0; p < 3; ++p) {
        std::vector<double>& data = m.planes.levels[l].planes[p].data;
        const std::vector<double>& gd = grads.planes.levels[l].planes[p].data;
        int taken = 0;
        for (std::size_t k = 0; k < data.size() && taken < 8; ++k) {
          if (gd[k] == 0.0) continue;
          planes.first.push_back(&data[k]);
          planes.second.push_back(gd[k]);
          ++taken;
        }
      }
      auto& mlp = groups["mlp L" + std::to_string(l + 1)];
      for (std::size_t k = 0; k < m.decoders[l].layers().size(); ++k) {
        MatX& w = m.decoders[l].layers()[k].weight;
        for (int s = 0; s < 8; ++s) {
          const auto i = static_cast<Eigen::Index>(pick(rng) % w.size());
          mlp.first.push_back(&w.data()[i]);
          mlp.second.push_back(grads.decoders[l].weight[k].data()[i]);
        }
        VecX& b = m.decoders[l].layers()[k].bias;
        const auto i = static_cast<Eigen::Index>(pick(rng) % b.size());
        mlp.first.push_back(&b[i]);
        mlp.second.push_back(grads.decoders[l].bias[k][i]);
      }
    }
    for (auto& [name, g] : groups) {
      const VecX fd = igs::testing::central_diff(loss, g.first, 1e-6);
      const VecX an = Eigen::Map<VecX>(g.second.data(), static_cast<Eigen::Index>(g.second.size()));
      const double e = an.norm() < 1e-9 && fd.norm() < 1e-9 ? 0.0 : igs::testing::rel_error(an, fd);
      worst = std::max(worst, e);
      checked += g.first.size();
    }
  }
  const double sec = seconds_since(t0);
  return {worst < kGradRelTol && sec < kGradTimeLimit,
          fmt("max group relative error %.2e over %zu parameters (tol %.0e), %.1f s", worst, checked, kGradRelTol, sec)};
}

Outcome residual_identity() {
  ModelConfig cfg;
  BoundingBox bbox;
  bbox.half_extent = 1.0;
  const std::vector<Vec3> pts = random_points_in_box(bbox, kResidualPoints, 17);
  IgsModel m = IgsModel::create(cfg, bbox, pts, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (auto& p : m.planes.levels[0].planes)
    for (double& v : p.data) v = nd(rng);
  for (int l = 1; l < kNumLevels; ++l) {
    for (auto& p : m.planes.levels[l].planes) std::fill(p.data.begin(), p.data.end(), 0.0);
    m.decoders[l].layers().back().weight.setZero();
    m.decoders[l].layers().back().bias.setZero();
  }
  m.planes.active_levels = 1;
  const MatX one = decode_raw(m, m.planes, m.points.positions);
  m.planes.active_levels = 3;
  const MatX three = decode_raw(m, m.planes, m.points.positions);
  const auto differing = (one.array() != three.array()).count();
  return {differing == 0, fmt("%ld of %ld raw attribute values differ on %d points", static_cast<long>(differing),
                              static_cast<long>(one.size()), kResidualPoints)};
}

Outcome regularizer_closed_forms() {
  int failures = 0;
  // 2x2: [[0,1],[0,1]] in plane 0 only.
  TriPlaneLevel a;
  for (FeaturePlane& p : a.planes) p = FeaturePlane(2, 2, 1);
  a.planes[0].at(1, 0, 0) = 1.0;
  a.planes[0].at(1, 1, 0) = 1.0;
  failures += tv_loss(a) != 2.0 / 4.0;
  failures += sparsity_loss(a) != 2.0;

  // 3x3, two channels: c0 = u, c1 = v^2; plane 1 is its negation, plane 2 is zero.
  TriPlaneLevel b;
  for (FeaturePlane& p : b.planes) p = FeaturePlane(3, 3, 2);
  for (int v = 0; v < 3; ++v)
    for (int u = 0; u < 3; ++u) {
      b.planes[0].at(u, v, 0) = u;
      b.planes[0].at(u, v, 1) = v * v;
      b.planes[1].at(u, v, 0) = -u;
      b.planes[1].at(u, v, 1) = -v * v;
    }
  // Per plane: horizontal |du| = 3 rows x 2 steps = 6, vertical |d(v^2)| = 3 cols x (1 + 3) = 12.
  failures += plane_tv(b.planes[0]) != 18.0;
  failures += tv_loss(b) != 36.0 / 9.0;
  // Per plane: sum u = 9, sum v^2 = 15.
  failures += sparsity_loss(b) != 48.0;

  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> val(-2.0, 2.0), scale(0.0, 10.0);
  std::uniform_int_distribution<int> res(1, 9), ch(1, 5);
  int prop_failures = 0;
  for (int i = 0; i < kRegularizerPlanes; ++i) {
    TriPlaneLevel level;
    const int r = res(rng), m = ch(rng);
    for (FeaturePlane& p : level.planes) {
      p = FeaturePlane(r, r, m);
      for (double& v : p.data) v = val(rng);
    }
    const double k = scale(rng);
    TriPlaneLevel scaled = level;
    for (FeaturePlane& p : scaled.planes)
      for (double& v : p.data) v *= k;
    const double tv = tv_loss(level), sp = sparsity_loss(level);
    const bool ok = tv >= 0.0 && sp >= 0.0 &&
                    std::abs(tv_loss(scaled) - k * tv) <= kHomogeneityRelTol * std::max(1.0, k * tv) &&
                    std::abs(sparsity_loss(scaled) - k * sp) <= kHomogeneityRelTol * std::max(1.0, k * sp);
    prop_failures += !ok;
  }
  return {failures == 0 && prop_failures == 0,
          fmt("%d hand-case mismatches; %d of %d random levels break homogeneity/non-negativity", failures,
              prop_failures, kRegularizerPlanes)};
}

Outcome toy_fidelity(Toy& toy) {
  const ToyRun& i = toy.get_igs();
  const ToyRun& b = toy.get_baseline();
  const double gap = b.test_psnr - i.test_psnr;
  const double sec = i.seconds + b.seconds;
  return {gap <= kFidelityGapDb && sec < kToyRuntimeLimit,
          fmt("IGS %.2f dB vs explicit %.2f dB (gap %.2f, limit %.1f); both runs %.0f s (limit %.0f)", i.test_psnr,
              b.test_psnr, gap, kFidelityGapDb, sec, kToyRuntimeLimit)};
}

Outcome activation_monotonicity(Toy& toy) {
  const ToyRun& run = toy.get_igs();
  const TrainConfig c = toy.config();
  const auto& log = run.result.log;
  auto mean = [&](int from, int to) {
    double s = 0.0;
    for (int k = from; k < to; ++k) s += log[k].render_loss;
    return s / (to - from);
  };
  bool ok = true;
  std::string detail;
  for (int boundary : {c.level2_start(), c.level3_start()}) {
    const double before = mean(boundary - kSmoothWindow, boundary);
    const double after = mean(boundary, boundary + kSmoothWindow);
    const double rise = after / before - 1.0;
    ok &= rise <= kActivationRiseLimit;
    detail += fmt("iter %d: %.5f -> %.5f (%+.1f%%); ", boundary, before, after, 100.0 * rise);
  }
  detail += fmt("limit +%.0f%%", 100.0 * kActivationRiseLimit);
  return {ok, detail};
}

Outcome regularization_rate(Toy& toy) {
  const ToyRun& reg = toy.get_igs();
  const ToyRun& noreg = toy.get_unregularized();
  CodecOptions opt;
  opt.quality = quality_preset("P3");
  const auto bytes_reg = write_container(reg.result.model, opt);
  const auto bytes_noreg = write_container(noreg.result.model, opt);
  const std::size_t plane_reg = inspect_container(bytes_reg).plane_bytes();
  const std::size_t plane_noreg = inspect_container(bytes_noreg).plane_bytes();
  const double psnr_reg = toy.held_out_psnr(read_container(bytes_reg));
  const double psnr_noreg = toy.held_out_psnr(read_container(bytes_noreg));
  const double reduction = 1.0 - static_cast<double>(plane_reg) / static_cast<double>(plane_noreg);
  const double gap = std::abs(psnr_reg - psnr_noreg);
  return {reduction >= kPlaneReduction && gap <= kRegularizedPsnrGapDb,
          fmt("P3 plane bytes %zu (regularized) vs %zu (lambda = 0): %.1f%% smaller (need %.0f%%); held-out PSNR "
              "%.2f vs %.2f dB (gap %.2f, limit %.1f)",
              plane_reg, plane_noreg, 100.0 * reduction, 100.0 * kPlaneReduction, psnr_reg, psnr_noreg, gap,
              kRegularizedPsnrGapDb)};
}

std::vector<Vec3> clustered(std::mt19937_64& rng, int n, int clusters) {
  std::uniform_real_distribution<double> centre(-0.8, 0.8);
  std::normal_distribution<double> spread(0.0, 0.03);
  std::vector<Vec3> centres;
  for (int c = 0; c < clusters; ++c) centres.emplace_back(centre(rng), centre(rng), centre(rng));
  std::uniform_int_distribution<int> pick(0, clusters - 1);
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) {
    pts.push_back((centres[pick(rng)] + Vec3(spread(rng), spread(rng), spread(rng))).cwiseMax(-1.0).cwiseMin(1.0));
  }
  return pts;
}

Outcome point_codec() {
  BoundingBox bbox;
  bbox.center = Vec3(0.3, -1.2, 2.0);
  bbox.half_extent = 1.7;
  const std::vector<Vec3> pts = random_points_in_box(bbox, kCodecPoints, 99);
  const PointPayload payload = encode_points(pts, bbox);
  const std::vector<Vec3> back = decode_points(payload, bbox, pts.size());
  const SortedPoints sorted = sort_points(pts, bbox);
  double worst = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const Vec3& src = payload.mode == PointMode::SortedPng ? pts[sorted.order[k]] : pts[k];
    worst = std::max(worst, (back[k] - src).cwiseAbs().maxCoeff());
  }
  const double bound = 2.0 * bbox.half_extent / 65535.0;

  BoundingBox unit;
  unit.half_extent = 1.0;
  int wins = 0;
  for (int seed = 0; seed < kClusterSeeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const auto c = clustered(rng, 10000, 24);
    wins += point_png(c, unit, true).size() < point_png(c, unit, false).size();
  }
  return {worst <= bound && wins >= kClusterWinsRequired,
          fmt("%s payload, max error %.3e (bound %.3e) on %d points; Morton PNG smaller in %d/%d clustered seeds "
              "(need %d)",
              payload.mode == PointMode::SortedPng ? "SORTED_PNG" : "RAW16F", worst, bound, kCodecPoints, wins,
              kClusterSeeds, kClusterWinsRequired)};
}

Outcome rd_monotonicity(Toy& toy) {
  const ToyRun& run = toy.get_igs();
  std::vector<RdEntry> entries;
  for (const char* p : {"P1", "P3", "P5", "P6"}) entries.push_back({p, quality_preset(p)});
  const auto points = rd_sweep(run.result.model, entries, toy.test_views, PlaneBackend::Qdef, RenderSettings{});
  bool ok = true;
  std::string detail;
  for (std::size_t k = 0; k < points.size(); ++k) {
    detail += fmt("%s %zu B %.2f dB; ", points[k].entry.label.c_str(), points[k].total_bytes, points[k].psnr);
    if (k > 0) {
      ok &= points[k].total_bytes > points[k - 1].total_bytes;
      ok &= points[k].psnr >= points[k - 1].psnr - kRdPsnrSlackDb;
    }
  }
  detail += fmt("slack %.1f dB", kRdPsnrSlackDb);
  return {ok, detail};
}

Outcome container_round_trip(Toy& toy) {
  const ToyRun& run = toy.get_igs();
  const IgsModel& m = run.result.model;
  const auto bytes = write_container(m, CodecOptions{});
  const IgsModel back = read_container(bytes);
  const auto g0 = decode_gaussians(m);
  const auto g1 = decode_gaussians(back);
  double worst = 1e9;
  for (const TrainView& v : toy.test_views) {
    ImageBuffer a = render(g0, v.camera, RenderSettings{}).image;
    ImageBuffer b = render(g1, v.camera, RenderSettings{}).image;
    a.clamp01();
    b.clamp01();
    worst = std::min(worst, psnr(b, a));
  }

  // Exhaustive single-byte corruption on a small container.
  ModelConfig cfg;
  cfg.finest_resolution = 16;
  cfg.channels = 3;
  cfg.hidden = {16, 16};
  cfg.plane_init_range = 0.3;
  BoundingBox bbox;
  bbox.half_extent = 0.55;
  IgsModel small = IgsModel::create(cfg, bbox, random_points_in_box(bbox, 60, 3), 4);
  small.planes.active_levels = 3;
  const auto sb = write_container(small, CodecOptions{});
  std::size_t undetected = 0, trials = 0;
  for (std::size_t i = 0; i < sb.size(); ++i) {
    for (std::uint8_t mask : {std::uint8_t{0x01}, std::uint8_t{0x80}, std::uint8_t{0xFF}}) {
      auto c = sb;
      c[i] ^= mask;
      ++trials;
      try {
        read_container(c);
        ++undetected;
      } catch (const ContainerException&) {
      }
    }
  }

  std::size_t morton_bad = 0;
  std::vector<bool> seen(1u << 24, false);
  for (std::uint32_t x = 0; x < 256; ++x)
    for (std::uint32_t y = 0; y < 256; ++y)
      for (std::uint32_t z = 0; z < 256; ++z) {
        const std::uint64_t code = morton_encode(x, y, z);
        const auto d = morton_decode(code);
        if (code >= (1u << 24) || seen[code] || d[0] != x || d[1] != y || d[2] != z) {
          ++morton_bad;
          continue;
        }
        seen[code] = true;
      }
  return {worst >= kLosslessPsnrDb && undetected == 0 && morton_bad == 0,
          fmt("q100 round-trip PSNR %.2f dB (min %.0f), %zu bytes; %zu/%zu corruptions undetected; %zu Morton "
              "8-bit failures",
              worst, kLosslessPsnrDb, bytes.size(), undetected, trials, morton_bad)};
}

Outcome noise_contract(Toy& toy) {
  const ToyRun& run = toy.get_igs();
  const IgsModel& m = run.result.model;
  const auto before = decode_gaussians(m);
  std::array<std::array<double, 3>, kNumLevels> q0{}, q1{};
  for (auto& l : q1) l.fill(0.1);
  const ImplicitPass a = implicit_pass(m, toy.train_views[0], RenderSettings{}, q0, 1);
  const ImplicitPass b = implicit_pass(m, toy.train_views[0], RenderSettings{}, q1, 1);
  bool reg_equal = true;
  for (int l = 0; l < kNumLevels; ++l) {
    reg_equal &= a.regularizers.sparsity[l] == b.regularizers.sparsity[l];
    reg_equal &= a.regularizers.tv[l] == b.regularizers.tv[l];
  }
  const auto after = decode_gaussians(m);
  bool decode_equal = before.size() == after.size();
  for (std::size_t i = 0; decode_equal && i < before.size(); ++i) {
    decode_equal = before[i].position == after[i].position && before[i].attrs.opacity == after[i].attrs.opacity &&
                   before[i].attrs.scale_exp == after[i].attrs.scale_exp &&
                   before[i].attrs.rotation == after[i].attrs.rotation && before[i].attrs.sh == after[i].attrs.sh;
  }
  const bool noise_active = a.render_loss != b.render_loss;
  return {reg_equal && decode_equal && noise_active,
          fmt("regularizers %s, test-time decode %s, training render loss %.6f (Q=0) vs %.6f (Q=0.1)",
              reg_equal ? "bit-identical" : "DIFFER", decode_equal ? "bit-identical" : "DIFFERS", a.render_loss,
              b.render_loss)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty())
    for (int i = 1; i <= 10; ++i) wanted.insert(i);

  Toy toy;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_check},
      {"residual identity", residual_identity},
      {"regularizer closed forms", regularizer_closed_forms},
      {"toy-scene fidelity", [&] { return toy_fidelity(toy); }},
      {"progressive-activation monotonicity", [&] { return activation_monotonicity(toy); }},
      {"spatial-regularization rate benefit", [&] { return regularization_rate(toy); }},
      {"Morton/point codec", point_codec},
      {"rate-distortion monotonicity", [&] { return rd_monotonicity(toy); }},
      {"container round trip", [&] { return container_round_trip(toy); }},
      {"quantization-adaptation contract", [&] { return noise_contract(toy); }},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
