// igs: command-line front end for synthesis, training, compression and evaluation.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "igs/codec.hpp"
#include "igs/eval.hpp"
#include "igs/model.hpp"
#include "igs/renderer.hpp"
#include "igs/scene.hpp"
#include "igs/synth.hpp"
#include "igs/training.hpp"

using namespace igs;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
};

struct CodecFlags {
  std::string quality;
  std::string preset;
  std::string backend = "qdef";

  CodecOptions options() const {
    if (!quality.empty() && !preset.empty()) throw Error(ErrorKind::Usage, "use either --quality or --preset");
    CodecOptions o;
    if (!quality.empty()) o.quality = parse_quality(quality);
    if (!preset.empty()) o.quality = quality_preset(preset);
    o.backend = parse_backend(backend);
    if (o.backend == PlaneBackend::Heic && !heic_available()) {
      throw Error(ErrorKind::Usage, "HEIC encoder (heif-enc) not found; use --backend qdef");
    }
    return o;
  }

  void add_to(CLI::App* app) {
    app->add_option("--quality", quality, "Per-level quality q1,q2,q3 in 0..100");
    app->add_option("--preset", preset, "Quality preset P0..P6");
    app->add_option("--backend", backend, "Plane codec: qdef | heic");
  }
};

IgsModel load_model(const fs::path& path) { return read_container(read_binary_file(path)); }

std::vector<Gaussian> load_gaussians(const fs::path& path) {
  if (path.extension() == ".ply") return read_gaussian_ply(path);
  return decode_gaussians(load_model(path));
}

std::vector<TrainView> to_train_views(const std::vector<SceneView>& views, bool test) {
  std::vector<TrainView> out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (is_test_view(i) == test) out.push_back({views[i].camera, views[i].image});
  }
  return out;
}

BoundingBox parse_bbox(const std::string& text) {
  std::stringstream ss(text);
  std::string item;
  std::vector<double> v;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Usage, "bad --bbox value '" + text + "'");
    }
  }
  if (v.size() != 4 || !(v[3] > 0.0)) throw Error(ErrorKind::Usage, "--bbox expects cx,cy,cz,half_extent");
  BoundingBox b;
  b.center = Vec3(v[0], v[1], v[2]);
  b.half_extent = v[3];
  return b;
}

BoundingBox camera_bbox(const std::vector<SceneView>& views, double margin) {
  std::vector<Vec3> centers;
  for (const SceneView& v : views) centers.push_back(v.camera.center());
  return make_cubic_bbox(centers, margin);
}

// Short explicit-only fit inside the camera cube; the box of the surviving splats.
BoundingBox warmup_bbox(const Scene& scene, const std::vector<TrainView>& views, const TrainConfig& cfg,
                        double margin) {
  TrainConfig w = cfg;
  w.explicit_only = true;
  w.total_iters = std::max(100, cfg.total_iters / 15);
  w.checkpoint_interval = 0;
  const BoundingBox start = camera_bbox(scene.views, 0.0);
  std::vector<Vec3> init = scene.points.empty() ? random_points_in_box(start, w.init_points, w.seed) : scene.points;
  const TrainResult r = train(views, start, std::move(init), w);
  std::vector<Vec3> kept;
  for (const Gaussian& g : r.explicit_gaussians) {
    if (g.attrs.opacity >= 0.05) kept.push_back(g.position);
  }
  if (kept.empty()) throw Error(ErrorKind::Numerical, "warm-up fit left no visible splats to bound");
  return make_cubic_bbox(kept, margin);
}

// scene (bbox.txt, else points.ply), points, cameras, warmup or explicit cx,cy,cz,h.
BoundingBox resolve_bbox(const std::string& mode, const Scene& scene, const std::vector<TrainView>& views,
                         const TrainConfig& cfg, double margin) {
  if (mode == "scene") {
    if (scene.bbox) return *scene.bbox;
    if (!scene.points.empty()) return make_cubic_bbox(scene.points, margin);
    throw Error(ErrorKind::Data, "scene has neither bbox.txt nor points.ply; pass --bbox cameras|warmup|cx,cy,cz,h");
  }
  if (mode == "points") {
    if (scene.points.empty()) throw Error(ErrorKind::Data, "--bbox points needs points.ply in the scene");
    return make_cubic_bbox(scene.points, margin);
  }
  if (mode == "cameras") return camera_bbox(scene.views, margin);
  if (mode == "warmup") return warmup_bbox(scene, views, cfg, margin);
  return parse_bbox(mode);
}

void write_or_print(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out);
  f << text;
  if (!f) throw Error(ErrorKind::Data, "cannot write " + out);
}

void print_info(const ContainerInfo& info, std::ostream& o) {
  const double total = static_cast<double>(info.total_bytes());
  char line[160];
  o << "version " << info.version << ", " << info.point_count << " points ("
    << (info.point_mode == PointMode::SortedPng ? "SORTED_PNG" : "RAW16F") << "), backend "
    << backend_name(info.backend) << ", quality " << info.quality[0] << "," << info.quality[1] << ","
    << info.quality[2] << "\n";
  o << "planes " << info.resolutions[0] << "/" << info.resolutions[1] << "/" << info.resolutions[2] << " x "
    << info.channels << " channels, SH degree " << info.sh_degree << ", contraction "
    << (info.contraction ? "on" : "off") << ", active levels " << info.active_levels << "\n";
  std::snprintf(line, sizeof line, "%-8s %12s %8s\n", "section", "bytes", "share");
  o << line;
  std::snprintf(line, sizeof line, "%-8s %12zu %7.2f%%\n", "table", info.table_bytes, 100.0 * info.table_bytes / total);
  o << line;
  for (const SectionInfo& s : info.sections) {
    std::snprintf(line, sizeof line, "%-8s %12u %7.2f%%\n", s.tag.c_str(), s.length, 100.0 * s.length / total);
    o << line;
  }
  std::snprintf(line, sizeof line, "%-8s %12zu %7.2f%%\n", "total", info.total_bytes(), 100.0);
  o << line;
}

std::vector<RdEntry> parse_rd_entries(const std::vector<std::string>& items) {
  if (items.size() == 1 && items[0] == "presets") return preset_rd_entries();
  if (items.size() == 1 && items[0] == "none") return {};
  std::vector<RdEntry> out;
  for (const std::string& item : items) {
    if (item[0] == 'P' || item[0] == 'p') {
      out.push_back({item, quality_preset(item)});
    } else {
      const QualityTuple q = parse_quality(item);
      out.push_back({std::to_string(q[0]) + "/" + std::to_string(q[1]) + "/" + std::to_string(q[2]), q});
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit Gaussian splatting: train, compress and evaluate"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed", common.seed, "Random seed")->each([&](const std::string&) { common.seed_set = true; });
  app.add_flag("--deterministic", common.deterministic,
               "Require bitwise-reproducible results (always the case: all reductions run sequentially)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  SynthConfig sc;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Scene directory")->required();
  synth->add_option("--gaussians,-K", sc.gaussians, "Number of ground-truth Gaussians");
  synth->add_option("--views,-V", sc.views, "Number of cameras");
  synth->add_option("--resolution", sc.resolution, "Image width and height");
  synth->add_option("--sh-degree", sc.sh_degree, "SH degree of the ground truth");

  // train
  auto* trainc = app.add_subcommand("train", "Train a model on a scene");
  std::string scene_dir, train_out, config_path, metrics_path, bbox_mode = "scene", checkpoint_dir;
  int iters = -1, resolution = -1;
  double bbox_margin = 0.05;
  bool explicit_only = false, all_views = false;
  CodecFlags train_codec;
  trainc->add_option("--scene", scene_dir, "Scene directory")->required();
  trainc->add_option("--out", train_out, "Output container (.igs), or .ply with --explicit-only")->required();
  trainc->add_option("--config", config_path, "key = value configuration file");
  trainc->add_option("--iters", iters, "Total iterations");
  trainc->add_option("--resolution", resolution, "Finest feature-plane resolution");
  trainc->add_option("--metrics", metrics_path, "Per-iteration CSV log");
  trainc->add_option("--bbox", bbox_mode, "scene | points | cameras | warmup | cx,cy,cz,half_extent");
  trainc->add_option("--bbox-margin", bbox_margin, "Relative margin when the bbox is derived from points");
  trainc->add_option("--checkpoint-dir", checkpoint_dir, "Where periodic checkpoints are written");
  trainc->add_flag("--explicit-only", explicit_only, "Train the explicit 3DGS baseline instead");
  trainc->add_flag("--all-views", all_views, "Train on every view instead of holding out every 8th");
  train_codec.add_to(trainc);

  // compress
  auto* compress = app.add_subcommand("compress", "Re-encode a container at another quality");
  std::string compress_in, compress_out;
  CodecFlags compress_codec;
  compress->add_option("--model", compress_in, "Input container")->required();
  compress->add_option("--out", compress_out, "Output container")->required();
  compress_codec.add_to(compress);

  // decompress
  auto* decompress = app.add_subcommand("decompress", "Decode a container to a 3DGS PLY");
  std::string decompress_in, decompress_out;
  decompress->add_option("--model", decompress_in, "Input container")->required();
  decompress->add_option("--out", decompress_out, "Output PLY")->required();

  // render
  auto* renderc = app.add_subcommand("render", "Render a model along a camera path");
  std::string render_model_path, render_cameras, render_scene, render_out;
  Vec3 background = Vec3::Zero();
  std::vector<double> bg;
  renderc->add_option("--model", render_model_path, "Container (.igs) or Gaussian PLY")->required();
  renderc->add_option("--cameras", render_cameras, "Camera manifest");
  renderc->add_option("--scene", render_scene, "Use the scene's cameras.txt");
  renderc->add_option("--out", render_out, "Output directory")->required();
  renderc->add_option("--background", bg, "Background r g b")->expected(3);

  // eval
  auto* evalc = app.add_subcommand("eval", "PSNR / SSIM between rendered and ground-truth images");
  std::string eval_rendered, eval_gt, eval_out;
  evalc->add_option("--rendered", eval_rendered, "Directory of rendered PNGs")->required();
  evalc->add_option("--gt", eval_gt, "Directory of ground-truth PNGs")->required();
  evalc->add_option("--out", eval_out, "CSV output (default stdout)");

  // info
  auto* info = app.add_subcommand("info", "Container layout and size breakdown");
  std::string info_in;
  info->add_option("--model", info_in, "Container")->required();

  // import-ply
  auto* import = app.add_subcommand("import-ply", "Bootstrap a scene from a 3DGS checkpoint PLY");
  std::string import_ply, import_scene;
  double import_margin = 0.05;
  import->add_option("--ply", import_ply, "3DGS PLY")->required();
  import->add_option("--scene", import_scene, "Scene directory (cameras.txt and images/ go alongside)")->required();
  import->add_option("--bbox-margin", import_margin, "Relative bbox margin");

  // rd-sweep
  auto* rd = app.add_subcommand("rd-sweep", "Rate-distortion sweep over quality tuples");
  std::string rd_model, rd_scene, rd_out, rd_backend = "qdef";
  std::vector<std::string> rd_tuples = {"presets"};
  bool rd_all_views = false;
  rd->add_option("--model", rd_model, "Container")->required();
  rd->add_option("--scene", rd_scene, "Scene with ground-truth images")->required();
  rd->add_option("--tuples", rd_tuples, "'presets', 'none', or quality tuples / preset names (e.g. P1 90,75,40)");
  rd->add_option("--backend", rd_backend, "Plane codec: qdef | heic");
  rd->add_option("--out", rd_out, "CSV output (default stdout)");
  rd->add_flag("--all-views", rd_all_views, "Score every view instead of the held-out ones");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    std::cerr << "igs: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Usage);
  }

  try {
    if (*synth) {
      sc.seed = common.seed;
      write_scene(synth_out, make_synthetic_scene(sc));
      std::cout << "wrote " << sc.views << " views to " << synth_out << "\n";
    } else if (*trainc) {
      TrainConfig cfg = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
      if (iters >= 0) cfg.total_iters = iters;
      if (resolution > 0) cfg.model.finest_resolution = resolution;
      if (common.seed_set) cfg.seed = common.seed;
      if (explicit_only) cfg.explicit_only = true;
      const Scene scene = load_scene(scene_dir);
      std::vector<TrainView> train_views;
      for (std::size_t i = 0; i < scene.views.size(); ++i) {
        if (all_views || !is_test_view(i)) train_views.push_back({scene.views[i].camera, scene.views[i].image});
      }
      if (train_views.size() < 2) throw Error(ErrorKind::Data, "training needs at least two views");
      const BoundingBox bbox = resolve_bbox(bbox_mode, scene, train_views, cfg, bbox_margin);
      std::cout << "bbox center " << bbox.center.transpose() << ", half extent " << bbox.half_extent << "\n";

      std::vector<Vec3> init;
      std::optional<MatX> init_explicit;
      const fs::path ply = fs::path(scene_dir) / "points.ply";
      if (fs::exists(ply)) {
        int degree = 0;
        const auto g = read_gaussian_ply(ply, &degree);
        for (const Gaussian& x : g) init.push_back(x.position);
        if (ply_has_gaussian_attributes(ply)) {
          MatX raw(raw_attribute_dim(cfg.model.sh_degree), static_cast<Eigen::Index>(g.size()));
          for (std::size_t i = 0; i < g.size(); ++i) {
            GaussianAttributes a = g[i].attrs;
            VecX sh = VecX::Zero(sh_coeff_count(cfg.model.sh_degree));
            const auto n = std::min(sh.size(), a.sh.size());
            sh.head(n) = a.sh.head(n);
            a.sh = sh;
            raw.col(static_cast<Eigen::Index>(i)) = raw_from_attributes(a);
          }
          init_explicit = std::move(raw);
        }
      } else {
        init = random_points_in_box(bbox, cfg.init_points, cfg.seed);
      }

      std::ofstream metrics;
      if (!metrics_path.empty()) {
        metrics.open(metrics_path);
        if (!metrics) throw Error(ErrorKind::Data, "cannot write " + metrics_path);
      }
      const CodecOptions codec = train_codec.options();
      CheckpointFn checkpoint;
      if (cfg.checkpoint_interval > 0) {
        const fs::path dir = checkpoint_dir.empty() ? fs::path(train_out).parent_path() : fs::path(checkpoint_dir);
        checkpoint = [dir](int it, const IgsModel& m) {
          char name[64];
          std::snprintf(name, sizeof name, "checkpoint_%06d.igs", it);
          write_binary_file(dir / name, write_container(m, CodecOptions{}));
        };
      }
      const TrainResult r = train(train_views, bbox, std::move(init), cfg, metrics_path.empty() ? nullptr : &metrics,
                                  init_explicit, checkpoint);
      const auto test_views = to_train_views(scene.views, true);
      if (cfg.explicit_only) {
        write_gaussian_ply(train_out, r.explicit_gaussians);
        if (!all_views && !test_views.empty()) {
          const EvalSummary e = evaluate_gaussians(r.explicit_gaussians, test_views, RenderSettings{});
          std::cout << "held-out PSNR " << e.psnr << " dB, SSIM " << e.ssim << "\n";
        }
      } else {
        const auto bytes = write_container(r.model, codec);
        write_binary_file(train_out, bytes);
        std::cout << "wrote " << train_out << " (" << bytes.size() << " bytes, " << r.model.points.size()
                  << " points)\n";
        if (!all_views && !test_views.empty() && cfg.total_iters > 0) {
          const EvalSummary e = evaluate_gaussians(decode_gaussians(r.model), test_views, RenderSettings{});
          std::cout << "held-out PSNR " << e.psnr << " dB, SSIM " << e.ssim << "\n";
        }
      }
    } else if (*compress) {
      const IgsModel m = load_model(compress_in);
      const auto bytes = write_container(m, compress_codec.options());
      write_binary_file(compress_out, bytes);
      print_info(inspect_container(bytes), std::cout);
    } else if (*decompress) {
      write_gaussian_ply(decompress_out, decode_gaussians(load_model(decompress_in)));
    } else if (*renderc) {
      if (render_cameras.empty() == render_scene.empty()) {
        throw Error(ErrorKind::Usage, "render needs exactly one of --cameras or --scene");
      }
      const fs::path manifest = render_cameras.empty() ? fs::path(render_scene) / "cameras.txt" : fs::path(render_cameras);
      const auto views = read_camera_manifest(manifest);
      const auto gaussians = load_gaussians(render_model_path);
      RenderSettings rs;
      if (!bg.empty()) rs.background = Vec3(bg[0], bg[1], bg[2]);
      fs::create_directories(render_out);
      for (const SceneView& v : views) {
        write_image(fs::path(render_out) / v.image_name, render(gaussians, v.camera, rs).image);
      }
      std::cout << "rendered " << views.size() << " views to " << render_out << "\n";
    } else if (*evalc) {
      std::ostringstream csv;
      write_eval_csv(csv, evaluate_directories(eval_rendered, eval_gt));
      write_or_print(eval_out, csv.str());
    } else if (*info) {
      print_info(inspect_container(read_binary_file(info_in)), std::cout);
    } else if (*import) {
      int degree = 0;
      const auto g = read_gaussian_ply(import_ply, &degree);
      fs::create_directories(import_scene);
      write_gaussian_ply(fs::path(import_scene) / "points.ply", g);
      std::vector<Vec3> pts;
      for (const Gaussian& x : g) pts.push_back(x.position);
      const fs::path bbox_path = fs::path(import_scene) / "bbox.txt";
      if (!fs::exists(bbox_path)) write_bbox_file(bbox_path, make_cubic_bbox(pts, import_margin));
      std::cout << "imported " << g.size() << " Gaussians (SH degree " << degree << ") into " << import_scene << "\n";
    } else if (*rd) {
      const IgsModel m = load_model(rd_model);
      const Scene scene = load_scene(rd_scene);
      std::vector<TrainView> views;
      for (std::size_t i = 0; i < scene.views.size(); ++i) {
        if (rd_all_views || is_test_view(i)) views.push_back({scene.views[i].camera, scene.views[i].image});
      }
      const auto points = rd_sweep(m, parse_rd_entries(rd_tuples), views, parse_backend(rd_backend), RenderSettings{});
      std::ostringstream csv;
      write_rd_csv(csv, points);
      write_or_print(rd_out, csv.str());
    }
  } catch (const Error& e) {
    std::cerr << "igs: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "igs: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Data);
  }
  return 0;
}
