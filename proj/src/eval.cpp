#include "igs/eval.hpp"

#include <algorithm>
#include <ostream>
#include <set>

#include "igs/metrics.hpp"
#include "igs/scene.hpp"

namespace igs {

namespace fs = std::filesystem;

EvalReport evaluate_images(const std::vector<ImageScore>& scores) {
  EvalReport r;
  r.images = scores;
  for (const ImageScore& s : scores) {
    r.mean_psnr += s.psnr;
    r.mean_ssim += s.ssim;
  }
  if (!scores.empty()) {
    r.mean_psnr /= static_cast<double>(scores.size());
    r.mean_ssim /= static_cast<double>(scores.size());
  }
  return r;
}

namespace {

std::set<std::string> png_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Data, "not a directory: " + dir.string());
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") names.insert(e.path().filename().string());
  }
  return names;
}

}  // namespace

EvalReport evaluate_directories(const fs::path& rendered, const fs::path& ground_truth) {
  const auto a = png_names(rendered);
  const auto b = png_names(ground_truth);
  std::vector<std::string> problems;
  for (const auto& n : a)
    if (!b.count(n)) problems.push_back(n + " (no ground truth)");
  for (const auto& n : b)
    if (!a.count(n)) problems.push_back(n + " (not rendered)");
  std::vector<ImageScore> scores;
  for (const auto& n : a) {
    if (!b.count(n)) continue;
    const ImageBuffer x = read_image(rendered / n);
    const ImageBuffer y = read_image(ground_truth / n);
    if (!x.same_shape(y)) {
      problems.push_back(n + " (size mismatch)");
      continue;
    }
    scores.push_back({n, psnr(x, y), ssim(x, y)});
  }
  if (a.empty() && b.empty()) problems.push_back("no PNG images found");
  if (!problems.empty()) {
    std::string msg = "image sets differ:";
    for (const auto& p : problems) msg += " " + p + ";";
    msg.pop_back();
    throw Error(ErrorKind::Data, msg);
  }
  return evaluate_images(scores);
}

void write_eval_csv(std::ostream& out, const EvalReport& report) {
  out << "image,psnr,ssim\n";
  for (const ImageScore& s : report.images) out << s.name << ',' << s.psnr << ',' << s.ssim << '\n';
  out << "mean," << report.mean_psnr << ',' << report.mean_ssim << '\n';
}

std::vector<RdEntry> preset_rd_entries() {
  std::vector<RdEntry> e;
  for (int i = 0; i <= 6; ++i) e.push_back({"P" + std::to_string(i), quality_preset(i)});
  return e;
}

std::vector<RdPoint> rd_sweep(const IgsModel& model, const std::vector<RdEntry>& entries,
                              const std::vector<TrainView>& views, PlaneBackend backend,
                              const RenderSettings& settings) {
  std::vector<RdPoint> out;
  for (const RdEntry& entry : entries) {
    CodecOptions opt;
    opt.quality = entry.quality;
    opt.backend = backend;
    const std::vector<std::uint8_t> bytes = write_container(model, opt);
    const ContainerInfo info = inspect_container(bytes);
    const IgsModel decoded = read_container(bytes);
    const EvalSummary s = evaluate_gaussians(decode_gaussians(decoded), views, settings);
    out.push_back({entry, bytes.size(), info.plane_bytes(), s.psnr, s.ssim});
  }
  return out;
}

void write_rd_csv(std::ostream& out, const std::vector<RdPoint>& points) {
  out << "label,q1,q2,q3,total_bytes,plane_bytes,psnr,ssim\n";
  for (const RdPoint& p : points) {
    out << p.entry.label << ',' << p.entry.quality[0] << ',' << p.entry.quality[1] << ',' << p.entry.quality[2]
        << ',' << p.total_bytes << ',' << p.plane_bytes << ',' << p.psnr << ',' << p.ssim << '\n';
  }
}

}  // namespace igs
