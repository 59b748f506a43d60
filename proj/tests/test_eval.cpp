#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "igs/eval.hpp"
#include "igs/scene.hpp"

using namespace igs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("igs_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ImageBuffer ramp(int w, int h) {
  ImageBuffer img(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>((i * 37) % 200) / 255.0;
  return img;
}

}  // namespace

TEST_CASE("identical directories score the PSNR cap and unit SSIM") {
  const fs::path a = scratch("same_a"), b = scratch("same_b");
  for (const char* n : {"0000.png", "0001.png"}) {
    write_image(a / n, ramp(24, 16));
    write_image(b / n, ramp(24, 16));
  }
  const EvalReport r = evaluate_directories(a, b);
  REQUIRE(r.images.size() == 2);
  CHECK(r.images[0].name == "0000.png");
  CHECK(r.mean_psnr == doctest::Approx(99.0));
  CHECK(r.mean_ssim == doctest::Approx(1.0));
}

TEST_CASE("a constant offset of 0.1 scores 20 dB") {
  const fs::path a = scratch("off_a"), b = scratch("off_b");
  ImageBuffer gt(16, 16, 0.2);
  ImageBuffer shifted(16, 16, 0.2 + 0.1);
  write_image(a / "x.png", shifted);
  write_image(b / "x.png", gt);
  const EvalReport r = evaluate_directories(a, b);
  // 8-bit storage: 0.2 -> 51/255, 0.3 -> 77/255 (76.5 rounds up).
  const double d = (77.0 - 51.0) / 255.0;
  CHECK(r.mean_psnr == doctest::Approx(-10.0 * std::log10(d * d)).epsilon(1e-9));
  CHECK(std::abs(r.mean_psnr - 20.0) < 0.2);
}

TEST_CASE("missing and mismatched files are reported together") {
  const fs::path a = scratch("bad_a"), b = scratch("bad_b");
  write_image(a / "0000.png", ramp(8, 8));
  write_image(b / "0000.png", ramp(9, 8));
  write_image(a / "0001.png", ramp(8, 8));
  write_image(b / "0002.png", ramp(8, 8));
  try {
    evaluate_directories(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
    const std::string msg = e.what();
    CHECK(msg.find("0000.png") != std::string::npos);
    CHECK(msg.find("0001.png") != std::string::npos);
    CHECK(msg.find("0002.png") != std::string::npos);
  }
}

TEST_CASE("eval CSV rows and mean") {
  EvalReport r = evaluate_images({{"a.png", 30.0, 0.9}, {"b.png", 20.0, 0.7}});
  CHECK(r.mean_psnr == doctest::Approx(25.0));
  CHECK(r.mean_ssim == doctest::Approx(0.8));
  std::ostringstream o;
  write_eval_csv(o, r);
  const std::string s = o.str();
  CHECK(s.rfind("image,psnr,ssim\n", 0) == 0);
  CHECK(s.find("a.png,30") != std::string::npos);
  CHECK(s.find("mean,25") != std::string::npos);
}

TEST_CASE("rd sweep: empty list, single tuple, monotone rate over presets") {
  ModelConfig mc;
  mc.finest_resolution = 32;
  mc.channels = 3;
  mc.hidden = {16, 16};
  mc.plane_init_range = 0.5;
  BoundingBox bbox;
  std::vector<Vec3> pts;
  for (int i = 0; i < 40; ++i) pts.emplace_back(0.02 * i - 0.4, 0.3 * std::sin(i), 0.3 * std::cos(i));
  const IgsModel m = IgsModel::create(mc, bbox, pts, 11, -3.0);
  const Camera cam = Camera::look_at(Vec3(0, 0, 2.5), Vec3::Zero(), Vec3(0, 1, 0), 30.0, 24, 24);
  const RenderSettings rs;
  const std::vector<TrainView> views = {{cam, render(decode_gaussians(m), cam, rs).image}};

  CHECK(rd_sweep(m, {}, views, PlaneBackend::Qdef, rs).empty());
  std::ostringstream header;
  write_rd_csv(header, {});
  CHECK(header.str() == "label,q1,q2,q3,total_bytes,plane_bytes,psnr,ssim\n");

  const auto one = rd_sweep(m, {{"x", {100, 100, 100}}}, views, PlaneBackend::Qdef, rs);
  REQUIRE(one.size() == 1);
  CHECK(one[0].psnr > 45.0);
  CHECK(one[0].plane_bytes < one[0].total_bytes);

  const auto presets = preset_rd_entries();
  REQUIRE(presets.size() == 7);
  const auto all = rd_sweep(m, presets, views, PlaneBackend::Qdef, rs);
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i].plane_bytes >= all[i - 1].plane_bytes);
}
