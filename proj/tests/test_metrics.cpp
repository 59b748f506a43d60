#include <cmath>
#include <random>

#include "doctest.h"
#include "igs/metrics.hpp"
#include "test_util.hpp"

using namespace igs;
using igs::testing::rel_error;

namespace {

ImageBuffer random_image(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0, 1);
  ImageBuffer img(w, h);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

// Direct 2D windowed sums, zero outside the image.
double ssim_bruteforce(const ImageBuffer& a, const ImageBuffer& b) {
  double taps[11], sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    taps[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2 * 1.5 * 1.5));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -5; dy <= 5; ++dy) {
          for (int dx = -5; dx <= 5; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= a.width || yy >= a.height) continue;
            const double w = taps[dx + 5] * taps[dy + 5];
            const double va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
  }
  return total / (3.0 * a.width * a.height);
}

}  // namespace

TEST_CASE("ssim agrees with a direct windowed evaluation") {
  std::mt19937_64 rng(1);
  const ImageBuffer a = random_image(rng, 23, 17), b = random_image(rng, 23, 17);
  CHECK(ssim(a, b) == doctest::Approx(ssim_bruteforce(a, b)).epsilon(1e-12));
  ImageBuffer c = a;
  for (double& v : c.pixels) v = 0.7 * v + 0.1;
  CHECK(ssim(a, c) == doctest::Approx(ssim_bruteforce(a, c)).epsilon(1e-12));
}

TEST_CASE("ssim: identity, symmetry, range") {
  std::mt19937_64 rng(2);
  const ImageBuffer a = random_image(rng, 20, 20), b = random_image(rng, 20, 20);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));
  CHECK(ssim(a, b) < 1.0);
  CHECK(ssim(a, b) >= -1.0);
}

TEST_CASE("psnr and render_loss on constant images") {
  ImageBuffer a(16, 16), b(16, 16);
  std::fill(a.pixels.begin(), a.pixels.end(), 0.5);
  std::fill(b.pixels.begin(), b.pixels.end(), 0.6);
  CHECK(psnr(a, b) == doctest::Approx(20.0));
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(mse(a, b) == doctest::Approx(0.01));
  const double l = render_loss(a, b);
  CHECK(l == doctest::Approx(0.8 * 0.1 + 0.2 * (1.0 - ssim(a, b))));
  CHECK(render_loss(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(mse(a, ImageBuffer(8, 8)), Error);
}

TEST_CASE("ssim and render_loss gradients match finite differences") {
  std::mt19937_64 rng(3);
  ImageBuffer a = random_image(rng, 14, 12);
  const ImageBuffer b = random_image(rng, 14, 12);
  ImageBuffer gs(14, 12), gl(14, 12);
  ssim(a, b, &gs);
  render_loss(a, b, &gl);
  std::vector<double*> params;
  std::vector<double> an_s, an_l;
  std::uniform_int_distribution<std::size_t> pick(0, a.size() - 1);
  for (int i = 0; i < 80; ++i) {
    const std::size_t k = pick(rng);
    params.push_back(&a.pixels[k]);
    an_s.push_back(gs.pixels[k]);
    an_l.push_back(gl.pixels[k]);
  }
  const VecX fs = igs::testing::central_diff([&] { return ssim(a, b); }, params, 1e-6);
  const VecX fl = igs::testing::central_diff([&] { return render_loss(a, b); }, params, 1e-7);
  CHECK(rel_error(Eigen::Map<VecX>(an_s.data(), 80), fs) < 1e-6);
  CHECK(rel_error(Eigen::Map<VecX>(an_l.data(), 80), fl) < 1e-5);
}
