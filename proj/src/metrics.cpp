#include "igs/metrics.hpp"

#include <array>
#include <cmath>

namespace igs {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    w[i] = std::exp(-x * x / (2 * kSigma * kSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable "same" convolution with zero padding on a single-channel W x H map.
// The kernel is symmetric, so this operator is self-adjoint.
std::vector<double> blur(const std::vector<double>& in, int w, int h) {
  static const std::array<double, kWindow> taps = gaussian_taps();
  constexpr int r = kWindow / 2;
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < w) s += taps[k + r] * in[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < h) s += taps[k + r] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  return out;
}

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b) || a.size() != b.size()) throw Error(ErrorKind::Data, "image shapes differ");
}

}  // namespace

double mse(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(m));
}

double ssim(const ImageBuffer& a, const ImageBuffer& b, ImageBuffer* grad_a) {
  require_same_shape(a, b);
  const int w = a.width, h = a.height;
  const std::size_t np = static_cast<std::size_t>(w) * h;
  const double inv_n = 1.0 / static_cast<double>(np * 3);
  if (grad_a) *grad_a = ImageBuffer(w, h);
  double total = 0.0;
  std::vector<double> x(np), y(np), xx(np), yy(np), xy(np);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < np; ++i) {
      x[i] = a.pixels[i * 3 + c];
      y[i] = b.pixels[i * 3 + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const std::vector<double> mu1 = blur(x, w, h), mu2 = blur(y, w, h);
    const std::vector<double> e11 = blur(xx, w, h), e22 = blur(yy, w, h), e12 = blur(xy, w, h);
    std::vector<double> d_mu1, d_e11, d_e12;
    if (grad_a) {
      d_mu1.resize(np);
      d_e11.resize(np);
      d_e12.resize(np);
    }
    for (std::size_t i = 0; i < np; ++i) {
      const double m1 = mu1[i], m2 = mu2[i];
      const double s11 = e11[i] - m1 * m1, s22 = e22[i] - m2 * m2, s12 = e12[i] - m1 * m2;
      const double a1 = 2 * m1 * m2 + kC1, a2 = 2 * s12 + kC2;
      const double b1 = m1 * m1 + m2 * m2 + kC1, b2 = s11 + s22 + kC2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;
      if (grad_a) {
        const double ds_dm1 = 2 * m2 * a2 / (b1 * b2) - s * 2 * m1 / b1;
        const double ds_ds11 = -s / b2;
        const double ds_ds12 = 2 * a1 / (b1 * b2);
        d_mu1[i] = inv_n * (ds_dm1 - 2 * m1 * ds_ds11 - m2 * ds_ds12);
        d_e11[i] = inv_n * ds_ds11;
        d_e12[i] = inv_n * ds_ds12;
      }
    }
    if (grad_a) {
      const std::vector<double> g_mu = blur(d_mu1, w, h), g_e11 = blur(d_e11, w, h), g_e12 = blur(d_e12, w, h);
      for (std::size_t i = 0; i < np; ++i) {
        grad_a->pixels[i * 3 + c] = g_mu[i] + 2 * x[i] * g_e11[i] + y[i] * g_e12[i];
      }
    }
  }
  return total * inv_n;
}

double render_loss(const ImageBuffer& pred, const ImageBuffer& gt, ImageBuffer* grad) {
  require_same_shape(pred, gt);
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double l1 = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) l1 += std::abs(pred.pixels[i] - gt.pixels[i]);
  l1 *= inv_n;
  const double s = ssim(pred, gt, grad);
  if (grad) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred.pixels[i] - gt.pixels[i];
      const double sgn = (d > 0.0) - (d < 0.0);
      grad->pixels[i] = (1.0 - kSsimWeight) * sgn * inv_n - kSsimWeight * grad->pixels[i];
    }
  }
  return (1.0 - kSsimWeight) * l1 + kSsimWeight * (1.0 - s);
}

}  // namespace igs
