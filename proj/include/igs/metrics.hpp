#pragma once

#include "igs/core.hpp"

namespace igs {

constexpr double kPsnrCap = 99.0;
constexpr double kSsimWeight = 0.2;

double mse(const ImageBuffer& a, const ImageBuffer& b);
/// Peak 1.0; identical images report kPsnrCap.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), zero padding at the
/// borders, C1 = 0.01^2, C2 = 0.03^2, averaged over pixels and channels.
/// If `grad_a` is given it receives d SSIM / d a.
double ssim(const ImageBuffer& a, const ImageBuffer& b, ImageBuffer* grad_a = nullptr);

/// (1 - 0.2) * L1 + 0.2 * (1 - SSIM). If `grad` is given it receives d loss / d pred.
double render_loss(const ImageBuffer& pred, const ImageBuffer& gt, ImageBuffer* grad = nullptr);

}  // namespace igs
