#pragma once

#include "lensnvs/image.hpp"

namespace lensnvs::img {

/// PSNR value reported for identical images.
inline constexpr double kPsnrCap = 100.0;

struct MetricReport {
  double psnr = 0.0;  // dB, peak 1.0
  double ssim = 0.0;
  double mse = 0.0;
};

double mse(const Image& a, const Image& b);

/// 10*log10(1/mse), capped at kPsnrCap.
double psnr(const Image& a, const Image& b);

/// Mean SSIM with an 11×11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, averaged over the valid window positions and over channels.
/// Images smaller than the window use the largest odd window that fits.
double ssim(const Image& a, const Image& b);

MetricReport evaluate(const Image& pred, const Image& ref);

}  // namespace lensnvs::img
