#pragma once

#include <cstdint>
#include <limits>

#include "lensnvs/image.hpp"

namespace lensnvs::img {

/// Sentinel SNR meaning "do not add noise".
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

/// Returns image + n with n ~ N(0, sigma^2) i.i.d. per sample, sigma chosen so
/// that 10*log10(mean(image^2) / sigma^2) == snr_db. Deterministic in `seed`.
/// Throws if the image has zero signal power (sigma would be undefined).
Image add_gaussian_noise(const Image& image, double snr_db, std::uint64_t seed);

/// Noise standard deviation add_gaussian_noise would use.
double noise_sigma_for_snr(const Image& image, double snr_db);

/// 10*log10(mean(clean^2) / mean((noisy - clean)^2)).
double measured_snr_db(const Image& clean, const Image& noisy);

}  // namespace lensnvs::img
