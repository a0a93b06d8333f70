#pragma once

#include <cstdint>
#include <string>

#include "lensnvs/convolve.hpp"
#include "lensnvs/fft.hpp"
#include "lensnvs/image.hpp"
#include "lensnvs/noise.hpp"
#include "lensnvs/psf.hpp"

namespace lensnvs::lensless {

/// Regularization constant used for coarse recovery unless overridden.
inline constexpr double kDefaultWienerK = 0.00045;
/// Default capture SNR in dB.
inline constexpr double kDefaultSnrDb = 40.0;

/// Simulated (or loaded) sensor measurement G = I * H + n.
struct LenslessCapture {
  img::Image raster;
  double snr_db = img::kNoNoise;
  std::string psf_id;
  img::Boundary boundary = img::Boundary::kZeroPadLinear;
};

/// Forward model. A single-channel PSF is applied identically to every image
/// channel; a 3-channel PSF (RGB ablation) convolves channel-by-channel. The
/// PSF must be normalized. Noise is skipped when snr_db is kNoNoise.
///
/// In zero-pad-linear mode the sensor records the whole linear convolution,
/// (H+kh-1)×(W+kw-1); the multiplexed light that spills past the scene
/// footprint is part of the measurement. Circular captures are H×W.
LenslessCapture simulate_capture(const img::Image& ground_truth, const Psf& psf, double snr_db,
                                 std::uint64_t seed,
                                 img::Boundary boundary = img::Boundary::kZeroPadLinear);

/// Scene-sized capture dimensions for a given PSF (inverse of the padding).
int scene_height(const LenslessCapture& capture, const Psf& psf);
int scene_width(const LenslessCapture& capture, const Psf& psf);

/// The H×W part of the capture aligned with the scene (the kernel-centered
/// window). Identity for circular captures. Used for capture-vs-scene metrics.
img::Image capture_window(const LenslessCapture& capture, const Psf& psf);

/// Wiener filter response conj(H) / (|H|^2 + k) on `grid`.
img::Spectrum wiener_response(const img::Image& kernel_plane, const img::ConvGrid& grid,
                              img::Boundary boundary, double k);

double frobenius_norm(const img::Spectrum& spectrum);

/// Coarse recovery I_hat = IFFT( conj(H) / (|H|^2 + k) * G ) per channel, on
/// the same FFT grid the forward model used, then cropped to the scene size. The output is not
/// clamped to [0, 1]. Throws if k < 0, or if k == 0 and the PSF spectrum has
/// (near-)zeros.
img::Image wiener_deconvolve(const LenslessCapture& capture, const Psf& psf,
                             double k = kDefaultWienerK);

}  // namespace lensnvs::lensless
