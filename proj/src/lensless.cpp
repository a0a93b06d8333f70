#include "lensnvs/lensless.hpp"

#include <cmath>
#include <stdexcept>

namespace lensnvs::lensless {

using img::Boundary;
using img::Image;

namespace {

constexpr double kSpectralZero = 1e-12;

Image kernel_plane_for(const Psf& psf, int channel) {
  return psf.channels() == 1 ? psf.kernel().channel(0) : psf.kernel().channel(channel);
}

void check_psf_channels(const Psf& psf, const Image& image, const char* what) {
  if (psf.channels() != 1 && psf.channels() != image.channels()) {
    throw std::invalid_argument(std::string(what) + ": PSF has " + std::to_string(psf.channels()) +
                                " channels, image has " + std::to_string(image.channels()));
  }
}

}  // namespace

LenslessCapture simulate_capture(const Image& ground_truth, const Psf& psf, double snr_db,
                                 std::uint64_t seed, Boundary boundary) {
  psf.require_normalized("simulate_capture");
  check_psf_channels(psf, ground_truth, "simulate_capture");
  img::require_finite(ground_truth, "simulate_capture: ground truth");

  auto convolve = [&](const Image& plane, const Image& kernel) {
    return boundary == Boundary::kCircular ? img::convolve_fft(plane, kernel, boundary)
                                           : img::convolve_full_fft(plane, kernel);
  };
  Image blurred;
  if (psf.channels() == 1) {
    blurred = convolve(ground_truth, psf.kernel());
  } else {
    for (int c = 0; c < ground_truth.channels(); ++c) {
      Image plane = convolve(ground_truth.channel(c), psf.kernel().channel(c));
      if (c == 0) blurred = Image(plane.height(), plane.width(), ground_truth.channels());
      blurred.set_channel(c, plane);
    }
  }
  LenslessCapture capture;
  capture.raster = img::add_gaussian_noise(blurred, snr_db, seed);
  capture.snr_db = snr_db;
  capture.psf_id = psf.id();
  capture.boundary = boundary;
  return capture;
}

int scene_height(const LenslessCapture& capture, const Psf& psf) {
  if (capture.boundary == Boundary::kCircular) return capture.raster.height();
  const int h = capture.raster.height() - psf.height() + 1;
  if (h < 1) throw std::invalid_argument("capture is smaller than the PSF support");
  return h;
}

int scene_width(const LenslessCapture& capture, const Psf& psf) {
  if (capture.boundary == Boundary::kCircular) return capture.raster.width();
  const int w = capture.raster.width() - psf.width() + 1;
  if (w < 1) throw std::invalid_argument("capture is smaller than the PSF support");
  return w;
}

Image capture_window(const LenslessCapture& capture, const Psf& psf) {
  if (capture.boundary == Boundary::kCircular) return capture.raster;
  const int h = scene_height(capture, psf);
  const int w = scene_width(capture, psf);
  const int oy = psf.height() / 2;
  const int ox = psf.width() / 2;
  Image out(h, w, capture.raster.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < out.channels(); ++c) out.at(y, x, c) = capture.raster.at(y + oy, x + ox, c);
  return out;
}

img::Spectrum wiener_response(const Image& kernel_plane, const img::ConvGrid& grid,
                              Boundary boundary, double k) {
  img::Spectrum h = img::kernel_spectrum(kernel_plane, grid, boundary);
  for (auto& b : h.bins) b = std::conj(b) / (std::norm(b) + k);
  return h;
}

double frobenius_norm(const img::Spectrum& spectrum) {
  double acc = 0.0;
  for (const auto& b : spectrum.bins) acc += std::norm(b);
  return std::sqrt(acc);
}

Image wiener_deconvolve(const LenslessCapture& capture, const Psf& psf, double k) {
  if (!(k >= 0.0) || !std::isfinite(k)) throw std::invalid_argument("wiener_deconvolve: k must be >= 0");
  const Image& g = capture.raster;
  if (g.empty()) throw std::invalid_argument("wiener_deconvolve: empty capture");
  check_psf_channels(psf, g, "wiener_deconvolve");
  if (capture.boundary == Boundary::kCircular &&
      (psf.height() > g.height() || psf.width() > g.width())) {
    throw std::invalid_argument("wiener_deconvolve: PSF larger than capture in circular mode");
  }
  const int h = scene_height(capture, psf);
  const int w = scene_width(capture, psf);
  // The grid coincides with the capture; the scene sits at its origin.
  auto grid = img::conv_grid(h, w, psf.height(), psf.width(), capture.boundary);
  grid.offset_y = 0;
  grid.offset_x = 0;

  Image out(h, w, g.channels());
  img::Spectrum response;
  for (int c = 0; c < g.channels(); ++c) {
    if (c == 0 || psf.channels() > 1) {
      const Image plane = kernel_plane_for(psf, c);
      if (k == 0.0) {
        for (const auto& b : img::kernel_spectrum(plane, grid, capture.boundary).bins) {
          if (std::abs(b) < kSpectralZero) {
            throw std::invalid_argument("wiener_deconvolve: k = 0 with spectral zeros in the PSF");
          }
        }
      }
      response = wiener_response(plane, grid, capture.boundary, k);
    }
    img::Spectrum spec = img::rfft2(img::embed_plane(g.channel(c), grid), grid.rows, grid.cols);
    for (std::size_t i = 0; i < spec.bins.size(); ++i) spec.bins[i] *= response.bins[i];
    // The estimate occupies the grid origin (the forward model placed the scene there).
    Image plane = img::crop_plane(img::irfft2(spec), grid, 0, 0, h, w);
    for (double& v : plane.data()) {
      if (!std::isfinite(v)) v = 0.0;
    }
    out.set_channel(c, plane);
  }
  return out;
}

}  // namespace lensnvs::lensless
