#pragma once

#include "lensnvs/fft.hpp"
#include "lensnvs/image.hpp"

namespace lensnvs::img {

/// Boundary model for 2-D convolution.
///
/// kZeroPadLinear computes the linear convolution on an (H+kh-1)×(W+kw-1)
/// zero-padded domain and keeps the central H×W window; this is the physical
/// capture model. kCircular wraps indices modulo the image size.
enum class Boundary { kZeroPadLinear, kCircular };

const char* to_string(Boundary mode);
Boundary boundary_from_string(const std::string& name);

/// Per-channel convolution with a single-channel kernel whose origin is its
/// center pixel (kh/2, kw/2). Computed via FFT.
Image convolve_fft(const Image& image, const Image& kernel,
                   Boundary mode = Boundary::kZeroPadLinear);

/// Full linear convolution, (H+kh-1)×(W+kw-1): the image sits at the origin
/// and nothing is cropped. Output pixel (y, x) corresponds to image pixel
/// (y - kh/2, x - kw/2).
Image convolve_full_fft(const Image& image, const Image& kernel);

/// Textbook spatial-domain convolution with the same conventions as
/// convolve_fft. Quadratic cost; intended for small inputs and as a test oracle.
Image convolve_direct(const Image& image, const Image& kernel,
                      Boundary mode = Boundary::kZeroPadLinear);

/// FFT grid geometry shared by the forward model and its inverse.
struct ConvGrid {
  int rows = 0;
  int cols = 0;
  int offset_y = 0;  // where the H×W window sits inside the grid
  int offset_x = 0;
};

ConvGrid conv_grid(int height, int width, int kernel_h, int kernel_w, Boundary mode);

/// Spectrum of a single-channel kernel embedded in `grid` according to `mode`.
Spectrum kernel_spectrum(const Image& kernel, const ConvGrid& grid, Boundary mode);

/// Places a single-channel H×W plane into `grid` at its window offset.
std::vector<double> embed_plane(const Image& plane, const ConvGrid& grid);

/// Inverse of embed_plane: crops the H×W window at `origin_y/x` from a grid.
Image crop_plane(const std::vector<double>& grid_values, const ConvGrid& grid, int origin_y,
                 int origin_x, int height, int width);

}  // namespace lensnvs::img
