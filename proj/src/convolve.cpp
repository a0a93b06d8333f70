#include "lensnvs/convolve.hpp"

#include <stdexcept>
#include <string>

namespace lensnvs::img {
namespace {

void check_kernel(const Image& image, const Image& kernel, Boundary mode) {
  if (kernel.channels() != 1) throw std::invalid_argument("convolve: kernel must have 1 channel");
  if (kernel.empty() || image.empty()) throw std::invalid_argument("convolve: empty input");
  require_finite(kernel, "convolve: kernel");
  if (mode == Boundary::kCircular &&
      (kernel.height() > image.height() || kernel.width() > image.width())) {
    throw std::invalid_argument("convolve: circular kernel larger than image (" +
                                std::to_string(kernel.height()) + "x" +
                                std::to_string(kernel.width()) + " vs " +
                                std::to_string(image.height()) + "x" +
                                std::to_string(image.width()) + ")");
  }
}

int wrap(int i, int n) {
  const int r = i % n;
  return r < 0 ? r + n : r;
}

}  // namespace

const char* to_string(Boundary mode) {
  return mode == Boundary::kCircular ? "circular" : "zero-pad-linear";
}

Boundary boundary_from_string(const std::string& name) {
  if (name == "circular") return Boundary::kCircular;
  if (name == "zero-pad-linear" || name == "linear") return Boundary::kZeroPadLinear;
  throw std::invalid_argument("unknown boundary mode '" + name + "'");
}

ConvGrid conv_grid(int height, int width, int kernel_h, int kernel_w, Boundary mode) {
  ConvGrid grid;
  if (mode == Boundary::kCircular) {
    grid.rows = height;
    grid.cols = width;
  } else {
    grid.rows = height + kernel_h - 1;
    grid.cols = width + kernel_w - 1;
    grid.offset_y = kernel_h / 2;
    grid.offset_x = kernel_w / 2;
  }
  return grid;
}

Spectrum kernel_spectrum(const Image& kernel, const ConvGrid& grid, Boundary mode) {
  std::vector<double> values(static_cast<std::size_t>(grid.rows) * grid.cols, 0.0);
  const int cy = kernel.height() / 2;
  const int cx = kernel.width() / 2;
  for (int y = 0; y < kernel.height(); ++y) {
    for (int x = 0; x < kernel.width(); ++x) {
      int gy = y;
      int gx = x;
      if (mode == Boundary::kCircular) {
        gy = wrap(y - cy, grid.rows);
        gx = wrap(x - cx, grid.cols);
      }
      values[static_cast<std::size_t>(gy) * grid.cols + gx] += kernel.at(y, x);
    }
  }
  return rfft2(values, grid.rows, grid.cols);
}

std::vector<double> embed_plane(const Image& plane, const ConvGrid& grid) {
  std::vector<double> values(static_cast<std::size_t>(grid.rows) * grid.cols, 0.0);
  for (int y = 0; y < plane.height(); ++y) {
    for (int x = 0; x < plane.width(); ++x) {
      values[static_cast<std::size_t>(y + grid.offset_y) * grid.cols + x + grid.offset_x] =
          plane.at(y, x);
    }
  }
  return values;
}

Image crop_plane(const std::vector<double>& grid_values, const ConvGrid& grid, int origin_y,
                 int origin_x, int height, int width) {
  Image out(height, width, 1);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      out.at(y, x) = grid_values[static_cast<std::size_t>(y + origin_y) * grid.cols + x + origin_x];
    }
  }
  return out;
}

Image convolve_fft(const Image& image, const Image& kernel, Boundary mode) {
  check_kernel(image, kernel, mode);
  const ConvGrid grid = conv_grid(image.height(), image.width(), kernel.height(), kernel.width(), mode);
  const Spectrum kspec = kernel_spectrum(kernel, grid, mode);
  Image out(image.height(), image.width(), image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    // In linear mode the image sits at the grid origin and the full
    // convolution is cropped at the kernel center offset.
    ConvGrid placement = grid;
    placement.offset_y = 0;
    placement.offset_x = 0;
    Spectrum spec = rfft2(embed_plane(image.channel(c), placement), grid.rows, grid.cols);
    for (std::size_t i = 0; i < spec.bins.size(); ++i) spec.bins[i] *= kspec.bins[i];
    out.set_channel(c, crop_plane(irfft2(spec), grid, grid.offset_y, grid.offset_x,
                                  image.height(), image.width()));
  }
  return out;
}

Image convolve_full_fft(const Image& image, const Image& kernel) {
  check_kernel(image, kernel, Boundary::kZeroPadLinear);
  ConvGrid grid = conv_grid(image.height(), image.width(), kernel.height(), kernel.width(), Boundary::kZeroPadLinear);
  const Spectrum kspec = kernel_spectrum(kernel, grid, Boundary::kZeroPadLinear);
  grid.offset_y = 0;
  grid.offset_x = 0;
  Image out(grid.rows, grid.cols, image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    Spectrum spec = rfft2(embed_plane(image.channel(c), grid), grid.rows, grid.cols);
    for (std::size_t i = 0; i < spec.bins.size(); ++i) spec.bins[i] *= kspec.bins[i];
    out.set_channel(c, crop_plane(irfft2(spec), grid, 0, 0, grid.rows, grid.cols));
  }
  return out;
}

Image convolve_direct(const Image& image, const Image& kernel, Boundary mode) {
  check_kernel(image, kernel, mode);
  const int h = image.height();
  const int w = image.width();
  const int cy = kernel.height() / 2;
  const int cx = kernel.width() / 2;
  Image out(h, w, image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < kernel.height(); ++ky) {
          for (int kx = 0; kx < kernel.width(); ++kx) {
            int sy = y - (ky - cy);
            int sx = x - (kx - cx);
            if (mode == Boundary::kCircular) {
              sy = wrap(sy, h);
              sx = wrap(sx, w);
            } else if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
              continue;
            }
            acc += image.at(sy, sx, c) * kernel.at(ky, kx);
          }
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

}  // namespace lensnvs::img
