#pragma once

#include <complex>
#include <span>
#include <vector>

namespace lensnvs::img {

/// Half-plane spectrum of a real rows×cols grid, laid out rows × (cols/2 + 1).
struct Spectrum {
  int rows = 0;
  int cols = 0;
  std::vector<std::complex<double>> bins;

  int half_cols() const { return cols / 2 + 1; }
};

/// Forward real-to-complex 2-D DFT (unnormalized).
Spectrum rfft2(std::span<const double> grid, int rows, int cols);

/// Inverse of rfft2, scaled by 1/(rows*cols) so that irfft2(rfft2(x)) == x.
std::vector<double> irfft2(const Spectrum& spectrum);

}  // namespace lensnvs::img
