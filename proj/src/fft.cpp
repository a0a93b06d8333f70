#include "lensnvs/fft.hpp"

#include <fftw3.h>

#include <memory>
#include <mutex>
#include <stdexcept>

namespace lensnvs::img {
namespace {

// The FFTW planner is not re-entrant; execution on distinct arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan_s* plan) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
};

}  // namespace

Spectrum rfft2(std::span<const double> grid, int rows, int cols) {
  if (rows <= 0 || cols <= 0 || grid.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("rfft2: grid size mismatch");
  }
  Spectrum out;
  out.rows = rows;
  out.cols = cols;
  out.bins.resize(static_cast<std::size_t>(rows) * out.half_cols());
  std::vector<double> in(grid.begin(), grid.end());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_2d(rows, cols, in.data(),
                                reinterpret_cast<fftw_complex*>(out.bins.data()), FFTW_ESTIMATE);
  }
  if (plan == nullptr) throw std::runtime_error("rfft2: FFTW planning failed");
  std::unique_ptr<fftw_plan_s, PlanDeleter> guard(plan);
  fftw_execute(plan);
  return out;
}

std::vector<double> irfft2(const Spectrum& spectrum) {
  const int rows = spectrum.rows;
  const int cols = spectrum.cols;
  if (spectrum.bins.size() != static_cast<std::size_t>(rows) * spectrum.half_cols()) {
    throw std::invalid_argument("irfft2: spectrum size mismatch");
  }
  // c2r destroys its input.
  std::vector<std::complex<double>> scratch = spectrum.bins;
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_c2r_2d(rows, cols, reinterpret_cast<fftw_complex*>(scratch.data()),
                                out.data(), FFTW_ESTIMATE);
  }
  if (plan == nullptr) throw std::runtime_error("irfft2: FFTW planning failed");
  std::unique_ptr<fftw_plan_s, PlanDeleter> guard(plan);
  fftw_execute(plan);
  const double scale = 1.0 / (static_cast<double>(rows) * cols);
  for (double& v : out) v *= scale;
  return out;
}

}  // namespace lensnvs::img
