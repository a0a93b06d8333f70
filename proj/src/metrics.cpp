#include "lensnvs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace lensnvs::img {
namespace {

void check_shapes(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b) || a.empty()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const int r = size / 2;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable valid-mode filtering of a single plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                 const std::vector<double>& win) {
  const int n = static_cast<int>(win.size());
  const int oh = h - n + 1;
  const int ow = w - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += win[k] * plane[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += win[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  check_shapes(a, b, "mse");
  auto x = a.data();
  auto y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  return acc / static_cast<double>(x.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double ssim(const Image& a, const Image& b) {
  check_shapes(a, b, "ssim");
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const int h = a.height();
  const int w = a.width();
  int size = std::min({11, h, w});
  if (size % 2 == 0) --size;
  const auto win = gaussian_window(size, 1.5);

  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = a.channel(c);
    const auto pb = b.channel(c);
    std::vector<double> x(pa.data().begin(), pa.data().end());
    std::vector<double> y(pb.data().begin(), pb.data().end());
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, win);
    const auto my = filter_valid(y, h, w, win);
    const auto sxx = filter_valid(xx, h, w, win);
    const auto syy = filter_valid(yy, h, w, win);
    const auto sxy = filter_valid(xy, h, w, win);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return std::clamp(total / a.channels(), -1.0, 1.0);
}

MetricReport evaluate(const Image& pred, const Image& ref) {
  MetricReport r;
  r.mse = mse(pred, ref);
  r.psnr = psnr(pred, ref);
  r.ssim = ssim(pred, ref);
  return r;
}

}  // namespace lensnvs::img
