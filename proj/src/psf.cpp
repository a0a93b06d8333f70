#include "lensnvs/psf.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <iomanip>

#include "lensnvs/random.hpp"

namespace lensnvs::lensless {

using img::Image;

const char* to_string(PsfProvenance p) {
  switch (p) {
    case PsfProvenance::kCalibratedFile:
      return "calibrated-file";
    case PsfProvenance::kSynthetic:
      return "synthetic";
    case PsfProvenance::kDerived:
      return "derived";
  }
  return "unknown";
}

Psf::Psf(Image kernel, PsfProvenance provenance, bool normalize)
    : kernel_(std::move(kernel)), provenance_(provenance) {
  if (kernel_.empty()) throw std::invalid_argument("Psf: empty kernel");
  img::require_finite(kernel_, "Psf");
  if (kernel_.min() < 0.0) throw std::invalid_argument("Psf: negative kernel values");
  if (normalize) {
    for (int c = 0; c < kernel_.channels(); ++c) {
      Image plane = kernel_.channel(c);
      const double s = plane.sum();
      if (!(s > 0.0)) throw std::invalid_argument("Psf: channel with zero energy cannot be normalized");
      for (double& v : plane.data()) v /= s;
      kernel_.set_channel(c, plane);
    }
    normalized_ = true;
  } else {
    normalized_ = true;
    for (int c = 0; c < kernel_.channels(); ++c) {
      if (std::abs(kernel_.channel(c).sum() - 1.0) > 1e-6) normalized_ = false;
    }
  }
}

std::string Psf::id() const {
  std::uint64_t h = fnv1a("psf");
  const std::array<int, 3> dims{kernel_.height(), kernel_.width(), kernel_.channels()};
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(dims.data()), sizeof(dims)), h);
  const auto data = kernel_.data();
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(data.data()), data.size_bytes()), h);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void Psf::require_normalized(const char* what) const {
  for (int c = 0; c < kernel_.channels(); ++c) {
    const double s = kernel_.channel(c).sum();
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument(std::string(what) + ": PSF is not normalized (channel sum " +
                                  std::to_string(s) + ")");
    }
  }
}

const std::string& PsfRegistry::add(const Psf& psf) {
  auto [it, inserted] = entries_.emplace(psf.id(), psf);
  return it->first;
}

const Psf& PsfRegistry::resolve(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw std::out_of_range("PsfRegistry: unknown PSF id " + id);
  return it->second;
}

Psf psf_to_grayscale(const Psf& psf) {
  if (psf.channels() == 1) return psf;
  return Psf(img::to_grayscale(psf.kernel()), PsfProvenance::kDerived, true);
}

Psf psf_binarize(const Psf& psf, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("psf_binarize: threshold must lie in (0, 1)");
  }
  Image out(psf.height(), psf.width(), psf.channels());
  for (int c = 0; c < psf.channels(); ++c) {
    Image plane = psf.kernel().channel(c);
    const double cut = threshold * plane.max();
    std::size_t on = 0;
    for (double& v : plane.data()) {
      v = (v > 0.0 && v >= cut) ? 1.0 : 0.0;
      on += v > 0.0;
    }
    if (on == 0) throw std::invalid_argument("psf_binarize: all-zero result");
    out.set_channel(c, plane);
  }
  return Psf(std::move(out), PsfProvenance::kDerived, true);
}

Psf psf_crop(const Psf& psf, int new_h, int new_w) {
  if (new_h < 3 || new_w < 3) throw std::invalid_argument("psf_crop: crop must be at least 3x3");
  if (new_h > psf.height() || new_w > psf.width()) {
    throw std::invalid_argument("psf_crop: crop larger than kernel");
  }
  if (new_h == psf.height() && new_w == psf.width()) return psf;
  const int oy = (psf.height() - new_h) / 2;
  const int ox = (psf.width() - new_w) / 2;
  Image out(new_h, new_w, psf.channels());
  for (int y = 0; y < new_h; ++y) {
    for (int x = 0; x < new_w; ++x) {
      for (int c = 0; c < psf.channels(); ++c) out.at(y, x, c) = psf.kernel().at(y + oy, x + ox, c);
    }
  }
  return Psf(std::move(out), PsfProvenance::kDerived, true);
}

double spectral_min_magnitude(const Image& kernel_plane, const img::ConvGrid& grid,
                              img::Boundary mode) {
  const auto spec = img::kernel_spectrum(kernel_plane, grid, mode);
  double m = std::numeric_limits<double>::infinity();
  for (const auto& b : spec.bins) m = std::min(m, std::abs(b));
  return m;
}

PsfStats inspect_psf(const Psf& psf) {
  PsfStats s;
  s.sum = psf.kernel().sum();
  s.max = psf.kernel().max();
  s.spectral_min = std::numeric_limits<double>::infinity();
  const auto grid = img::conv_grid(psf.height(), psf.width(), psf.height(), psf.width(),
                                   img::Boundary::kCircular);
  for (int c = 0; c < psf.channels(); ++c) {
    s.spectral_min = std::min(
        s.spectral_min, spectral_min_magnitude(psf.kernel().channel(c), grid, img::Boundary::kCircular));
  }
  return s;
}

namespace {

struct Curve {
  double x0, y0, x1, y1, x2, y2;  // quadratic Bezier control points, in units of the radius
  double weight;
};

void splat(Image& plane, double x, double y, double weight) {
  constexpr double kSigma = 0.6;
  const int xi = static_cast<int>(std::floor(x));
  const int yi = static_cast<int>(std::floor(y));
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      const int px = xi + dx;
      const int py = yi + dy;
      if (px < 0 || py < 0 || px >= plane.width() || py >= plane.height()) continue;
      const double r2 = (px - x) * (px - x) + (py - y) * (py - y);
      plane.at(py, px) += weight * std::exp(-0.5 * r2 / (kSigma * kSigma));
    }
  }
}

Image render_caustic(int size, const std::vector<Curve>& curves, double scale) {
  Image plane(size, size, 1);
  const double center = 0.5 * (size - 1);
  const double radius = 0.45 * size * scale;
  for (const auto& c : curves) {
    const int steps = 4 * size;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const double a = (1 - t) * (1 - t);
      const double b = 2 * (1 - t) * t;
      const double d = t * t;
      const double x = a * c.x0 + b * c.x1 + d * c.x2;
      const double y = a * c.y0 + b * c.y1 + d * c.y2;
      splat(plane, center + radius * x, center + radius * y, c.weight);
    }
  }
  const double floor = 1e-3 * plane.max();
  for (double& v : plane.data()) v += floor;
  return plane;
}

}  // namespace

Psf synthetic_caustic_psf(int size, std::uint64_t seed, bool rgb, double spectral_floor) {
  if (size < 3) throw std::invalid_argument("synthetic_caustic_psf: size must be >= 3");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> weight(0.3, 1.0);
  const int n_curves = 6 + size / 8;
  std::vector<Curve> curves;
  for (int i = 0; i < n_curves; ++i) {
    Curve c{unit(rng), unit(rng), unit(rng), unit(rng), unit(rng), unit(rng), weight(rng)};
    curves.push_back(c);
  }
  const int channels = rgb ? 3 : 1;
  const std::array<double, 3> scales = rgb ? std::array<double, 3>{1.08, 1.0, 0.92}
                                           : std::array<double, 3>{1.0, 1.0, 1.0};
  Image kernel(size, size, channels);
  const auto grid = img::conv_grid(size, size, size, size, img::Boundary::kCircular);
  for (int c = 0; c < channels; ++c) {
    Image plane = render_caustic(size, curves, scales[c]);
    const double total = plane.sum();
    for (double& v : plane.data()) v /= total;
    // Blend in a centered impulse until no frequency is (nearly) annihilated.
    Image mixed = plane;
    for (double alpha = 0.0; alpha <= 1.0; alpha += 0.01) {
      for (std::size_t i = 0; i < mixed.size(); ++i) mixed.data()[i] = (1.0 - alpha) * plane.data()[i];
      mixed.at(size / 2, size / 2) += alpha;
      if (spectral_min_magnitude(mixed, grid, img::Boundary::kCircular) >= spectral_floor) break;
    }
    kernel.set_channel(c, mixed);
  }
  return Psf(std::move(kernel), PsfProvenance::kSynthetic, true);
}

}  // namespace lensnvs::lensless
