#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lensnvs/convolve.hpp"
#include "lensnvs/image.hpp"

namespace lensnvs::lensless {

enum class PsfProvenance { kCalibratedFile, kSynthetic, kDerived };

const char* to_string(PsfProvenance p);

/// Point-spread function kernel. Non-negative; when normalized each channel
/// sums to 1 within 1e-6.
class Psf {
 public:
  Psf() = default;
  /// Validates non-negativity and finiteness. `normalize` rescales each
  /// channel to unit sum (throws if a channel has zero energy).
  Psf(img::Image kernel, PsfProvenance provenance, bool normalize = true);

  const img::Image& kernel() const { return kernel_; }
  bool normalized() const { return normalized_; }
  PsfProvenance provenance() const { return provenance_; }
  int channels() const { return kernel_.channels(); }
  int height() const { return kernel_.height(); }
  int width() const { return kernel_.width(); }

  /// Content hash of shape and kernel bits, as 16 hex digits.
  std::string id() const;

  /// Throws unless every channel sums to 1 within 1e-6.
  void require_normalized(const char* what) const;

 private:
  img::Image kernel_;
  bool normalized_ = false;
  PsfProvenance provenance_ = PsfProvenance::kSynthetic;
};

/// Registry of PSFs keyed by content hash, so captures can name their PSF exactly.
class PsfRegistry {
 public:
  const std::string& add(const Psf& psf);
  const Psf& resolve(const std::string& id) const;
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, Psf> entries_;
};

Psf psf_to_grayscale(const Psf& psf);

/// Values >= threshold * max become 1, others 0 (per channel), then renormalized.
Psf psf_binarize(const Psf& psf, double threshold = 0.1);

/// Center crop to new_h × new_w (each >= 3), then renormalized.
Psf psf_crop(const Psf& psf, int new_h, int new_w);

struct PsfStats {
  double sum = 0.0;
  double max = 0.0;
  double spectral_min = 0.0;  // min |H(w)| over the kernel's own DFT grid, all channels
};

PsfStats inspect_psf(const Psf& psf);

/// Minimum spectral magnitude of a single kernel plane on an FFT grid.
double spectral_min_magnitude(const img::Image& kernel_plane, const img::ConvGrid& grid,
                              img::Boundary mode);

/// Seeded pseudo-random caustic pattern: thin bright curves and dots on a
/// small uniform floor (1e-3 of the peak), sum-normalized. A centered impulse
/// is blended in until the spectrum on the size×size circular grid has no
/// magnitude below `spectral_floor`. With `rgb`, each channel is a slightly
/// scaled copy of the pattern, mimicking wavelength dispersion.
Psf synthetic_caustic_psf(int size, std::uint64_t seed, bool rgb = false,
                          double spectral_floor = 1e-3);

}  // namespace lensnvs::lensless
