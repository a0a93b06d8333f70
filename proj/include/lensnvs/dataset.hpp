#pragma once

#include <cstdint>

#include "lensnvs/convolve.hpp"
#include "lensnvs/lensless.hpp"
#include "lensnvs/psf.hpp"
#include "lensnvs/scene.hpp"

namespace lensnvs::data {

struct SynthesisOptions {
  double snr_db = lensless::kDefaultSnrDb;  // img::kNoNoise for the noise-free ablation
  std::uint64_t seed = 0;                   // view i uses noise seed substream(seed, "noise", i)
  bool grayscale = true;                    // collapse an RGB PSF to one channel first
  double k = lensless::kDefaultWienerK;
  img::Boundary boundary = img::Boundary::kZeroPadLinear;
};

/// Simulates a capture of every view and its Wiener coarse estimate. Both are
/// rounded to float32 so what is written to disk is exactly what was made;
/// the coarse estimate is computed from the rounded capture.
Scene synthesize_lensless_dataset(const Scene& scene, const lensless::Psf& psf, const SynthesisOptions& options);

/// Noise seed of view `index`.
std::uint64_t view_noise_seed(std::uint64_t seed, std::size_t index);

/// Manifest keys describing a synthesis run.
Manifest synthesis_manifest(const lensless::Psf& psf, const SynthesisOptions& options);

/// Exact decimal text of a double (round-trips through std::stod).
std::string format_double(double v);

}  // namespace lensnvs::data
