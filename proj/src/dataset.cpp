#include "lensnvs/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "lensnvs/image_io.hpp"
#include "lensnvs/parallel.hpp"
#include "lensnvs/random.hpp"

namespace lensnvs::data {

std::uint64_t view_noise_seed(std::uint64_t seed, std::size_t index) {
  return substream_seed(seed, "noise", index);
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Scene synthesize_lensless_dataset(const Scene& scene, const lensless::Psf& psf, const SynthesisOptions& options) {
  scene.validate();
  psf.require_normalized("synthesize_lensless_dataset");
  const lensless::Psf used = options.grayscale && psf.channels() == 3 ? lensless::psf_to_grayscale(psf) : psf;
  Scene out = scene;
  const auto n = static_cast<std::ptrdiff_t>(out.views.size());
  std::vector<std::string> errors(out.views.size());
  // Views are independent; each has its own noise substream.
  LENSNVS_PARALLEL_FOR
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      auto& view = out.views[i];
      auto capture = lensless::simulate_capture(view.gt, used, options.snr_db,
                                                view_noise_seed(options.seed, static_cast<std::size_t>(i)),
                                                options.boundary);
      capture.raster = img::quantize_float32(capture.raster);
      view.coarse = img::quantize_float32(lensless::wiener_deconvolve(capture, used, options.k));
      view.capture = std::move(capture);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw std::runtime_error("synthesize_lensless_dataset: " + e);
  }
  return out;
}

Manifest synthesis_manifest(const lensless::Psf& psf, const SynthesisOptions& options) {
  Manifest m;
  m["psf_id"] = (options.grayscale && psf.channels() == 3 ? lensless::psf_to_grayscale(psf) : psf).id();
  m["source_psf_id"] = psf.id();
  m["snr_db"] = format_double(options.snr_db);
  m["seed"] = std::to_string(options.seed);
  m["grayscale"] = options.grayscale ? "true" : "false";
  m["k"] = format_double(options.k);
  m["boundary"] = img::to_string(options.boundary);
  return m;
}

}  // namespace lensnvs::data
