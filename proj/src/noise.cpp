#include "lensnvs/noise.hpp"

#include <cmath>
#include <stdexcept>

#include "lensnvs/random.hpp"

namespace lensnvs::img {
namespace {

double mean_square(std::span<const double> values) {
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return values.empty() ? 0.0 : acc / static_cast<double>(values.size());
}

}  // namespace

double noise_sigma_for_snr(const Image& image, double snr_db) {
  if (std::isnan(snr_db) || snr_db == -kNoNoise) {
    throw std::invalid_argument("add_gaussian_noise: snr_db must be finite or +inf");
  }
  if (snr_db == kNoNoise) return 0.0;
  const double power = mean_square(image.data());
  if (!(power > 0.0)) {
    throw std::invalid_argument("add_gaussian_noise: zero signal power, noise level undefined");
  }
  return std::sqrt(power / std::pow(10.0, snr_db / 10.0));
}

Image add_gaussian_noise(const Image& image, double snr_db, std::uint64_t seed) {
  const double sigma = noise_sigma_for_snr(image, snr_db);
  if (sigma == 0.0) return image;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  Image out = image;
  for (double& v : out.data()) v += normal(rng);
  return out;
}

double measured_snr_db(const Image& clean, const Image& noisy) {
  if (!clean.same_shape(noisy)) throw std::invalid_argument("measured_snr_db: shape mismatch");
  double signal = 0.0;
  double noise = 0.0;
  auto a = clean.data();
  auto b = noisy.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    signal += a[i] * a[i];
    noise += (b[i] - a[i]) * (b[i] - a[i]);
  }
  if (noise == 0.0) return kNoNoise;
  return 10.0 * std::log10(signal / noise);
}

}  // namespace lensnvs::img
