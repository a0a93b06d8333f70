#include "lensnvs/losses.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "lensnvs/random.hpp"

namespace lensnvs::train {

using nn::Tensor;

Tensor mse_loss(const Tensor& pred, std::span<const double> gt, nn::Mask valid) {
  return nn::masked_mse(pred, gt, valid);
}

FilterBank::FilterBank(std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  int in = 3;
  for (int l = 0; l < kLevels; ++l) {
    const int fan_in = in * 9;
    const double scale = std::sqrt(2.0 / fan_in);
    std::vector<double> w(static_cast<std::size_t>(kChannels) * fan_in);
    for (double& v : w) v = scale * normal(rng);
    weights_[l] = Tensor::constant({kChannels, in, 3, 3}, std::move(w));
    biases_[l] = Tensor::zeros({kChannels});
    in = kChannels;
  }
}

std::vector<Tensor> FilterBank::features(const Tensor& patch) const {
  if (patch.rank() != 3 || patch.dim(0) != 3) {
    throw std::invalid_argument("FilterBank: expected a [3, H, W] patch, got " + nn::shape_string(patch.shape()));
  }
  if (patch.dim(1) < kMinPatch || patch.dim(2) < kMinPatch) {
    throw std::invalid_argument("perceptual loss needs patches of at least 16x16, got " +
                                std::to_string(patch.dim(1)) + "x" + std::to_string(patch.dim(2)));
  }
  ++evaluations_;
  std::vector<Tensor> out;
  Tensor x = patch;
  for (int l = 0; l < kLevels; ++l) {
    x = nn::gelu(nn::conv2d(x, weights_[l], biases_[l], l == 0 ? 1 : 2, 1));
    out.push_back(x);
  }
  return out;
}

Tensor perceptual_loss(const Tensor& pred, const Tensor& gt, const FilterBank& bank,
                       std::span<const double> level_weights) {
  if (pred.shape() != gt.shape()) {
    throw std::invalid_argument("perceptual_loss: shape mismatch " + nn::shape_string(pred.shape()) + " vs " +
                                nn::shape_string(gt.shape()));
  }
  if (level_weights.size() != FilterBank::kLevels) {
    throw std::invalid_argument("perceptual_loss: need one weight per filter-bank level");
  }
  const auto fp = bank.features(pred);
  const auto fg = bank.features(gt);
  Tensor total;
  for (int l = 0; l < FilterBank::kLevels; ++l) {
    if (!(level_weights[l] >= 0.0)) throw std::invalid_argument("perceptual_loss: level weights must be >= 0");
    const Tensor d = nn::sub(fp[l], fg[l]);
    const Tensor term = nn::scale(nn::mean(nn::mul(d, d)), level_weights[l]);
    total = total.defined() ? nn::add(total, term) : term;
  }
  return total;
}

}  // namespace lensnvs::train
