#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lensnvs/ops.hpp"
#include "lensnvs/tensor.hpp"

namespace lensnvs::train {

/// Mean over valid rows of the squared color error; pred is [R, 3].
nn::Tensor mse_loss(const nn::Tensor& pred, std::span<const double> gt, nn::Mask valid = {});

/// Frozen, seeded three-level convolutional filter bank standing in for a
/// pretrained feature network: conv3x3 3->8 (stride 1), then two conv3x3
/// 8->8 with stride 2, each followed by GELU.
class FilterBank {
 public:
  static constexpr int kLevels = 3;
  static constexpr int kChannels = 8;
  static constexpr int kMinPatch = 16;
  static constexpr std::uint64_t kDefaultSeed = 0x5eed;

  explicit FilterBank(std::uint64_t seed = kDefaultSeed);

  /// Feature maps of a [3, H, W] patch.
  std::vector<nn::Tensor> features(const nn::Tensor& patch) const;

  /// Number of times features() has run (for tests of the lambda = 0 path).
  std::uint64_t evaluations() const { return evaluations_; }

 private:
  std::array<nn::Tensor, kLevels> weights_;
  std::array<nn::Tensor, kLevels> biases_;
  mutable std::uint64_t evaluations_ = 0;
};

inline constexpr std::array<double, FilterBank::kLevels> kDefaultLevelWeights{1.0, 1.0, 1.0};

/// sum_l lambda_l * mean((F_l(pred) - F_l(gt))^2) over [3, H, W] patches.
/// Throws if the patch is smaller than 16x16.
nn::Tensor perceptual_loss(const nn::Tensor& pred, const nn::Tensor& gt, const FilterBank& bank,
                           std::span<const double> level_weights = kDefaultLevelWeights);

}  // namespace lensnvs::train
