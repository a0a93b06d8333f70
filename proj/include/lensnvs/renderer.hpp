#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lensnvs/geometry.hpp"
#include "lensnvs/image.hpp"
#include "lensnvs/ops.hpp"
#include "lensnvs/params.hpp"

namespace lensnvs::render {

/// Architecture of the epipolar attention renderer.
struct RendererConfig {
  int feature_dim = 32;
  int pyramid_levels = 3;
  int heads = 1;
  int view_depth = 2;  // transformer blocks across source views
  int ray_depth = 2;   // transformer blocks along the ray
  int points_per_ray = 192;
  int source_views = 10;
  int direction_frequencies = 4;
  int depth_frequencies = 4;
  geom::DepthSampling sampling = geom::DepthSampling::kUniformDisparity;

  void validate() const;
  /// Number of per-source scalar cues appended to the sampled features.
  int token_cues() const { return 9 + 2 * direction_frequencies; }

  /// key=value lines, used as checkpoint metadata.
  std::string to_text() const;
  static RendererConfig from_text(const std::string& text);
};

/// Feature maps at full, 1/2, 1/4, ... resolution, each [d, ceil(H/2^l), ceil(W/2^l)].
struct FeaturePyramid {
  std::vector<nn::Tensor> levels;
};

/// A posed source view: the coarse (deconvolved) estimate and its features.
struct CameraView {
  geom::Camera camera;
  img::Image image;
  std::optional<FeaturePyramid> features;
};

struct ViewAggregation {
  nn::Tensor features;                // [P_valid, d], rows for valid points in order
  std::vector<std::uint8_t> valid;    // one bit per input point
  std::vector<double> pooled_weights;  // [P_valid, heads, N] source weights
};

struct RenderOutput {
  nn::Tensor colors;                // [R, 3]; zero rows for invalid rays
  std::vector<std::uint8_t> valid;  // one bit per ray
};

/// Feature extraction, cross-view aggregation at each ray sample and
/// attention pooling along the ray. Parameters live in a ParamStore shared
/// with the optimizer; the renderer only reads them.
class Renderer {
 public:
  /// Binds to `store`, which must already hold this config's parameters.
  Renderer(RendererConfig config, const nn::ParamStore& store);

  /// Registers all parameters (Xavier init from `seed`) in an empty store.
  static void init_parameters(const RendererConfig& config, nn::ParamStore& store, std::uint64_t seed);

  const RendererConfig& config() const { return config_; }

  /// Convolutional pyramid over a 3-channel image.
  FeaturePyramid extract_features(const img::Image& image) const;

  /// Fills in `features` for every view that lacks them.
  void attach_features(std::span<CameraView> views) const;

  /// Cross-view aggregation for a batch of world points, each seen along
  /// `ray_dirs[p]`. Sources that do not see a point are masked; points seen
  /// by no source are reported invalid and get no row.
  ViewAggregation view_aggregate(std::span<const geom::Vec3> points, std::span<const geom::Vec3> ray_dirs,
                                 std::span<const CameraView> sources) const;

  /// Per-ray color from point features [R, K, d] with normalized depths
  /// t_norm (R*K values in [0, 1]) and point validity (R*K bits, empty = all).
  /// Every ray needs at least one valid point. Returns [R, 3] in (0, 1).
  nn::Tensor point_aggregate(const nn::Tensor& point_features, std::span<const double> t_norm,
                             nn::Mask valid = {}) const;

  /// Samples points_per_ray points per ray (jittered if `jitter` is given),
  /// aggregates across sources, then along each ray. Sources must carry
  /// features (see attach_features).
  RenderOutput render_rays(std::span<const geom::Ray> rays, std::span<const CameraView> sources,
                           Rng* jitter = nullptr) const;

  /// Renders every pixel of `target` without recording gradients. Invalid
  /// pixels are black. `batch` only bounds memory use.
  img::Image render_image(const geom::Camera& target, std::span<CameraView> sources, double near, double far,
                          int batch = 1024) const;

 private:
  nn::Tensor transformer_block(const nn::Tensor& x, nn::Mask mask, const std::string& prefix) const;
  nn::Tensor pooled_attention(const nn::Tensor& x, nn::Mask mask, const std::string& prefix,
                              std::vector<double>* weights) const;
  const nn::Tensor& param(const std::string& name) const { return store_->get(name); }

  RendererConfig config_;
  const nn::ParamStore* store_;
};

/// sin/cos(2^f * pi * x) for f in [0, frequencies).
void sinusoidal_encoding(double x, int frequencies, std::span<double> out);

/// Normalized position of depth t in [near, far] under `mode`'s parameterization.
double normalized_depth(double t, double near, double far, geom::DepthSampling mode);

}  // namespace lensnvs::render
