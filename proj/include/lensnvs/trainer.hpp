#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "lensnvs/losses.hpp"
#include "lensnvs/metrics.hpp"
#include "lensnvs/params.hpp"
#include "lensnvs/renderer.hpp"
#include "lensnvs/scene.hpp"

namespace lensnvs::train {

struct TrainConfig {
  double lambda = 0.4;
  double lr = 5e-4;
  std::int64_t steps = 1000;
  int rays = 576;
  std::uint64_t seed = 0;
  double snr_db = 40.0;  // used when captures are synthesized for training
  bool grayscale = true;
  int min_sources = 8;
  int max_sources = 12;
  int patch = 16;                  // side of the square ray patches for the perceptual term
  std::int64_t log_interval = 10;  // loss rows in the CSV log
  std::int64_t val_interval = 0;   // 0: validate only after the last step

  void validate() const;
};

struct LossReport {
  double mse = 0.0;
  double perceptual = 0.0;
  double total = 0.0;
  std::int64_t step = 0;
};

struct LogRow {
  std::int64_t step = 0;
  double mse = 0.0;
  double perceptual = 0.0;
  double total = 0.0;
  double val_psnr = std::numeric_limits<double>::quiet_NaN();
  double val_ssim = std::numeric_limits<double>::quiet_NaN();
};

/// Pixels to supervise in one step. The first `patches` * patch^2 pixels form
/// square patches (row-major within each patch); the rest are independent.
struct RaySelection {
  std::vector<geom::PixelCoord> pixels;
  int patches = 0;
  int patch = 0;
};

/// With the perceptual term on, as many whole patches as fit in `rays` plus
/// random remainder pixels; otherwise `rays` independent pixels. Throws if
/// patches are required but `rays` < patch^2 or the image is smaller than a patch.
RaySelection sample_ray_pixels(int width, int height, int rays, int patch, bool need_patches, Rng& rng);

/// Everything one step trains on; reproducible from its fields.
struct Batch {
  std::size_t scene = 0;
  std::size_t target = 0;
  std::vector<std::size_t> sources;
  RaySelection pixels;
  std::uint64_t jitter_seed = 0;  // 0: bin-center samples
};

struct ViewEval {
  img::MetricReport render;
  img::MetricReport coarse;  // the target's own Wiener estimate against its ground truth
  img::Image image;
};

/// Renders scene view `target` from the `n_sources` nearest training views
/// (validation views never serve as sources) and scores it.
ViewEval evaluate_view(const render::Renderer& renderer, const data::Scene& scene, std::size_t target,
                       int n_sources);

/// Mean render/coarse metrics over the validation views of `scene`.
ViewEval evaluate_validation(const render::Renderer& renderer, const data::Scene& scene, int n_sources);

struct TrainHooks {
  std::function<void(const LogRow&)> on_log;
  std::optional<std::filesystem::path> csv_path;
  std::filesystem::path dump_dir = ".";  // NaN diagnostics go here
};

/// The optimization loop over lensless scenes (each view needs a coarse
/// estimate). Parameters live in `store`, which must match `model`.
class Trainer {
 public:
  Trainer(std::vector<data::Scene> scenes, TrainConfig config, render::RendererConfig model, nn::ParamStore& store);

  const TrainConfig& config() const { return config_; }
  const render::Renderer& renderer() const { return renderer_; }
  const std::vector<data::Scene>& scenes() const { return scenes_; }

  /// Draws the next batch from the training stream.
  Batch next_batch();

  /// Forward pass and loss for `batch`; gradients are recorded unless a
  /// NoGradGuard is active.
  std::pair<LossReport, nn::Tensor> loss_on(const Batch& batch) const;

  /// One full step: batch, loss, backward, Adam with the decayed rate.
  /// A non-finite loss writes a diagnostic dump and throws.
  LossReport step();

  /// Runs the remaining steps; returns the log rows.
  std::vector<LogRow> run(const TrainHooks& hooks = {});

  std::int64_t steps_done() const { return steps_done_; }
  const FilterBank& filter_bank() const { return bank_; }

 private:
  [[noreturn]] void abort_on_nan(const Batch& batch, const LossReport& report) const;

  std::vector<data::Scene> scenes_;
  TrainConfig config_;
  nn::ParamStore* store_;
  render::Renderer renderer_;
  FilterBank bank_;
  Rng rng_;
  std::int64_t steps_done_ = 0;
  std::filesystem::path dump_dir_ = ".";
};

/// Scene-specific finetuning: the training loop on one scene with the
/// learning rate scaled by 0.1. Zero steps leaves `store` untouched.
std::vector<LogRow> finetune(const data::Scene& scene, TrainConfig config, const render::RendererConfig& model,
                             nn::ParamStore& store, const TrainHooks& hooks = {});

/// Checkpoint metadata text for a model (renderer config lines).
std::string checkpoint_metadata(const render::RendererConfig& model);

}  // namespace lensnvs::train
