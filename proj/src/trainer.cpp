#include "lensnvs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lensnvs/geometry.hpp"

namespace lensnvs::train {

using nn::Tensor;

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (rays < 1) throw std::invalid_argument("TrainConfig: rays per step must be >= 1");
  if (min_sources < 1 || max_sources < min_sources) {
    throw std::invalid_argument("TrainConfig: need 1 <= min_sources <= max_sources");
  }
  if (patch < FilterBank::kMinPatch) throw std::invalid_argument("TrainConfig: patch must be >= 16");
  if (log_interval < 1 || val_interval < 0) throw std::invalid_argument("TrainConfig: bad log/validation interval");
}

RaySelection sample_ray_pixels(int width, int height, int rays, int patch, bool need_patches, Rng& rng) {
  if (rays < 1) throw std::invalid_argument("sample_ray_pixels: rays must be >= 1");
  RaySelection sel;
  sel.patch = patch;
  if (need_patches) {
    if (rays < patch * patch) {
      throw std::invalid_argument("sample_ray_pixels: perceptual loss needs at least " + std::to_string(patch * patch) +
                                  " rays per step for one " + std::to_string(patch) + "x" + std::to_string(patch) +
                                  " patch");
    }
    if (width < patch || height < patch) throw std::invalid_argument("sample_ray_pixels: image smaller than a patch");
    sel.patches = rays / (patch * patch);
    std::uniform_int_distribution<int> px(0, width - patch);
    std::uniform_int_distribution<int> py(0, height - patch);
    for (int p = 0; p < sel.patches; ++p) {
      const int x0 = px(rng);
      const int y0 = py(rng);
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) sel.pixels.push_back({static_cast<double>(x0 + x), static_cast<double>(y0 + y)});
    }
  }
  std::uniform_int_distribution<int> rx(0, width - 1);
  std::uniform_int_distribution<int> ry(0, height - 1);
  while (static_cast<int>(sel.pixels.size()) < rays) {
    const int x = rx(rng);
    const int y = ry(rng);
    sel.pixels.push_back({static_cast<double>(x), static_cast<double>(y)});
  }
  return sel;
}

namespace {

std::vector<render::CameraView> make_sources(const data::Scene& scene, std::span<const std::size_t> indices) {
  std::vector<render::CameraView> out;
  for (std::size_t i : indices) {
    const auto& v = scene.views.at(i);
    if (!v.coarse) throw std::invalid_argument("scene '" + scene.name + "' has no coarse estimate for view " + std::to_string(i));
    out.push_back({v.camera, *v.coarse, std::nullopt});
  }
  return out;
}

// Nearest `n` training views to `target`, as indices into the scene.
std::vector<std::size_t> nearest_training_sources(const data::Scene& scene, std::size_t target, int n) {
  std::vector<std::size_t> pool;
  std::vector<geom::Camera> cams;
  for (std::size_t i : data::training_views(scene.views.size())) {
    if (i == target) continue;
    pool.push_back(i);
    cams.push_back(scene.views[i].camera);
  }
  n = std::min<int>(n, static_cast<int>(pool.size()));
  const auto picked = geom::select_source_views(scene.views[target].camera.pose, cams, n);
  std::vector<std::size_t> out;
  for (std::size_t p : picked) out.push_back(pool[p]);
  return out;
}

}  // namespace

ViewEval evaluate_view(const render::Renderer& renderer, const data::Scene& scene, std::size_t target,
                       int n_sources) {
  if (target >= scene.views.size()) throw std::out_of_range("evaluate_view: no view " + std::to_string(target));
  const auto& view = scene.views[target];
  if (!view.coarse) throw std::invalid_argument("evaluate_view: scene has no coarse estimates");
  auto sources = make_sources(scene, nearest_training_sources(scene, target, n_sources));
  ViewEval out;
  out.image = renderer.render_image(view.camera, sources, scene.near, scene.far);
  out.render = img::evaluate(out.image, view.gt);
  out.coarse = img::evaluate(*view.coarse, view.gt);
  return out;
}

ViewEval evaluate_validation(const render::Renderer& renderer, const data::Scene& scene, int n_sources) {
  const auto val = data::validation_views(scene.views.size());
  ViewEval mean;
  for (std::size_t i : val) {
    ViewEval e = evaluate_view(renderer, scene, i, n_sources);
    mean.render.psnr += e.render.psnr / val.size();
    mean.render.ssim += e.render.ssim / val.size();
    mean.render.mse += e.render.mse / val.size();
    mean.coarse.psnr += e.coarse.psnr / val.size();
    mean.coarse.ssim += e.coarse.ssim / val.size();
    mean.coarse.mse += e.coarse.mse / val.size();
    if (mean.image.empty()) mean.image = std::move(e.image);
  }
  return mean;
}

std::string checkpoint_metadata(const render::RendererConfig& model) { return model.to_text(); }

Trainer::Trainer(std::vector<data::Scene> scenes, TrainConfig config, render::RendererConfig model,
                 nn::ParamStore& store)
    : scenes_(std::move(scenes)),
      config_(config),
      store_(&store),
      renderer_(model, store),
      rng_(substream_seed(config.seed, "sampling", 0)) {
  config_.validate();
  if (scenes_.empty()) throw std::invalid_argument("Trainer: no scenes");
  for (const auto& s : scenes_) {
    s.validate();
    if (!s.has_lensless()) throw std::invalid_argument("Trainer: scene '" + s.name + "' has no coarse estimates");
    const auto n_train = data::training_views(s.views.size()).size();
    if (n_train < 2 || static_cast<int>(n_train) - 1 < config_.min_sources) {
      throw std::invalid_argument("Trainer: scene '" + s.name + "' has too few training views for " +
                                  std::to_string(config_.min_sources) + " sources");
    }
  }
}

Batch Trainer::next_batch() {
  Batch b;
  b.scene = std::uniform_int_distribution<std::size_t>(0, scenes_.size() - 1)(rng_);
  const auto& scene = scenes_[b.scene];
  const auto train_views = data::training_views(scene.views.size());
  b.target = train_views[std::uniform_int_distribution<std::size_t>(0, train_views.size() - 1)(rng_)];

  std::vector<std::size_t> pool;
  std::vector<geom::Camera> cams;
  for (std::size_t i : train_views) {
    if (i == b.target) continue;
    pool.push_back(i);
    cams.push_back(scene.views[i].camera);
  }
  const int hi = std::min<int>(config_.max_sources, static_cast<int>(pool.size()));
  const int n = std::uniform_int_distribution<int>(config_.min_sources, std::max(config_.min_sources, hi))(rng_);
  for (std::size_t p : geom::select_source_views(scene.views[b.target].camera.pose, cams, n)) {
    b.sources.push_back(pool[p]);
  }
  const auto& k = scene.views[b.target].camera.intrinsics;
  b.pixels = sample_ray_pixels(k.width, k.height, config_.rays, config_.patch, config_.lambda > 0.0, rng_);
  b.jitter_seed = rng_() | 1u;
  return b;
}

std::pair<LossReport, Tensor> Trainer::loss_on(const Batch& batch) const {
  const auto& scene = scenes_.at(batch.scene);
  const auto& target = scene.views.at(batch.target);
  auto sources = make_sources(scene, batch.sources);
  renderer_.attach_features(sources);

  std::vector<geom::Ray> rays;
  std::vector<double> gt;
  rays.reserve(batch.pixels.pixels.size());
  for (const auto& px : batch.pixels.pixels) {
    rays.push_back(geom::ray_for_pixel(target.camera, px, scene.near, scene.far));
    for (int c = 0; c < 3; ++c) gt.push_back(target.gt.at(static_cast<int>(px.y), static_cast<int>(px.x), c));
  }
  Rng jitter(batch.jitter_seed);
  const auto out = renderer_.render_rays(rays, sources, batch.jitter_seed ? &jitter : nullptr);

  LossReport report;
  report.step = steps_done_;
  Tensor loss = mse_loss(out.colors, gt, out.valid);
  report.mse = loss.item();
  if (config_.lambda > 0.0) {
    const int pp = batch.pixels.patch * batch.pixels.patch;
    if (batch.pixels.patches < 1) throw std::invalid_argument("loss_on: perceptual term needs at least one patch");
    Tensor perceptual;
    for (int p = 0; p < batch.pixels.patches; ++p) {
      std::vector<std::int64_t> rows(pp);
      std::vector<double> keep(3 * pp);
      std::vector<double> fill(3 * pp);
      std::vector<double> gt_patch(3 * pp);
      for (int i = 0; i < pp; ++i) {
        const std::size_t r = static_cast<std::size_t>(p) * pp + i;
        rows[i] = static_cast<std::int64_t>(r);
        for (int c = 0; c < 3; ++c) {
          // Channel-major to match the [3, H, W] layout after the transpose.
          keep[c * pp + i] = out.valid[r] ? 1.0 : 0.0;
          fill[c * pp + i] = out.valid[r] ? 0.0 : gt[r * 3 + c];
          gt_patch[c * pp + i] = gt[r * 3 + c];
        }
      }
      // Rays no source sees are pinned to the ground truth so they add nothing.
      Tensor pred = nn::transpose(nn::gather_rows(out.colors, rows));
      pred = nn::add(nn::mul(pred, Tensor::constant({3, pp}, std::move(keep))), Tensor::constant({3, pp}, std::move(fill)));
      const int s = batch.pixels.patch;
      const Tensor term = perceptual_loss(nn::reshape(pred, {3, s, s}), Tensor::constant({3, s, s}, std::move(gt_patch)),
                                          bank_);
      perceptual = perceptual.defined() ? nn::add(perceptual, term) : term;
    }
    perceptual = nn::scale(perceptual, 1.0 / batch.pixels.patches);
    report.perceptual = perceptual.item();
    loss = nn::add(loss, nn::scale(perceptual, config_.lambda));
  }
  report.total = loss.item();
  return {report, loss};
}

void Trainer::abort_on_nan(const Batch& batch, const LossReport& report) const {
  std::filesystem::create_directories(dump_dir_);
  const auto path = dump_dir_ / ("nan_dump_step" + std::to_string(steps_done_) + ".txt");
  std::ofstream out(path);
  out.precision(17);
  out << "step=" << steps_done_ << "\nmse=" << report.mse << "\nperceptual=" << report.perceptual
      << "\ntotal=" << report.total << "\nscene=" << scenes_[batch.scene].name << "\ntarget=" << batch.target
      << "\njitter_seed=" << batch.jitter_seed << "\nsources=";
  for (std::size_t s : batch.sources) out << s << ' ';
  out << "\n# parameter name, min, max, non-finite count\n";
  for (const auto& name : store_->names()) {
    const auto v = store_->get(name).values();
    double lo = INFINITY;
    double hi = -INFINITY;
    std::size_t bad = 0;
    for (double x : v) {
      if (!std::isfinite(x)) {
        ++bad;
        continue;
      }
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    out << name << ' ' << lo << ' ' << hi << ' ' << bad << '\n';
  }
  throw std::runtime_error("non-finite loss at step " + std::to_string(steps_done_) + "; state dumped to " +
                           path.string());
}

LossReport Trainer::step() {
  const Batch batch = next_batch();
  auto [report, loss] = loss_on(batch);
  if (!std::isfinite(report.total)) abort_on_nan(batch, report);
  nn::backward(loss);
  nn::AdamOptions opts;
  opts.lr = nn::decayed_learning_rate(config_.lr, steps_done_, std::max<std::int64_t>(config_.steps, 1));
  nn::adam_step(*store_, opts);
  ++steps_done_;
  report.step = steps_done_;
  return report;
}

std::vector<LogRow> Trainer::run(const TrainHooks& hooks) {
  dump_dir_ = hooks.dump_dir;
  std::optional<std::ofstream> csv;
  if (hooks.csv_path) {
    csv.emplace(*hooks.csv_path, std::ios::trunc);
    if (!*csv) throw std::runtime_error("cannot write " + hooks.csv_path->string());
    *csv << "step,mse,perceptual,total,val_psnr,val_ssim\n";
    csv->precision(9);
  }
  std::vector<LogRow> rows;
  auto emit = [&](const LogRow& row) {
    rows.push_back(row);
    if (csv) {
      *csv << row.step << ',' << row.mse << ',' << row.perceptual << ',' << row.total << ',';
      if (!std::isnan(row.val_psnr)) *csv << row.val_psnr;
      *csv << ',';
      if (!std::isnan(row.val_ssim)) *csv << row.val_ssim;
      *csv << '\n';
      csv->flush();
    }
    if (hooks.on_log) hooks.on_log(row);
  };
  const int val_sources = renderer_.config().source_views;
  while (steps_done_ < config_.steps) {
    const LossReport r = step();
    const bool last = steps_done_ == config_.steps;
    const bool validate = last || (config_.val_interval > 0 && steps_done_ % config_.val_interval == 0);
    if (!validate && steps_done_ % config_.log_interval != 0) continue;
    LogRow row{r.step, r.mse, r.perceptual, r.total};
    if (validate) {
      const ViewEval v = evaluate_validation(renderer_, scenes_.front(), val_sources);
      row.val_psnr = v.render.psnr;
      row.val_ssim = v.render.ssim;
    }
    emit(row);
  }
  return rows;
}

std::vector<LogRow> finetune(const data::Scene& scene, TrainConfig config, const render::RendererConfig& model,
                             nn::ParamStore& store, const TrainHooks& hooks) {
  if (config.steps == 0) return {};
  config.lr *= 0.1;
  Trainer trainer({scene}, config, model, store);
  return trainer.run(hooks);
}

}  // namespace lensnvs::train
