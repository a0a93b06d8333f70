#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "lensnvs/dataset.hpp"
#include "lensnvs/procedural.hpp"
#include "lensnvs/trainer.hpp"
#include "test_support.hpp"

namespace lensnvs::train {
namespace {

render::RendererConfig tiny_model() {
  render::RendererConfig c;
  c.feature_dim = 8;
  c.pyramid_levels = 2;
  c.view_depth = 1;
  c.ray_depth = 1;
  c.points_per_ray = 6;
  c.source_views = 8;
  return c;
}

data::Scene lensless_scene(int views, std::uint64_t seed) {
  data::ProceduralSpec spec;
  spec.width = spec.height = 32;
  spec.focal = 32.0;
  spec.views = views;
  const auto scene = data::generate_procedural_scene(spec, seed);
  data::SynthesisOptions opts;
  opts.seed = seed;
  return data::synthesize_lensless_dataset(scene, lensless::synthetic_caustic_psf(7, 1), opts);
}

TrainConfig small_config() {
  TrainConfig c;
  c.rays = 2 * 256 + 64;
  c.steps = 4;
  c.lr = 1e-3;
  c.seed = 3;
  return c;
}

nn::Tensor colors(const std::vector<double>& v) {
  return nn::Tensor::constant({static_cast<std::int64_t>(v.size() / 3), 3}, v);
}

TEST(Mse, Examples) {
  const std::vector<double> gt = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  EXPECT_DOUBLE_EQ(mse_loss(colors(gt), gt).item(), 0.0);
  std::vector<double> off = gt;
  for (double& x : off) x += 0.1;
  EXPECT_NEAR(mse_loss(colors(off), gt).item(), 0.01, 1e-15);
  // Masked rows drop out of numerator and denominator.
  off[0] += 1.0;
  const std::vector<std::uint8_t> mask = {0, 1};
  EXPECT_NEAR(mse_loss(colors(off), gt, mask).item(), 0.01, 1e-15);
  EXPECT_THROW(mse_loss(colors(gt), std::vector<double>(3, 0.0)), std::invalid_argument);
}

TEST(Mse, MatchesDirectSum) {
  const auto a = testing::random_image(1, 40, 3, 1);
  const auto b = testing::random_image(1, 40, 3, 2);
  std::vector<double> pa(a.data().begin(), a.data().end()), pb(b.data().begin(), b.data().end());
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) s += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  EXPECT_NEAR(mse_loss(colors(pa), pb).item(), s / pa.size(), 1e-14);
}

TEST(Perceptual, ZeroLinearAndSizeChecked) {
  const FilterBank bank;
  const auto gt = testing::random_image(1, 3 * 256, 1, 4);
  const auto pr = testing::random_image(1, 3 * 256, 1, 5);
  const auto g = nn::Tensor::constant({3, 16, 16}, std::vector<double>(gt.data().begin(), gt.data().end()));
  const auto p = nn::Tensor::constant({3, 16, 16}, std::vector<double>(pr.data().begin(), pr.data().end()));
  EXPECT_DOUBLE_EQ(perceptual_loss(g, g, bank).item(), 0.0);
  const double base = perceptual_loss(p, g, bank).item();
  EXPECT_GT(base, 0.0);
  const std::array<double, 3> twice{2.0, 2.0, 2.0};
  EXPECT_NEAR(perceptual_loss(p, g, bank, twice).item(), 2.0 * base, 1e-12 * base);
  // Levels add up.
  double parts = 0.0;
  for (int l = 0; l < 3; ++l) {
    std::array<double, 3> one{};
    one[l] = 1.0;
    parts += perceptual_loss(p, g, bank, one).item();
  }
  EXPECT_NEAR(parts, base, 1e-12);
  const auto small = nn::Tensor::constant({3, 15, 15}, std::vector<double>(3 * 225, 0.5));
  EXPECT_THROW(perceptual_loss(small, small, bank), std::invalid_argument);
  // Seeded bank is reproducible.
  EXPECT_EQ(perceptual_loss(p, g, FilterBank()).item(), base);
}

TEST(Sampling, PatchesPlusRemainder) {
  Rng rng(1);
  const auto sel = sample_ray_pixels(32, 32, 576, 16, true, rng);
  EXPECT_EQ(sel.patches, 2);
  ASSERT_EQ(sel.pixels.size(), 576u);
  for (int p = 0; p < 2; ++p) {
    const auto& first = sel.pixels[p * 256];
    for (int i = 0; i < 256; ++i) {
      EXPECT_EQ(sel.pixels[p * 256 + i].x, first.x + i % 16);
      EXPECT_EQ(sel.pixels[p * 256 + i].y, first.y + i / 16);
    }
  }
  for (const auto& px : sel.pixels) {
    EXPECT_GE(px.x, 0.0);
    EXPECT_LT(px.x, 32.0);
  }
  const auto plain = sample_ray_pixels(32, 32, 100, 16, false, rng);
  EXPECT_EQ(plain.patches, 0);
  EXPECT_EQ(plain.pixels.size(), 100u);
  EXPECT_THROW(sample_ray_pixels(32, 32, 200, 16, true, rng), std::invalid_argument);
  EXPECT_THROW(sample_ray_pixels(12, 12, 576, 16, true, rng), std::invalid_argument);
}

TEST(Config, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.rays, 576);
  EXPECT_DOUBLE_EQ(c.lambda, 0.4);
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.min_sources = 13;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

class TrainerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { scene_ = new data::Scene(lensless_scene(16, 2)); }
  static void TearDownTestSuite() { delete scene_; }
  static data::Scene* scene_;

  nn::ParamStore fresh_store(std::uint64_t seed = 1) const {
    nn::ParamStore s;
    render::Renderer::init_parameters(tiny_model(), s, seed);
    return s;
  }
};
data::Scene* TrainerTest::scene_ = nullptr;

TEST_F(TrainerTest, RejectsScenesWithoutCoarse) {
  data::ProceduralSpec spec;
  spec.width = spec.height = 32;
  spec.focal = 32.0;
  auto store = fresh_store();
  EXPECT_THROW(Trainer({data::generate_procedural_scene(spec, 1)}, small_config(), tiny_model(), store),
               std::invalid_argument);
}

TEST_F(TrainerTest, BatchesDrawSourcesFromTrainingViews) {
  auto store = fresh_store();
  Trainer t({*scene_}, small_config(), tiny_model(), store);
  for (int i = 0; i < 20; ++i) {
    const Batch b = t.next_batch();
    EXPECT_FALSE(data::is_validation_view(b.target));
    EXPECT_GE(b.sources.size(), 8u);
    EXPECT_LE(b.sources.size(), 12u);
    std::set<std::size_t> uniq(b.sources.begin(), b.sources.end());
    EXPECT_EQ(uniq.size(), b.sources.size());
    EXPECT_EQ(uniq.count(b.target), 0u);
    for (std::size_t s : b.sources) EXPECT_FALSE(data::is_validation_view(s));
    EXPECT_EQ(b.pixels.patches, 2);
  }
}

TEST_F(TrainerTest, TotalIsMsePlusWeightedPerceptual) {
  auto store = fresh_store();
  TrainConfig c = small_config();
  c.lambda = 0.7;
  Trainer t({*scene_}, c, tiny_model(), store);
  const auto [report, loss] = t.loss_on(t.next_batch());
  EXPECT_GT(report.perceptual, 0.0);
  EXPECT_NEAR(report.total, report.mse + 0.7 * report.perceptual, 1e-12);
  EXPECT_DOUBLE_EQ(loss.item(), report.total);
}

TEST_F(TrainerTest, ZeroLambdaSkipsFilterBank) {
  auto store = fresh_store();
  TrainConfig c = small_config();
  c.lambda = 0.0;
  c.rays = 100;
  Trainer t({*scene_}, c, tiny_model(), store);
  for (int i = 0; i < 3; ++i) {
    const auto r = t.step();
    EXPECT_EQ(r.perceptual, 0.0);
    EXPECT_EQ(r.total, r.mse);
  }
  EXPECT_EQ(t.filter_bank().evaluations(), 0u);
}

TEST_F(TrainerTest, FrozenBatchLossDecreases) {
  auto store = fresh_store();
  Trainer t({*scene_}, small_config(), tiny_model(), store);
  const Batch b = t.next_batch();
  const double first = t.loss_on(b).first.total;
  nn::AdamOptions opts;
  opts.lr = 3e-3;
  double last = first;
  for (int i = 0; i < 50; ++i) {
    store.zero_grad();
    auto [rep, loss] = t.loss_on(b);
    nn::backward(loss);
    nn::adam_step(store, opts);
    last = rep.total;
  }
  last = t.loss_on(b).first.total;
  EXPECT_LT(last, 0.8 * first);
}

TEST_F(TrainerTest, RunIsDeterministicAndLogs) {
  testing::TempDir dir("train_log");
  auto a = fresh_store();
  auto b = fresh_store();
  TrainConfig c = small_config();
  c.log_interval = 2;
  TrainHooks hooks;
  hooks.csv_path = dir / "log.csv";
  const auto rows = Trainer({*scene_}, c, tiny_model(), a).run(hooks);
  Trainer({*scene_}, c, tiny_model(), b).run();
  for (const auto& name : a.names()) {
    const auto va = a.get(name).values();
    const auto vb = b.get(name).values();
    ASSERT_TRUE(std::equal(va.begin(), va.end(), vb.begin())) << name;
  }
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows.back().step, 4);
  EXPECT_TRUE(std::isfinite(rows.back().val_psnr));
  std::ifstream in(dir / "log.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,mse,perceptual,total,val_psnr,val_ssim");
}

TEST_F(TrainerTest, NonFiniteLossDumpsAndThrows) {
  testing::TempDir dir("train_nan");
  auto store = fresh_store();
  const std::string victim = store.names().front();
  for (double& v : store.get(victim).mutable_values()) v = std::nan("");
  Trainer t({*scene_}, small_config(), tiny_model(), store);
  TrainHooks hooks;
  hooks.dump_dir = dir.path();
  EXPECT_THROW(t.run(hooks), std::runtime_error);
  std::ifstream in(dir / "nan_dump_step0.txt");
  ASSERT_TRUE(in.good());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find(victim), std::string::npos);
}

TEST_F(TrainerTest, FinetuneZeroStepsAndDeterminism) {
  auto base = fresh_store();
  auto copy = fresh_store();
  TrainConfig c = small_config();
  c.steps = 0;
  EXPECT_TRUE(finetune(*scene_, c, tiny_model(), copy).empty());
  for (const auto& name : base.names()) {
    const auto va = base.get(name).values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), copy.get(name).values().begin()));
  }
  c.steps = 2;
  auto x = fresh_store();
  auto y = fresh_store();
  finetune(*scene_, c, tiny_model(), x);
  finetune(*scene_, c, tiny_model(), y);
  bool moved = false;
  for (const auto& name : x.names()) {
    const auto vx = x.get(name).values();
    EXPECT_TRUE(std::equal(vx.begin(), vx.end(), y.get(name).values().begin()));
    moved = moved || !std::equal(vx.begin(), vx.end(), base.get(name).values().begin());
  }
  EXPECT_TRUE(moved);
}

TEST_F(TrainerTest, EvaluateViewScoresCoarseDirectly) {
  auto store = fresh_store();
  const render::Renderer r(tiny_model(), store);
  const auto e = evaluate_view(r, *scene_, 0, 8);
  const auto direct = img::evaluate(*scene_->views[0].coarse, scene_->views[0].gt);
  EXPECT_EQ(e.coarse.psnr, direct.psnr);
  EXPECT_EQ(e.coarse.ssim, direct.ssim);
  EXPECT_EQ(e.image.width(), 32);
  EXPECT_EQ(e.render.psnr, img::psnr(e.image, scene_->views[0].gt));
  EXPECT_THROW(evaluate_view(r, *scene_, 99, 8), std::out_of_range);
}

}  // namespace
}  // namespace lensnvs::train
