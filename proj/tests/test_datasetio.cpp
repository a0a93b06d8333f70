#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <Eigen/LU>

#include "lensnvs/dataset.hpp"
#include "lensnvs/image_io.hpp"
#include "lensnvs/procedural.hpp"
#include "test_support.hpp"

namespace lensnvs::data {
namespace {

using geom::Vec3;

ProceduralSpec small_spec(int views = 6) {
  ProceduralSpec s;
  s.width = 24;
  s.height = 20;
  s.focal = 24.0;
  s.views = views;
  return s;
}

bool same(const img::Image& a, const img::Image& b) {
  return a.height() == b.height() && a.width() == b.width() && a.channels() == b.channels() &&
         std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

TEST(Procedural, SameSeedSameScene) {
  const Scene a = generate_procedural_scene(small_spec(), 5);
  const Scene b = generate_procedural_scene(small_spec(), 5);
  const Scene c = generate_procedural_scene(small_spec(), 6);
  ASSERT_EQ(a.views.size(), 6u);
  for (std::size_t i = 0; i < a.views.size(); ++i) EXPECT_TRUE(same(a.views[i].gt, b.views[i].gt));
  EXPECT_FALSE(same(a.views[0].gt, c.views[0].gt));
  EXPECT_GT(a.near, 0.0);
  EXPECT_LT(a.near, a.far);
  for (const auto& v : a.views) {
    EXPECT_GE(v.gt.min(), 0.05 - 1e-12);
    EXPECT_LE(v.gt.max(), 0.95 + 1e-12);
  }
}

TEST(Procedural, RingPosesLookAtTarget) {
  const auto poses = camera_ring(12, 0.5, 4.0);
  ASSERT_EQ(poses.size(), 12u);
  for (const auto& p : poses) {
    const geom::Mat3 r = p.rotation();
    EXPECT_LT((r.transpose() * r - geom::Mat3::Identity()).norm(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
    EXPECT_NEAR(p.center().norm(), 0.5, 1e-12);
    EXPECT_NEAR(p.center().z(), 0.0, 1e-12);
    // The optical axis (-z in camera) passes through the target.
    const Vec3 axis = -(r.col(2));
    const Vec3 to_target = (Vec3(0, 0, -4) - p.center()).normalized();
    EXPECT_LT((axis - to_target).norm(), 1e-12);
  }
  EXPECT_THROW(camera_ring(1, 0.5, 4.0), std::invalid_argument);
  EXPECT_THROW(camera_ring(8, 0.0, 4.0), std::invalid_argument);
  EXPECT_THROW(camera_ring(8, 0.5, -1.0), std::invalid_argument);
}

TEST(Procedural, PlaneHitsReprojectConsistently) {
  Texture tex;
  tex.kind = Texture::Kind::kSine;
  const ProceduralWorld world(6.0, tex, {});
  const auto poses = camera_ring(8, 0.3, 4.0);
  const auto k = geom::Intrinsics::centered(32, 32, 32.0);
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.0, 31.0);
  double worst = 0.0;
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const geom::Camera a{k, poses[trial % 8]};
    const geom::Camera b{k, poses[(trial + 3) % 8]};
    const auto ray = geom::ray_for_pixel(a, {u(rng), u(rng)}, 0.1, 100.0);
    const auto hit = world.intersect(ray.origin, ray.direction);
    ASSERT_TRUE(hit.has_value());
    const Vec3 x = ray.origin + hit->t * ray.direction;
    EXPECT_NEAR(x.z(), -6.0, 1e-9);
    const auto proj = geom::project(x, b);
    ASSERT_FALSE(proj.behind);
    if (proj.px.x < 0 || proj.px.y < 0 || proj.px.x > 31 || proj.px.y > 31) continue;
    ++checked;
    const auto back = geom::ray_for_pixel(b, proj.px, 0.1, 100.0);
    const auto hit_b = world.intersect(back.origin, back.direction);
    ASSERT_TRUE(hit_b.has_value());
    const Vec3 xb = back.origin + hit_b->t * back.direction;
    worst = std::max(worst, (xb - x).norm());
    EXPECT_LT((hit_b->color - hit->color).norm(), 1e-6);
  }
  EXPECT_GT(checked, 100);
  EXPECT_LT(worst, 1e-6);
}

TEST(Procedural, RejectsBadSpecs) {
  ProceduralSpec s = small_spec();
  s.min_box_depth = 7.0;
  EXPECT_THROW(generate_procedural_scene(s, 1), std::invalid_argument);
  s = small_spec();
  s.ring_radius = 0.0;
  EXPECT_THROW(generate_procedural_scene(s, 1), std::invalid_argument);
  s = small_spec(1);
  EXPECT_THROW(generate_procedural_scene(s, 1), std::invalid_argument);
}

TEST(Split, EveryEighthViewHeldOut) {
  EXPECT_EQ(validation_views(17), (std::vector<std::size_t>{0, 8, 16}));
  EXPECT_EQ(training_views(10), (std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 9}));
  EXPECT_TRUE(is_validation_view(24));
  EXPECT_FALSE(is_validation_view(25));
}

TEST(Scene, Validation) {
  Scene s = generate_procedural_scene(small_spec(), 1);
  EXPECT_NO_THROW(s.validate());
  Scene bad = s;
  bad.views.resize(1);
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = s;
  bad.far = bad.near;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = s;
  bad.views[2].gt = img::Image(5, 5, 3);
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Manifest, RoundTripAndErrors) {
  testing::TempDir dir("manifest");
  Manifest m{{"a", "1"}, {"psf_id", "caustic-7"}, {"snr_db", "40"}};
  write_manifest(dir / "m.txt", m);
  EXPECT_EQ(read_manifest(dir / "m.txt"), m);
  {
    std::ofstream out(dir / "bad.txt");
    out << "just words\n";
  }
  EXPECT_THROW(read_manifest(dir / "bad.txt"), std::runtime_error);
  EXPECT_THROW(read_manifest(dir / "missing.txt"), std::runtime_error);
}

TEST(FormatDouble, RoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 4.5e-4, 40.0, -2.5e-300}) EXPECT_EQ(std::stod(format_double(v)), v);
  EXPECT_EQ(format_double(img::kNoNoise), "inf");
}

class Synthesis : public ::testing::Test {
 protected:
  Scene scene = generate_procedural_scene(small_spec(), 3);
  lensless::Psf psf = lensless::synthetic_caustic_psf(7, 2);
};

TEST_F(Synthesis, Deterministic) {
  SynthesisOptions o;
  o.seed = 9;
  const Scene a = synthesize_lensless_dataset(scene, psf, o);
  const Scene b = synthesize_lensless_dataset(scene, psf, o);
  o.seed = 10;
  const Scene c = synthesize_lensless_dataset(scene, psf, o);
  ASSERT_TRUE(a.has_lensless());
  for (std::size_t i = 0; i < a.views.size(); ++i) {
    EXPECT_TRUE(same(a.views[i].capture->raster, b.views[i].capture->raster));
    EXPECT_TRUE(same(*a.views[i].coarse, *b.views[i].coarse));
    EXPECT_FALSE(same(a.views[i].capture->raster, c.views[i].capture->raster));
  }
  // Views get distinct noise.
  EXPECT_NE(view_noise_seed(9, 0), view_noise_seed(9, 1));
  const auto m = synthesis_manifest(psf, o);
  EXPECT_EQ(m.at("seed"), "10");
  EXPECT_EQ(m.at("psf_id"), psf.id());
}

TEST_F(Synthesis, StoredArtifactsAreFloat32Exact) {
  const Scene s = synthesize_lensless_dataset(scene, psf, {});
  for (const auto& v : s.views) {
    EXPECT_TRUE(same(v.capture->raster, img::quantize_float32(v.capture->raster)));
    EXPECT_TRUE(same(*v.coarse, img::quantize_float32(*v.coarse)));
    EXPECT_EQ(v.capture->raster.height(), 20 + 6);
    EXPECT_EQ(v.capture->raster.width(), 24 + 6);
  }
}

TEST_F(Synthesis, NoiseIsUncorrelatedWithSignal) {
  ProceduralSpec big = small_spec(2);
  big.width = big.height = 96;
  big.focal = 96.0;
  const Scene s = generate_procedural_scene(big, 4);
  SynthesisOptions o;
  o.snr_db = 20.0;
  o.seed = 1;
  const Scene noisy = synthesize_lensless_dataset(s, psf, o);
  const auto clean = lensless::simulate_capture(s.views[0].gt, psf, img::kNoNoise, 0).raster;
  const auto& meas = noisy.views[0].capture->raster;
  double ma = 0.0, mb = 0.0;
  const std::size_t n = clean.data().size();
  for (std::size_t i = 0; i < n; ++i) {
    ma += clean.data()[i] / n;
    mb += (meas.data()[i] - clean.data()[i]) / n;
  }
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = clean.data()[i] - ma;
    const double b = meas.data()[i] - clean.data()[i] - mb;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  EXPECT_LT(std::abs(sab / std::sqrt(saa * sbb)), 0.05);
}

TEST_F(Synthesis, SaveLoadRoundTripAndCoarseRecompute) {
  testing::TempDir dir("scene_io");
  SynthesisOptions o;
  o.seed = 4;
  const Scene s = synthesize_lensless_dataset(scene, psf, o);
  save_scene(dir.path(), s, synthesis_manifest(psf, o));
  const Scene back = load_llff_scene(dir.path());
  ASSERT_EQ(back.views.size(), s.views.size());
  EXPECT_EQ(back.name, s.name);
  EXPECT_EQ(back.layout, SceneLayout::kProcedural);
  EXPECT_NEAR(back.near, s.near, 1e-12 * s.far);
  for (std::size_t i = 0; i < s.views.size(); ++i) {
    const auto& v = back.views[i];
    EXPECT_TRUE(same(v.capture->raster, s.views[i].capture->raster));
    EXPECT_TRUE(same(*v.coarse, *s.views[i].coarse));
    EXPECT_TRUE(same(v.gt, img::quantize_float32(s.views[i].gt)));
    EXPECT_LT((v.camera.pose.rotation() - s.views[i].camera.pose.rotation()).norm(), 1e-12);
    EXPECT_DOUBLE_EQ(v.capture->snr_db, 40.0);
    // The stored coarse estimate is reproducible from the stored capture.
    EXPECT_TRUE(same(img::quantize_float32(lensless::wiener_deconvolve(*v.capture, psf)), *v.coarse));
  }
}

TEST_F(Synthesis, LoaderChecksCounts) {
  testing::TempDir dir("scene_bad");
  save_scene(dir.path(), scene);
  std::filesystem::remove(dir / "gt" / "003.pfm");
  EXPECT_THROW(load_llff_scene(dir.path()), std::runtime_error);
  EXPECT_THROW(load_llff_scene(dir / "nowhere"), std::runtime_error);
}

TEST_F(Synthesis, LlffTwentyViews) {
  testing::TempDir dir("scene20");
  const Scene s = generate_procedural_scene(small_spec(20), 8);
  save_scene(dir.path(), s);
  const Scene back = load_llff_scene(dir.path());
  ASSERT_EQ(back.views.size(), 20u);
  EXPECT_FALSE(back.has_lensless());
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_LT((back.views[i].camera.pose.center() - s.views[i].camera.pose.center()).norm(), 1e-12);
    EXPECT_DOUBLE_EQ(back.views[i].camera.intrinsics.fx, 24.0);
  }
}

}  // namespace
}  // namespace lensnvs::data
