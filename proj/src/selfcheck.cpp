#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>

#include "lensnvs/cli.hpp"
#include "lensnvs/convolve.hpp"
#include "lensnvs/gradcheck.hpp"
#include "lensnvs/lensless.hpp"
#include "lensnvs/metrics.hpp"
#include "lensnvs/ops.hpp"
#include "lensnvs/renderer.hpp"

namespace lensnvs::cli {

using nn::Tensor;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

Tensor random_param(nn::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = nn::numel(shape);
  return Tensor::parameter(std::move(shape), random_values(n, rng, lo, hi));
}

// Random linear functional of an op output, so every output entry matters.
Tensor probe(const Tensor& y, Rng& rng) {
  return nn::sum(nn::mul(y, Tensor::constant(y.shape(), random_values(y.numel(), rng))));
}

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

CheckResult grad_case(const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                      double tol, nn::GradCheckOptions opts = {}) {
  const auto r = nn::check_gradients(f, inputs, opts);
  CheckResult out{name, r.max_rel_error < tol,
                  fmt("max rel error %.3g", r.max_rel_error) + " over " + std::to_string(r.checked) + " entries"};
  if (!out.pass) out.detail += "; worst " + r.worst;
  return out;
}

// Two source views looking at a small textured patch, plus a target camera.
struct TinyRig {
  render::RendererConfig config;
  nn::ParamStore store;
  std::vector<render::CameraView> sources;
  geom::Camera target;
  std::vector<geom::Ray> rays;
};

TinyRig make_tiny_rig(std::uint64_t seed, int n_sources) {
  TinyRig rig;
  rig.config.feature_dim = 8;
  rig.config.pyramid_levels = 2;
  rig.config.heads = 1;
  rig.config.view_depth = 1;
  rig.config.ray_depth = 1;
  rig.config.points_per_ray = 4;
  rig.config.source_views = n_sources;
  render::Renderer::init_parameters(rig.config, rig.store, seed);
  Rng rng(seed + 1);
  const auto intr = geom::Intrinsics::centered(12, 12, 14.0);
  for (int i = 0; i < n_sources; ++i) {
    const double a = 6.283185307179586 * i / n_sources;
    const geom::Vec3 eye(0.3 * std::cos(a), 0.3 * std::sin(a), 0.0);
    img::Image im(12, 12, 3, random_values(12 * 12 * 3, rng, 0.0, 1.0));
    rig.sources.push_back({{intr, geom::Pose::look_at(eye, geom::Vec3(0, 0, -3))}, im, std::nullopt});
  }
  rig.target = {intr, geom::Pose::look_at(geom::Vec3(0.05, -0.02, 0.0), geom::Vec3(0, 0, -3))};
  for (const auto& px : {geom::PixelCoord{5.5, 5.5}, geom::PixelCoord{3.2, 7.9}, geom::PixelCoord{8.4, 4.1}}) {
    rig.rays.push_back(geom::ray_for_pixel(rig.target, px, 2.0, 4.0));
  }
  return rig;
}

}  // namespace

std::vector<CheckResult> gradient_suite() {
  std::vector<CheckResult> out;
  Rng rng(20240607);
  constexpr double kOpTol = 1e-4;
  const std::vector<std::uint8_t> mask3 = {1, 0, 1, 1, 1, 1};  // [2 batch, 3 keys]

  {
    Tensor a = random_param({3, 4}, rng), b = random_param({3, 4}, rng);
    Rng pr(1);
    const Tensor w = Tensor::constant({3, 4}, random_values(12, pr));
    auto lin = [&](const Tensor& y) { return nn::sum(nn::mul(y, w)); };
    out.push_back(grad_case("add", [&] { return lin(nn::add(a, b)); }, {a, b}, kOpTol));
    out.push_back(grad_case("sub", [&] { return lin(nn::sub(a, b)); }, {a, b}, kOpTol));
    out.push_back(grad_case("mul", [&] { return lin(nn::mul(a, b)); }, {a, b}, kOpTol));
    out.push_back(grad_case("scale", [&] { return lin(nn::scale(a, -2.5)); }, {a}, kOpTol));
    out.push_back(grad_case("sum", [&] { return nn::sum(nn::mul(a, a)); }, {a}, kOpTol));
    out.push_back(grad_case("mean", [&] { return nn::mean(nn::mul(a, b)); }, {a, b}, kOpTol));
    out.push_back(grad_case("gelu", [&] { return lin(nn::gelu(a)); }, {a}, kOpTol));
    out.push_back(grad_case("sigmoid", [&] { return lin(nn::sigmoid(a)); }, {a}, kOpTol));
    out.push_back(grad_case("reshape", [&] { return lin(nn::reshape(nn::reshape(a, {2, 6}), {3, 4})); }, {a}, kOpTol));
    out.push_back(grad_case("transpose", [&] { return lin(nn::transpose(nn::transpose(nn::mul(a, a)))); }, {a}, kOpTol));
  }
  {
    Tensor x = random_param({2, 3, 5}, rng), w = random_param({5, 4}, rng), b = random_param({4}, rng);
    Rng pr(2);
    out.push_back(grad_case("linear", [&] { Rng r = pr; return probe(nn::linear(x, w, b), r); }, {x, w, b}, kOpTol));
    Tensor g = random_param({5}, rng, 0.5, 1.5), bb = random_param({5}, rng);
    out.push_back(grad_case("layernorm", [&] { Rng r = pr; return probe(nn::layernorm(x, g, bb), r); }, {x, g, bb}, kOpTol));
    Tensor y = random_param({2, 3, 2}, rng);
    out.push_back(grad_case("concat_last", [&] { Rng r = pr; return probe(nn::gelu(nn::concat_last({x, y})), r); }, {x, y},
                            kOpTol));
    out.push_back(grad_case("masked_mean", [&] { Rng r = pr; return probe(nn::masked_mean(x, mask3), r); }, {x}, kOpTol));
    const std::vector<std::int64_t> idx = {1, -1, 0, 1};
    Tensor m = random_param({3, 4}, rng);
    out.push_back(grad_case("gather_rows", [&] { Rng r = pr; return probe(nn::gather_rows(nn::mul(m, m), idx), r); }, {m},
                            kOpTol));
  }
  {
    Tensor q = random_param({2, 2, 4}, rng), k = random_param({2, 3, 4}, rng), v = random_param({2, 3, 6}, rng);
    Rng pr(3);
    out.push_back(grad_case("attention", [&] { Rng r = pr; return probe(nn::attention(q, k, v, mask3, 2), r); }, {q, k, v},
                            kOpTol));
    Tensor q2 = random_param({2, 4}, rng), k2 = random_param({3, 4}, rng), v2 = random_param({3, 3}, rng);
    const std::vector<std::uint8_t> m = {1, 1, 0};
    out.push_back(grad_case("softmax_attention", [&] { Rng r = pr; return probe(nn::softmax_attention(q2, k2, v2, m), r); },
                            {q2, k2, v2}, kOpTol));
  }
  {
    Tensor fmap = random_param({3, 5, 6}, rng);
    std::vector<geom::BilinearTap> taps = {geom::bilinear_tap({1.3, 2.7}, 6, 5), geom::bilinear_tap({5.0, 4.0}, 6, 5),
                                           geom::bilinear_tap({-1.0, 2.0}, 6, 5), geom::bilinear_tap({0.0, 0.5}, 6, 5)};
    Rng pr(4);
    out.push_back(grad_case("bilinear_gather", [&] { Rng r = pr; return probe(nn::bilinear_gather(fmap, taps), r); }, {fmap},
                            kOpTol));
    Tensor x = random_param({2, 7, 6}, rng), w = random_param({3, 2, 3, 3}, rng), b = random_param({3}, rng);
    out.push_back(grad_case("conv2d", [&] { Rng r = pr; return probe(nn::conv2d(x, w, b, 2, 1), r); }, {x, w, b}, kOpTol));
    Tensor pred = random_param({4, 3}, rng);
    const auto target = random_values(12, rng);
    const std::vector<std::uint8_t> rows = {1, 0, 1, 1};
    out.push_back(grad_case("masked_mse", [&] { return nn::masked_mse(pred, target, rows); }, {pred}, kOpTol));
  }
  {
    TinyRig rig = make_tiny_rig(7, 2);
    render::Renderer renderer(rig.config, rig.store);
    std::vector<Tensor> params;
    for (const auto& name : rig.store.names()) params.push_back(rig.store.get(name));
    Rng pr(5);
    const auto weights = random_values(rig.rays.size() * 3, pr);
    auto loss = [&] {
      auto views = rig.sources;  // fresh features on every evaluation
      renderer.attach_features(views);
      const auto r = renderer.render_rays(rig.rays, views);
      return nn::sum(nn::mul(r.colors, Tensor::constant(r.colors.shape(), weights)));
    };
    nn::GradCheckOptions opts;
    opts.max_entries = 6;
    opts.floor = 1e-5;
    out.push_back(grad_case("renderer (d=8, K=4, N=2)", loss, params, 1e-3, opts));
  }
  return out;
}

std::vector<CheckResult> invariant_suite() {
  std::vector<CheckResult> out;
  Rng rng(99);
  {
    double worst = 0.0;
    std::uniform_int_distribution<int> dim(1, 16);
    for (int i = 0; i < 20; ++i) {
      const int h = dim(rng), w = dim(rng);
      const int kh = std::uniform_int_distribution<int>(1, h)(rng), kw = std::uniform_int_distribution<int>(1, w)(rng);
      img::Image im(h, w, 1, random_values(static_cast<std::size_t>(h) * w, rng));
      img::Image k(kh, kw, 1, random_values(static_cast<std::size_t>(kh) * kw, rng));
      for (auto mode : {img::Boundary::kZeroPadLinear, img::Boundary::kCircular}) {
        const auto a = img::convolve_fft(im, k, mode);
        const auto b = img::convolve_direct(im, k, mode);
        for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a.data()[j] - b.data()[j]));
      }
    }
    out.push_back({"fft convolution matches direct", worst < 1e-6, fmt("max abs error %.3g", worst)});
  }
  {
    img::Image im(32, 32, 3, random_values(32 * 32 * 3, rng, 0.0, 1.0));
    const auto psf = lensless::synthetic_caustic_psf(15, 3);
    const auto cap = lensless::simulate_capture(im, psf, img::kNoNoise, 0, img::Boundary::kCircular);
    const double p = img::psnr(lensless::wiener_deconvolve(cap, psf, 1e-10), im);
    out.push_back({"wiener inverts a noiseless circular capture", p > 60.0, fmt("psnr %.2f dB", p)});
  }
  {
    const geom::Camera cam{geom::Intrinsics::centered(40, 30, 35.0),
                           geom::Pose::look_at(geom::Vec3(0.4, -0.2, 0.3), geom::Vec3(0.1, 0.2, -3.0))};
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const geom::PixelCoord px{std::uniform_real_distribution<double>(0, 39)(rng),
                                std::uniform_real_distribution<double>(0, 29)(rng)};
      const double depth = std::uniform_real_distribution<double>(0.5, 10.0)(rng);
      const auto p = geom::project(geom::unproject(px, depth, cam), cam);
      worst = std::max({worst, std::abs(p.px.x - px.x), std::abs(p.px.y - px.y), std::abs(p.depth - depth)});
    }
    out.push_back({"project/unproject round trip", worst < 1e-9, fmt("max error %.3g", worst)});
  }
  {
    TinyRig rig = make_tiny_rig(11, 4);
    render::Renderer renderer(rig.config, rig.store);
    renderer.attach_features(rig.sources);
    const auto base = renderer.render_rays(rig.rays, rig.sources).colors;
    double worst = 0.0;
    auto perm = rig.sources;
    for (int i = 0; i < 10; ++i) {
      std::shuffle(perm.begin(), perm.end(), rng);
      const auto c = renderer.render_rays(rig.rays, perm).colors;
      for (std::size_t j = 0; j < c.numel(); ++j) worst = std::max(worst, std::abs(c.values()[j] - base.values()[j]));
    }
    out.push_back({"source order does not change renders", worst < 1e-9, fmt("max drift %.3g", worst)});
  }
  return out;
}

}  // namespace lensnvs::cli
